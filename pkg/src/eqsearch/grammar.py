"""Context-free grammars that define the equation search space.

A grammar file holds one production per line:

    weight lhs -> rhs-token rhs-token ...

The right-hand side is written in prefix notation.  A ``|`` splits a line
into several alternatives that all carry the line's weight, ``#`` starts a
comment, and an optional ``start: Name`` header overrides the default start
symbol (the first left-hand side that appears in the file).

Rule ids are 0-based and equal the rule's position after desugaring the
``|`` alternatives, so the rule id doubles as the action index of the
search.  Reports may display them 1-based.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:
    from .expression import SearchState

#: Operator arities.  Everything else has arity 0.
OPERATORS = {"+": 2, "-": 2, "*": 2, "/": 2, "^": 2, "sin": 1, "cos": 1, "log": 1}

_VARIABLE_RE = re.compile(r"^x(\d+)$")


class Kind(enum.Enum):
    NONTERMINAL = "nonterminal"
    OPERATOR = "terminal-operator"
    VARIABLE = "terminal-variable"
    CONSTANT = "terminal-constant-slot"
    LITERAL = "terminal-literal"


@dataclass(frozen=True)
class Symbol:
    kind: Kind
    name: str
    arity: int = 0
    value: float = 0.0  # literals only
    index: int = -1  # variables only

    def __repr__(self):
        return f"Symbol({self.name!r})"


class GrammarError(ValueError):
    """Raised for malformed or inconsistent grammar files."""

    def __init__(self, message, line=None, column=None):
        loc = ""
        if line is not None:
            loc = f" (line {line}" + (f", column {column}" if column is not None else "") + ")"
        super().__init__(message + loc)
        self.line = line
        self.column = column


class IllegalActionError(ValueError):
    """Raised when a production rule is applied to a state where it is not legal."""


@dataclass(frozen=True)
class ProductionRule:
    id: int
    lhs: Symbol
    rhs: tuple
    weight: float

    def __str__(self):
        return f"[{self.weight:g}] {self.lhs.name} -> " + " ".join(s.name for s in self.rhs)


@dataclass(frozen=True)
class Grammar:
    symbols: dict
    rules: tuple
    start: Symbol
    rule_index: dict  # lhs name -> tuple of rule ids

    @property
    def n_rules(self):
        return len(self.rules)

    @property
    def n_variables(self):
        """Number of input variables, ``max(index) + 1`` over variable symbols."""
        idx = [s.index for s in self.symbols.values() if s.kind is Kind.VARIABLE]
        return max(idx) + 1 if idx else 0

    @property
    def nonterminals(self):
        return [s for s in self.symbols.values() if s.kind is Kind.NONTERMINAL]

    def rules_for(self, nonterminal):
        name = nonterminal.name if isinstance(nonterminal, Symbol) else nonterminal
        return [self.rules[i] for i in self.rule_index[name]]


def classify_token(name, nonterminal_names=()):
    """Map a token string to a Symbol.

    Tokens that are neither operators, variables (``x<k>``), the constant
    slot ``c``, numbers, nor members of `nonterminal_names` are rejected.
    """
    if name in nonterminal_names:
        return Symbol(Kind.NONTERMINAL, name)
    if name in OPERATORS:
        return Symbol(Kind.OPERATOR, name, arity=OPERATORS[name])
    if name == "c":
        return Symbol(Kind.CONSTANT, name)
    m = _VARIABLE_RE.match(name)
    if m:
        return Symbol(Kind.VARIABLE, name, index=int(m.group(1)))
    try:
        value = float(name)
    except ValueError:
        return None
    if not np.isfinite(value):
        return None
    return Symbol(Kind.LITERAL, name, value=value)


def _check_prefix_forest(symbols):
    """Validate that `symbols` is a complete forest of prefix subtrees.

    Returns the number of trees.  Raises ValueError when an operator is left
    with missing children at the end of the sequence.
    """
    open_slots = []  # remaining child counts of unfinished operators
    trees = 0
    for sym in symbols:
        if not open_slots:
            trees += 1
        else:
            open_slots[-1] -= 1
            while open_slots and open_slots[-1] == 0:
                open_slots.pop()
                if open_slots:
                    open_slots[-1] -= 1
        if sym.arity > 0:
            open_slots.append(sym.arity)
    # unwind trailing zero-arity completions
    while open_slots and open_slots[-1] == 0:
        open_slots.pop()
    if open_slots:
        raise ValueError("incomplete prefix sequence")
    return trees


def parse_grammar(text):
    """Parse and validate a grammar file, returning a Grammar."""
    raw = []  # (line_no, weight, lhs_name, [rhs token names])
    start_name = None
    lhs_order = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("start:"):
            start_name = line[len("start:"):].strip()
            if not start_name:
                raise GrammarError("empty start symbol", line=line_no)
            continue
        tokens = line.split()
        if len(tokens) < 4 or tokens[2] != "->":
            raise GrammarError("expected 'weight lhs -> rhs...'", line=line_no, column=1)
        try:
            weight = float(tokens[0])
        except ValueError:
            raise GrammarError(f"bad weight {tokens[0]!r}", line=line_no, column=1) from None
        if not 0.0 < weight <= 1.0:
            raise GrammarError(f"weight {weight} outside (0, 1]", line=line_no, column=1)
        lhs_name = tokens[1]
        if lhs_name not in lhs_order:
            lhs_order.append(lhs_name)
        alternative = []
        for tok in tokens[3:]:
            if tok == "|":
                if not alternative:
                    raise GrammarError("empty alternative", line=line_no)
                raw.append((line_no, weight, lhs_name, alternative))
                alternative = []
            else:
                alternative.append(tok)
        if not alternative:
            raise GrammarError("empty right-hand side", line=line_no)
        raw.append((line_no, weight, lhs_name, alternative))

    if not raw:
        raise GrammarError("grammar has no production rules")
    nonterminal_names = set(lhs_order)
    if start_name is None:
        start_name = lhs_order[0]
    if start_name not in nonterminal_names:
        raise GrammarError(f"start symbol {start_name!r} has no rules")

    symbols = {}
    for name in lhs_order:
        if classify_token(name) is not None and classify_token(name).kind is not Kind.NONTERMINAL:
            raise GrammarError(f"left-hand side {name!r} clashes with a terminal token")
        symbols[name] = Symbol(Kind.NONTERMINAL, name)

    rules = []
    for line_no, weight, lhs_name, rhs_names in raw:
        rhs = []
        for col, tok in enumerate(rhs_names):
            sym = classify_token(tok, nonterminal_names)
            if sym is None:
                raise GrammarError(f"unknown symbol {tok!r}", line=line_no, column=col + 1)
            if sym.name not in symbols:
                symbols[sym.name] = sym
            rhs.append(symbols[sym.name])
        try:
            _check_prefix_forest(rhs)
        except ValueError:
            raise GrammarError(
                f"right-hand side {' '.join(rhs_names)!r} is not a valid prefix sequence",
                line=line_no,
            ) from None
        rules.append(ProductionRule(len(rules), symbols[lhs_name], tuple(rhs), weight))

    rule_index = {}
    for rule in rules:
        rule_index.setdefault(rule.lhs.name, []).append(rule.id)
    rule_index = {k: tuple(v) for k, v in rule_index.items()}

    for name, ids in rule_index.items():
        total = sum(rules[i].weight for i in ids)
        if abs(total - 1.0) > 1e-9:
            raise GrammarError(f"weights for {name!r} sum to {total:.6g}, expected 1")

    # every nonterminal used on a rhs must have rules
    for rule in rules:
        for sym in rule.rhs:
            if sym.kind is Kind.NONTERMINAL and sym.name not in rule_index:
                raise GrammarError(f"nonterminal {sym.name!r} has no production rules")

    # reachability from the start symbol
    reachable = {start_name}
    frontier = [start_name]
    while frontier:
        name = frontier.pop()
        for i in rule_index[name]:
            for sym in rules[i].rhs:
                if sym.kind is Kind.NONTERMINAL and sym.name not in reachable:
                    reachable.add(sym.name)
                    frontier.append(sym.name)
    unreachable = nonterminal_names - reachable
    if unreachable:
        raise GrammarError(f"unreachable nonterminal(s): {', '.join(sorted(unreachable))}")

    return Grammar(
        symbols=symbols,
        rules=tuple(rules),
        start=symbols[start_name],
        rule_index=rule_index,
    )


def load_grammar(path):
    with open(path, encoding="utf-8") as fh:
        return parse_grammar(fh.read())


def rhs_extra_depth(rhs):
    """Levels the right-hand side adds below the nonterminal it replaces."""
    deepest = 0
    level = 0
    open_slots = []
    for sym in rhs:
        if open_slots:
            level = open_slots[-1][1] + 1
        deepest = max(deepest, level)
        if sym.arity > 0:
            open_slots.append([sym.arity, level])
        else:
            while open_slots:
                open_slots[-1][0] -= 1
                if open_slots[-1][0] > 0:
                    break
                open_slots.pop()
    return deepest


def legal_actions(grammar, state, max_nodes=25, max_depth=None):
    """Boolean mask over rule ids that may be applied to `state`.

    A rule is legal when its left-hand side is the expansion target (the
    leftmost nonterminal), applying it keeps the node count within
    `max_nodes`, and, when `max_depth` is given, the expansion does not
    immediately push a node below that depth.  Terminal states yield an
    all-false mask.
    """
    mask = np.zeros(grammar.n_rules, dtype=bool)
    target = state.tree.leftmost_nonterminal()
    if target is None:
        return mask
    node_count = state.tree.node_count
    target_depth = (
        state.tree.leftmost_nonterminal_depth() if max_depth is not None else 0
    )
    for i in grammar.rule_index[target.name]:
        rhs = grammar.rules[i].rhs
        if node_count + len(rhs) - 1 > max_nodes:
            continue
        if max_depth is not None and target_depth + rhs_extra_depth(rhs) > max_depth:
            continue
        mask[i] = True
    return mask


def apply_rule(grammar, state, rule_id, max_nodes=None):
    """Expand the leftmost nonterminal of `state` with rule `rule_id`.

    Returns a new SearchState; the input state is unchanged.
    """
    rule = grammar.rules[rule_id]
    target = state.tree.leftmost_nonterminal()
    if target is None or target.name != rule.lhs.name:
        raise IllegalActionError(
            f"rule {rule_id} expands {rule.lhs.name!r}, "
            f"but the expansion target is {target.name if target else None!r}"
        )
    if max_nodes is not None and state.tree.node_count + len(rule.rhs) - 1 > max_nodes:
        raise IllegalActionError(f"rule {rule_id} would exceed {max_nodes} nodes")
    return state.expand(rule.rhs)


def sample_rule(grammar, nonterminal, rng):
    """Draw a rule id for `nonterminal` proportionally to the rule weights."""
    ids = grammar.rule_index[nonterminal.name if isinstance(nonterminal, Symbol) else nonterminal]
    if len(ids) == 1:
        return ids[0]
    weights = np.array([grammar.rules[i].weight for i in ids])
    return ids[rng.choice(len(ids), p=weights / weights.sum())]
