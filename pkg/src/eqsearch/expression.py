"""Syntax trees for partially and fully derived equations.

A tree is stored as its prefix token sequence (the body), with an implicit
``y`` assignment root above the first token.  The initial tree is therefore
``y`` plus the grammar's start symbol: two nodes, depth 1.

Complete trees compile to a small postfix program (opcode, int-arg,
float-arg arrays) that either the compiled kernel or the pure-Python
fallback executes row by row; see `backend`.

The power operator takes its exponent first: ``^ 0.5 x0`` is sqrt(x0).
Integer-literal exponents are evaluated by repeated multiplication so that
negative bases work; all other exponents go through exp(b * ln a), which
fails for non-positive bases.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import backend
from ._evalpy import (
    FAIL_CAUSES,
    OP_ADD,
    OP_COS,
    OP_DIV,
    OP_LOG,
    OP_MUL,
    OP_POW_GEN,
    OP_POW_INT,
    OP_PUSH_CONST,
    OP_PUSH_LIT,
    OP_PUSH_VAR,
    OP_SIN,
    OP_SUB,
)
from .grammar import OPERATORS, Kind, Symbol, classify_token

_UNARY_OPS = {"sin": OP_SIN, "cos": OP_COS, "log": OP_LOG}
_BINARY_OPS = {"+": OP_ADD, "-": OP_SUB, "*": OP_MUL, "/": OP_DIV}


class EvaluationError(ValueError):
    """Expression evaluation failed on some dataset row.

    Evaluation is all-or-nothing: the first offending row aborts the whole
    call.  `row` is that row's index, `cause` a short reason string.
    """

    def __init__(self, row, cause):
        super().__init__(f"evaluation failed at row {row}: {cause}")
        self.row = row
        self.cause = cause


@dataclass(frozen=True)
class SyntaxTree:
    """Immutable equation tree stored as a prefix token sequence."""

    tokens: tuple  # of Symbol, body only (the y root is implicit)

    def __post_init__(self):
        if not self.tokens:
            raise ValueError("a syntax tree needs at least one body token")

    @property
    def node_count(self):
        # the implicit y root counts
        return len(self.tokens) + 1

    @property
    def depth(self):
        """Edges from the y root to the deepest leaf."""
        best = 0
        level = 1  # first body token hangs below y
        open_slots = []  # (remaining children, level) of unfinished operators
        for sym in self.tokens:
            if open_slots:
                level = open_slots[-1][1] + 1
            best = max(best, level)
            if sym.arity > 0:
                open_slots.append([sym.arity, level])
            else:
                while open_slots:
                    open_slots[-1][0] -= 1
                    if open_slots[-1][0] > 0:
                        break
                    open_slots.pop()
        return best

    @property
    def constant_slots(self):
        """Indices of the fitted-constant leaves, in prefix order."""
        return tuple(i for i, s in enumerate(self.tokens) if s.kind is Kind.CONSTANT)

    @property
    def n_constants(self):
        return sum(1 for s in self.tokens if s.kind is Kind.CONSTANT)

    @property
    def done(self):
        return all(s.kind is not Kind.NONTERMINAL for s in self.tokens)

    def leftmost_nonterminal(self):
        for sym in self.tokens:
            if sym.kind is Kind.NONTERMINAL:
                return sym
        return None

    def leftmost_nonterminal_depth(self):
        """Depth of the expansion target, or None for a complete tree."""
        level = 1
        open_slots = []
        for sym in self.tokens:
            if open_slots:
                level = open_slots[-1][1] + 1
            if sym.kind is Kind.NONTERMINAL:
                return level
            if sym.arity > 0:
                open_slots.append([sym.arity, level])
            else:
                while open_slots:
                    open_slots[-1][0] -= 1
                    if open_slots[-1][0] > 0:
                        break
                    open_slots.pop()
        return None

    def expand_leftmost(self, rhs):
        """Replace the leftmost nonterminal with the symbols of `rhs`."""
        for i, sym in enumerate(self.tokens):
            if sym.kind is Kind.NONTERMINAL:
                return SyntaxTree(self.tokens[:i] + tuple(rhs) + self.tokens[i + 1:])
        raise ValueError("no nonterminal left to expand")

    def __str__(self):
        return " ".join(s.name for s in self.tokens)


@dataclass(frozen=True)
class SearchState:
    """A syntax tree plus the dataset it is being searched against."""

    tree: SyntaxTree
    dataset_ref: str = ""

    @property
    def done(self):
        return self.tree.done

    def expand(self, rhs):
        return SearchState(self.tree.expand_leftmost(rhs), self.dataset_ref)

    @property
    def prefix(self):
        return str(self.tree)


def initial_state(grammar, dataset_ref=""):
    return SearchState(SyntaxTree((grammar.start,)), dataset_ref)


def to_prefix(tree):
    """Token-name list, pre-order, excluding the implicit y root."""
    return [s.name for s in tree.tokens]


def from_prefix(tokens, grammar=None):
    """Rebuild a SyntaxTree from token names.

    Tokens are resolved against `grammar`'s symbol table when given;
    unresolved alphabetic tokens become nonterminals, so partially derived
    trees round-trip too.
    """
    symbols = []
    for name in tokens:
        if grammar is not None and name in grammar.symbols:
            symbols.append(grammar.symbols[name])
            continue
        sym = classify_token(name)
        if sym is None:
            sym = Symbol(Kind.NONTERMINAL, name)
        symbols.append(sym)
    tree = SyntaxTree(tuple(symbols))
    _subtree_end(tree.tokens, 0)  # arity check
    return tree


def metrics(tree):
    return {
        "node_count": tree.node_count,
        "depth": tree.depth,
        "n_constants": tree.n_constants,
    }


def _subtree_end(tokens, start):
    """Index one past the prefix subtree rooted at `start`."""
    need = 1
    i = start
    while need > 0:
        if i >= len(tokens):
            raise ValueError("incomplete prefix sequence")
        need += tokens[i].arity - 1
        i += 1
    return i


@dataclass(frozen=True)
class Program:
    """Postfix opcode program for the evaluation backends."""

    codes: np.ndarray  # int64
    iargs: np.ndarray  # int64
    dargs: np.ndarray  # float64
    n_constants: int = 0

    def __len__(self):
        return len(self.codes)


def compile_tree(tree):
    """Lower a complete tree to a postfix Program."""
    if not tree.done:
        raise ValueError("cannot compile a tree with unexpanded nonterminals")
    codes, iargs, dargs = [], [], []
    const_counter = [0]

    def emit(code, iarg=0, darg=0.0):
        codes.append(code)
        iargs.append(iarg)
        dargs.append(darg)

    def compile_node(i):
        sym = tree.tokens[i]
        if sym.kind is Kind.VARIABLE:
            emit(OP_PUSH_VAR, sym.index)
            return i + 1
        if sym.kind is Kind.CONSTANT:
            emit(OP_PUSH_CONST, const_counter[0])
            const_counter[0] += 1
            return i + 1
        if sym.kind is Kind.LITERAL:
            emit(OP_PUSH_LIT, 0, sym.value)
            return i + 1
        # operator
        if sym.name in _UNARY_OPS:
            end = compile_node(i + 1)
            emit(_UNARY_OPS[sym.name])
            return end
        if sym.name in _BINARY_OPS:
            mid = compile_node(i + 1)
            end = compile_node(mid)
            emit(_BINARY_OPS[sym.name])
            return end
        if sym.name == "^":
            # exponent is the first child, base the second
            exp_sym = tree.tokens[i + 1]
            mid = _subtree_end(tree.tokens, i + 1)
            if exp_sym.kind is Kind.LITERAL and float(exp_sym.value).is_integer():
                end = compile_node(mid)  # base only
                emit(OP_POW_INT, int(exp_sym.value))
                return end
            compile_node(i + 1)  # exponent
            end = compile_node(mid)  # base on top of stack
            emit(OP_POW_GEN)
            return end
        raise ValueError(f"cannot compile symbol {sym.name!r}")

    end = compile_node(0)
    if end != len(tree.tokens):
        raise ValueError("trailing tokens after the expression root")
    return Program(
        codes=np.asarray(codes, dtype=np.int64),
        iargs=np.asarray(iargs, dtype=np.int64),
        dargs=np.asarray(dargs, dtype=np.float64),
        n_constants=const_counter[0],
    )


def evaluate(tree, xs, constants=()):
    """Row-wise evaluation of a complete tree.

    Raises EvaluationError on the first row with a domain error, division by
    zero, overflow (|value| > 1e300) or non-finite intermediate; no partial
    results are ever returned.
    """
    return run_program(compile_tree(tree), xs, constants)


def run_program(program, xs, constants=()):
    xs = np.ascontiguousarray(xs, dtype=np.float64)
    if xs.ndim == 1:
        xs = xs.reshape(-1, 1)
    constants = np.ascontiguousarray(constants, dtype=np.float64)
    if len(constants) != program.n_constants:
        raise ValueError(
            f"expected {program.n_constants} constants, got {len(constants)}"
        )
    y, fail_row, fail_code = backend.execute(
        program.codes, program.iargs, program.dargs, xs, constants
    )
    if fail_code != 0:
        raise EvaluationError(fail_row, FAIL_CAUSES[fail_code])
    return y
