"""Training-problem generation: sample a tree from the grammar, then sample
a dataset the tree can actually be evaluated on.

Constraints follow the data-generation protocol: trees stay below the node
cap with a bounded number of constants and bounded depth; constant values
come from [0.5, 5]; per-variable bounds are drawn inside [-5, 5] with a
minimum width, and a variable that feeds a logarithm gets its lower bound
forced to 0.  If evaluating the tree on the sampled rows fails, the whole
draw (bounds, constants, rows) is restarted.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import TabularDataset
from .expression import EvaluationError, SyntaxTree, _subtree_end, evaluate
from .grammar import Kind, sample_rule


class GenerationError(RuntimeError):
    """Retry budget exhausted while sampling a tree or dataset."""


@dataclass(frozen=True)
class GenConstraints:
    max_nodes: int = 25  # strict: node_count < max_nodes
    max_constants: int = 5
    max_depth: int = 10
    const_range: tuple = (0.5, 5.0)
    x_bounds: tuple = (-5.0, 5.0)
    min_range_width: float = 2.0
    n_rows: int = 100
    max_retries: int = 100

    def __post_init__(self):
        if self.n_rows < 2:
            raise ValueError("n_rows must be >= 2")
        if self.x_bounds[1] - self.x_bounds[0] < self.min_range_width:
            raise ValueError("x_bounds narrower than min_range_width")


@dataclass(frozen=True)
class Problem:
    tree: SyntaxTree
    dataset: TabularDataset
    constants: np.ndarray


def _violates(tree, constraints):
    return (
        tree.node_count >= constraints.max_nodes
        or tree.n_constants > constraints.max_constants
        or tree.depth > constraints.max_depth
    )


def sample_tree(grammar, constraints=GenConstraints(), rng=None):
    """Sample a complete tree via the grammar's rule weights.

    Derivations that violate a constraint are abandoned and retried; node
    count, constant count, and depth only grow, so partial trees can be
    rejected early.
    """
    rng = rng if rng is not None else np.random.default_rng()
    for _ in range(constraints.max_retries):
        tree = SyntaxTree((grammar.start,))
        while True:
            if _violates(tree, constraints):
                break
            target = tree.leftmost_nonterminal()
            if target is None:
                return tree
            rule = grammar.rules[sample_rule(grammar, target, rng)]
            tree = tree.expand_leftmost(rule.rhs)
    raise GenerationError(
        f"no tree satisfying the constraints in {constraints.max_retries} tries"
    )


def _log_variables(tree):
    """Indices of variables appearing anywhere inside a log subtree."""
    inside = set()
    for i, sym in enumerate(tree.tokens):
        if sym.name == "log" and sym.kind is Kind.OPERATOR:
            end = _subtree_end(tree.tokens, i + 1)
            for j in range(i + 1, end):
                if tree.tokens[j].kind is Kind.VARIABLE:
                    inside.add(tree.tokens[j].index)
    return inside


def sample_dataset(tree, constraints=GenConstraints(), rng=None, id="", n_vars=None):
    """Sample (bounds, constants, rows) for a complete tree until the tree
    evaluates cleanly on every row."""
    rng = rng if rng is not None else np.random.default_rng()
    if not tree.done:
        raise ValueError("tree must be complete")
    if n_vars is None:
        var_idx = [s.index for s in tree.tokens if s.kind is Kind.VARIABLE]
        n_vars = max(var_idx) + 1 if var_idx else 1
    log_vars = _log_variables(tree)
    lo_all, hi_all = constraints.x_bounds
    c_lo, c_hi = constraints.const_range

    for _ in range(constraints.max_retries):
        bounds = []
        for i in range(n_vars):
            for _ in range(constraints.max_retries):
                lo, hi = sorted(rng.uniform(lo_all, hi_all, size=2))
                if i in log_vars:
                    lo = 0.0
                if hi - lo >= constraints.min_range_width:
                    break
            else:
                raise GenerationError("could not draw wide-enough variable bounds")
            bounds.append((lo, hi))
        constants = rng.uniform(c_lo, c_hi, size=tree.n_constants)
        xs = np.column_stack(
            [rng.uniform(lo, hi, size=constraints.n_rows) for lo, hi in bounds]
        )
        try:
            y = evaluate(tree, xs, constants)
        except EvaluationError:
            continue
        ds = TabularDataset(id=id, xs=xs, y=y, source_skeleton=str(tree))
        return ds, constants
    raise GenerationError(
        f"no evaluable dataset for {tree} in {constraints.max_retries} tries"
    )


def generate_problems(grammar, n, constraints=GenConstraints(), rng=None):
    """Generate `n` independent (tree, dataset) problems.

    Equations may repeat across problems, but every dataset is a fresh
    draw.  A fixed rng yields an identical problem list.
    """
    rng = rng if rng is not None else np.random.default_rng()
    problems = []
    for i in range(n):
        tree = sample_tree(grammar, constraints, rng)
        ds, constants = sample_dataset(
            tree, constraints, rng, id=f"problem_{i:04d}"
        )
        problems.append(Problem(tree=tree, dataset=ds, constants=constants))
    return problems
