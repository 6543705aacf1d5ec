"""PUCT Monte-Carlo tree search over grammar derivations.

Two selection variants:

* classic: standard PUCT descent; revisiting terminal states re-reads
  their cached reward.
* amex: the PUCT argmax over all edges (a_max) still receives the visit
  count, but the walk follows the best edge whose subtree is not yet fully
  explored (a_select).  Each terminal state is therefore rewarded exactly
  once, and the classic visit-count identity |S| = sum |Ssa| + 1 is
  preserved.  A value is only propagated above a level where the two
  choices differ if it beats the current estimate of a_max's child.

Two backprop flavors: mean (running average) and max (risk seeking: a
single good leaf dominates its branch).

Every simulation runs to a terminal or constraint-violating state; the
backpropagated value is that state's reward, discounted per level.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .grammar import apply_rule, legal_actions


@dataclass(frozen=True)
class MctsConfig:
    variant: str = "classic"  # classic | amex
    backprop: str = "mean"  # mean | max
    c_puct: float = 10.0
    sim_init: int = 250
    discount: float = 1.0
    max_nodes: int = 25  # node cap used for action legality
    max_depth: int | None = 10  # depth cap used for action legality

    def __post_init__(self):
        if self.variant not in ("classic", "amex"):
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.backprop not in ("mean", "max"):
            raise ValueError(f"unknown backprop {self.backprop!r}")
        if self.c_puct <= 0:
            raise ValueError("c_puct must be > 0")
        if self.sim_init < 10:
            raise ValueError("sim_init must be >= 10")
        if not 0.0 < self.discount <= 1.0:
            raise ValueError("discount must be in (0, 1]")


def sim_schedule(sim_init, tree_node_count):
    """Simulations for an outer step, decaying with the outer tree's size.

    max(floor(sim_init * 4^-(n - 2)), 10); the initial tree has 2 nodes.
    """
    if tree_node_count < 2:
        raise ValueError("tree_node_count must be >= 2")
    return max(int(sim_init * 4.0 ** -(tree_node_count - 2)), 10)


class SearchNode:
    """One state of the derivation with its per-edge statistics."""

    __slots__ = (
        "state", "visits", "terminal_reward", "legal", "priors",
        "q", "n", "q_updates", "fully", "children",
    )

    def __init__(self, state):
        self.state = state
        self.visits = 1  # the creation visit
        self.terminal_reward = None
        self.legal = None  # lazily expanded
        self.priors = None
        self.q = None
        self.n = None
        self.q_updates = None
        self.fully = None
        self.children = {}

    @property
    def expanded(self):
        return self.legal is not None

    @property
    def is_terminal(self):
        return self.terminal_reward is not None

    def edge_stats(self, action):
        return {
            "q": float(self.q[action]),
            "n": int(self.n[action]),
            "prior": float(self.priors[action]),
            "fully_explored": bool(self.fully[action]),
        }


def puct_score(node, action, c):
    """Q(s,a) + c * P(s,a) * sqrt(|S| + 1) / (|Ssa| + 1)."""
    return float(
        node.q[action]
        + c * node.priors[action] * math.sqrt(node.visits + 1) / (node.n[action] + 1)
    )


def _scores(node, c, mask):
    scores = node.q + c * node.priors * (
        math.sqrt(node.visits + 1) / (node.n + 1.0)
    )
    scores = np.where(mask, scores, -np.inf)
    return scores


def select_classic(node, c):
    return int(np.argmax(_scores(node, c, node.legal)))  # ties: lowest rule id


def amex_select(node, c):
    """(a_select, a_max): walk a_select, count a_max."""
    a_max = int(np.argmax(_scores(node, c, node.legal)))
    open_mask = node.legal & ~node.fully
    if not open_mask.any():
        raise FullyExploredError(node)
    a_select = int(np.argmax(_scores(node, c, open_mask)))
    return a_select, a_max


class FullyExploredError(RuntimeError):
    def __init__(self, node):
        super().__init__("all edges fully explored")
        self.node = node


@dataclass
class MctsResult:
    distribution: np.ndarray  # root edge visits normalized over legal actions
    sims_run: int
    explored_states: int
    terminals_found: int
    best_reward: float
    best_state: object  # SearchState or None
    root: SearchNode
    fully_explored: bool
    solved_at: int | None  # 1-based sim index that hit stop_reward, if any

    def as_record(self, wall_time_ms=None):
        rec = {
            "sims_run": self.sims_run,
            "explored_states": self.explored_states,
            "terminals_found": self.terminals_found,
            "best_reward": self.best_reward,
            "best_equation_prefix": (
                self.best_state.prefix if self.best_state is not None else None
            ),
        }
        if wall_time_ms is not None:
            rec["wall_time_ms"] = wall_time_ms
        return rec


def run_mcts(root_state, guidance, config, n_sims, *, grammar, reward_fn,
             stop_reward=None, root_node=None):
    """Run `n_sims` full-path simulations from `root_state`.

    `guidance` is None for uniform priors or a callable
    (state, legal_mask) -> prior vector over all rule ids.
    `reward_fn(state)` must return the terminal/violation reward for
    complete or bound-violating states and 0 for viable incomplete ones.

    If `stop_reward` is set, the search stops early once a terminal reward
    exceeds it; `solved_at` records the 1-based simulation index.

    `root_node` continues the search from an existing SearchNode (tree
    reuse): its statistics and subtree are kept and mutated in place.
    `explored_states` then counts only the states created by this call.
    """
    if root_state.done:
        raise ValueError("root state is already a complete equation")
    search = _Search(guidance, config, grammar, reward_fn)
    if root_node is not None:
        root = root_node
    else:
        root = search.make_node(root_state)
    if root.is_terminal:
        raise ValueError("root state violates the search constraints")

    sims_run = 0
    solved_at = None
    for sim in range(1, n_sims + 1):
        sims_run = sim
        reward = search.simulate(root)
        if stop_reward is not None and reward is not None and reward > stop_reward:
            solved_at = sim
            break

    legal_total = root.n[root.legal].sum() if root.expanded else 0
    if root.expanded and legal_total > 0:
        distribution = np.where(root.legal, root.n, 0).astype(np.float64)
        distribution /= distribution.sum()
    else:
        distribution = np.zeros(grammar.n_rules)

    return MctsResult(
        distribution=distribution,
        sims_run=sims_run,
        explored_states=search.explored_states,
        terminals_found=search.terminals_found,
        best_reward=search.best_reward,
        best_state=search.best_state,
        root=root,
        fully_explored=search.root_fully_explored(root),
        solved_at=solved_at,
    )


class _Search:
    def __init__(self, guidance, config, grammar, reward_fn):
        self.guidance = guidance
        self.config = config
        self.grammar = grammar
        self.reward_fn = reward_fn
        self.explored_states = 0
        self.terminals_found = 0
        self.best_reward = -np.inf
        self.best_state = None

    def make_node(self, state):
        node = SearchNode(state)
        self.explored_states += 1
        if state.done:
            node.terminal_reward = self._terminal(state)
        else:
            r = self.reward_fn(state)
            if r != 0.0:  # depth/constant/node bound violated
                node.terminal_reward = r
        return node

    def _terminal(self, state):
        reward = self.reward_fn(state)
        self.terminals_found += 1
        if reward > self.best_reward:
            self.best_reward = reward
            self.best_state = state
        return reward

    def expand(self, node):
        mask = legal_actions(self.grammar, node.state, self.config.max_nodes,
                             self.config.max_depth)
        if not mask.any():
            # dead end: no completion is reachable from here
            node.terminal_reward = -1.0
            return
        n_rules = self.grammar.n_rules
        if self.guidance is None:
            priors = mask / mask.sum()
        else:
            priors = np.asarray(self.guidance(node.state, mask), dtype=np.float64)
            priors = np.where(mask, priors, 0.0)
            total = priors.sum()
            priors = priors / total if total > 0 else mask / mask.sum()
        node.legal = mask
        node.priors = priors
        node.q = np.zeros(n_rules)
        node.n = np.zeros(n_rules, dtype=np.int64)
        node.q_updates = np.zeros(n_rules, dtype=np.int64)
        node.fully = np.zeros(n_rules, dtype=bool)

    def child(self, node, action):
        child = node.children.get(action)
        if child is None:
            child = self.make_node(
                apply_rule(self.grammar, node.state, action, self.config.max_nodes)
            )
            node.children[action] = child
        return child

    def root_fully_explored(self, root):
        return root.expanded and bool((root.fully | ~root.legal).all())

    def simulate(self, root):
        """One full-path simulation.  Returns the leaf reward, or None for
        an AmEx count-only pass over an already fully explored tree."""
        if self.config.variant == "amex":
            return self._simulate_amex(root)
        return self._simulate_classic(root)

    def _simulate_classic(self, root):
        path = []
        node = root
        while True:
            if node.is_terminal:
                value = node.terminal_reward
                break
            if not node.expanded:
                self.expand(node)
                if node.is_terminal:  # dead end found at expansion
                    value = node.terminal_reward
                    break
            action = select_classic(node, self.config.c_puct)
            path.append((node, action))
            node = self.child(node, action)
        self._backprop_classic(path, value)
        return value

    def _backprop_classic(self, path, value):
        v = value
        for node, action in reversed(path):
            node.visits += 1
            node.n[action] += 1
            node.q_updates[action] += 1
            self._update_q(node, action, v)
            child = node.children[action]
            if child.is_terminal or (
                child.expanded and bool((child.fully | ~child.legal).all())
            ):
                node.fully[action] = True
            v *= self.config.discount

    def _update_q(self, node, action, value):
        if node.q_updates[action] == 1:
            node.q[action] = value
        elif self.config.backprop == "mean":
            node.q[action] += (value - node.q[action]) / node.q_updates[action]
        else:
            node.q[action] = max(node.q[action], value)

    def _child_estimate(self, node, action):
        """Current value estimate of the child behind `action`: its terminal
        reward, or its best updated edge Q."""
        child = node.children.get(action)
        if child is None:
            return 0.0
        if child.is_terminal:
            return child.terminal_reward
        if child.expanded and (child.q_updates > 0).any():
            return float(np.max(child.q[child.q_updates > 0]))
        return 0.0

    def _simulate_amex(self, root):
        while True:
            if self.root_fully_explored(root):
                self._count_only_pass(root)
                return None
            path = []  # (node, a_select, a_max)
            node = root
            stale = False
            while True:
                if node.is_terminal:
                    value = node.terminal_reward
                    break
                if not node.expanded:
                    self.expand(node)
                    if node.is_terminal:
                        value = node.terminal_reward
                        break
                if node is not root and not (node.legal & ~node.fully).any():
                    # closed below a reused root: the flag never propagated
                    # to this parent, so record it and restart the walk
                    parent, a_select, _ = path[-1]
                    parent.fully[a_select] = True
                    stale = True
                    break
                a_select, a_max = amex_select(node, self.config.c_puct)
                path.append((node, a_select, a_max))
                node = self.child(node, a_select)
            if stale:
                continue
            self._backprop_amex(path, value)
            return value

    def _backprop_amex(self, path, value):
        v = value
        propagate = True
        for node, a_select, a_max in reversed(path):
            node.visits += 1
            node.n[a_max] += 1
            if propagate:
                node.q_updates[a_select] += 1
                self._update_q(node, a_select, v)
            if a_select != a_max and propagate:
                # suppress updates above unless v beats a_max's child
                if not v > self._child_estimate(node, a_max):
                    propagate = False
            child = node.children[a_select]
            if child.is_terminal or (
                child.expanded and bool((child.fully | ~child.legal).all())
            ):
                node.fully[a_select] = True
            v *= self.config.discount

    def _count_only_pass(self, root):
        """Keep classic-equivalent visit counts once everything is explored:
        walk the PUCT-argmax chain bumping counts, without re-rewarding."""
        node = root
        while node.expanded and not node.is_terminal:
            a_max = int(np.argmax(_scores(node, self.config.c_puct, node.legal)))
            node.visits += 1
            node.n[a_max] += 1
            node = node.children.get(a_max)
            if node is None:
                break
