"""Inner-search tests: PUCT, Classic and AmEx variants, backpropagation."""

import math

import numpy as np
import pytest

from eqsearch import packaged_grammar
from eqsearch.expression import initial_state
from eqsearch.grammar import apply_rule, legal_actions, parse_grammar
from eqsearch.mcts import (
    MctsConfig,
    SearchNode,
    puct_score,
    run_mcts,
    select_classic,
    sim_schedule,
)

TWO_LEAF = parse_grammar("0.5 S -> x0\n0.5 S -> x1")
SUM_TREES = parse_grammar("0.5 S -> + S S\n0.25 S -> x0\n0.25 S -> x1")


def table_reward(grammar, table, default=-1.0):
    """Reward from a prefix -> value table; incomplete states score 0."""

    def fn(state):
        if not state.done:
            return 0.0
        return table.get(state.prefix, default)

    return fn


def enumerate_terminals(grammar, config):
    """All complete prefixes reachable under the legality mask."""
    out = []
    stack = [initial_state(grammar, "d")]
    while stack:
        state = stack.pop()
        if state.done:
            out.append(state.prefix)
            continue
        mask = legal_actions(grammar, state, config.max_nodes, config.max_depth)
        for rid in np.flatnonzero(mask):
            stack.append(apply_rule(grammar, state, rid))
    return out


def collect_nodes(root):
    nodes = [root]
    seen = 0
    while seen < len(nodes):
        node = nodes[seen]
        seen += 1
        nodes.extend(node.children.values())
    return nodes


class TestSchedule:
    def test_values(self):
        assert [sim_schedule(160, n) for n in (2, 3, 5, 6)] == [160, 40, 10, 10]

    def test_floor_at_ten(self):
        assert sim_schedule(250, 12) == 10

    def test_rejects_tiny_tree(self):
        with pytest.raises(ValueError):
            sim_schedule(160, 1)


class TestConfig:
    def test_bad_variant(self):
        with pytest.raises(ValueError):
            MctsConfig(variant="alpha")

    def test_bad_backprop(self):
        with pytest.raises(ValueError):
            MctsConfig(backprop="median")

    def test_bad_cpuct_and_discount(self):
        with pytest.raises(ValueError):
            MctsConfig(c_puct=0)
        with pytest.raises(ValueError):
            MctsConfig(discount=0.0)


class TestPuct:
    def make_node(self, n_rules, rng):
        node = SearchNode(initial_state(TWO_LEAF, "d"))
        node.visits = int(rng.integers(1, 500))
        node.legal = np.ones(n_rules, dtype=bool)
        node.priors = rng.dirichlet(np.ones(n_rules))
        node.q = rng.uniform(-1, 1, n_rules)
        node.n = rng.integers(0, 50, n_rules)
        node.fully = np.zeros(n_rules, dtype=bool)
        return node

    def test_formula(self):
        rng = np.random.default_rng(0)
        node = self.make_node(4, rng)
        for a in range(4):
            expected = node.q[a] + 2.5 * node.priors[a] * math.sqrt(
                node.visits + 1
            ) / (node.n[a] + 1)
            assert puct_score(node, a, 2.5) == pytest.approx(expected, rel=1e-12)

    def test_selection_matches_brute_force(self):
        rng = np.random.default_rng(1)
        for _ in range(2000):
            node = self.make_node(int(rng.integers(2, 8)), rng)
            scores = [puct_score(node, a, 10.0) for a in range(len(node.q))]
            assert select_classic(node, 10.0) == int(np.argmax(scores))

    def test_zero_exploration_degenerates_to_argmax_q(self):
        rng = np.random.default_rng(2)
        node = self.make_node(5, rng)
        assert select_classic(node, 1e-12) == int(np.argmax(node.q))

    def test_ties_break_to_lowest_rule_id(self):
        node = self.make_node(3, np.random.default_rng(3))
        node.q[:] = 0.0
        node.priors[:] = 1 / 3
        node.n[:] = 7
        assert select_classic(node, 10.0) == 0


class TestRunMcts:
    def test_two_leaf_space_prefers_matching_variable(self):
        reward = table_reward(TWO_LEAF, {"x0": 1.0, "x1": -0.5})
        result = run_mcts(
            initial_state(TWO_LEAF, "d"), None, MctsConfig(), 10,
            grammar=TWO_LEAF, reward_fn=reward,
        )
        assert result.root.q[0] > result.root.q[1]
        assert result.distribution[0] >= 0.5

    def test_max_backprop_propagates_single_excellent_leaf(self):
        table = {"+ x0 x0": 1.0}
        cfg = MctsConfig(variant="amex", backprop="max", max_nodes=7)
        result = run_mcts(
            initial_state(SUM_TREES, "d"), None, cfg, 40,
            grammar=SUM_TREES, reward_fn=table_reward(SUM_TREES, table),
        )
        assert result.root.q[0] == 1.0
        assert result.best_reward == 1.0

    def test_mean_backprop_tracks_running_mean(self):
        table = {"x0": 0.8, "x1": 0.2}
        result = run_mcts(
            initial_state(TWO_LEAF, "d"), None,
            MctsConfig(backprop="mean"), 9,
            grammar=TWO_LEAF, reward_fn=table_reward(TWO_LEAF, table),
        )
        # classic MCTS revisits the better leaf; its Q stays the leaf value
        assert result.root.q[0] == pytest.approx(0.8)

    def test_deterministic(self):
        reward = table_reward(SUM_TREES, {"+ x0 x1": 0.9}, default=0.1)
        cfg = MctsConfig(variant="amex", backprop="max", max_nodes=9)
        runs = [
            run_mcts(initial_state(SUM_TREES, "d"), None, cfg, 60,
                     grammar=SUM_TREES, reward_fn=reward)
            for _ in range(2)
        ]
        np.testing.assert_array_equal(runs[0].distribution, runs[1].distribution)
        assert runs[0].explored_states == runs[1].explored_states

    def test_stop_reward_records_sim_index(self):
        reward = table_reward(TWO_LEAF, {"x0": 1.0, "x1": 0.0})
        result = run_mcts(
            initial_state(TWO_LEAF, "d"), None, MctsConfig(), 10,
            grammar=TWO_LEAF, reward_fn=reward, stop_reward=0.999,
        )
        assert result.solved_at == 1  # first sim walks the lowest rule id
        assert result.sims_run == 1

    def test_guidance_priors_steer_first_walk(self):
        def prior_fn(state, mask):
            p = np.array([0.01, 0.99])
            return np.where(mask, p, 0.0)

        reward = table_reward(TWO_LEAF, {"x0": 0.5, "x1": 0.5})
        result = run_mcts(
            initial_state(TWO_LEAF, "d"), prior_fn, MctsConfig(), 1,
            grammar=TWO_LEAF, reward_fn=reward,
        )
        assert result.distribution[1] == 1.0

    def test_complete_root_rejected(self):
        state = apply_rule(TWO_LEAF, initial_state(TWO_LEAF, "d"), 0)
        with pytest.raises(ValueError):
            run_mcts(state, None, MctsConfig(), 5,
                     grammar=TWO_LEAF, reward_fn=lambda s: 1.0)


class TestAmex:
    cfg = MctsConfig(variant="amex", backprop="max", max_nodes=9)

    def space(self):
        return enumerate_terminals(SUM_TREES, self.cfg)

    def run(self, table, n_sims, default=-1.0):
        calls = {}

        def reward(state):
            if not state.done:
                return 0.0
            calls[state.prefix] = calls.get(state.prefix, 0) + 1
            return table.get(state.prefix, default)

        result = run_mcts(initial_state(SUM_TREES, "d"), None, self.cfg,
                          n_sims, grammar=SUM_TREES, reward_fn=reward)
        return result, calls

    def test_terminal_rewards_computed_exactly_once(self):
        space = self.space()
        rng = np.random.default_rng(0)
        table = {p: float(rng.uniform(-1, 1)) for p in space}
        _, calls = self.run(table, len(space) + 50)
        assert max(calls.values()) == 1

    def test_exhaustive_search_finds_global_optimum(self):
        space = self.space()
        for seed in range(20):
            rng = np.random.default_rng(seed)
            table = {p: float(rng.uniform(-1, 0.5)) for p in space}
            best = max(table, key=table.get)
            table[best] = 1.0
            result, calls = self.run(table, len(space))
            assert result.best_reward == 1.0
            assert result.best_state.prefix == best
            assert result.fully_explored
            assert len(calls) == len(space)

    def test_visit_conservation(self):
        space = self.space()
        rng = np.random.default_rng(4)
        table = {p: float(rng.uniform(-1, 1)) for p in space}
        result, _ = self.run(table, 80)
        for node in collect_nodes(result.root):
            if node.expanded:
                assert node.visits == node.n[node.legal].sum() + 1

    def test_count_only_passes_keep_counting(self):
        space = self.space()
        table = {p: 0.1 for p in space}
        result, calls = self.run(table, len(space) + 25)
        assert result.fully_explored
        assert sum(calls.values()) == len(space)
        assert result.root.n.sum() == len(space) + 25

    def test_explores_at_least_as_many_states_as_classic(self):
        space = self.space()
        for seed in range(20):
            rng = np.random.default_rng(100 + seed)
            table = {p: float(rng.uniform(-1, 1)) for p in space}
            reward = table_reward(SUM_TREES, table)
            kw = dict(grammar=SUM_TREES, reward_fn=reward)
            amex = run_mcts(initial_state(SUM_TREES, "d"), None, self.cfg, 60, **kw)
            classic = run_mcts(
                initial_state(SUM_TREES, "d"), None,
                MctsConfig(variant="classic", backprop="max", max_nodes=9),
                60, **kw,
            )
            assert amex.explored_states >= classic.explored_states

    def test_classic_revisits_terminals(self):
        reward = table_reward(TWO_LEAF, {"x0": 1.0, "x1": 0.5})
        result = run_mcts(initial_state(TWO_LEAF, "d"), None,
                          MctsConfig(variant="classic"), 30,
                          grammar=TWO_LEAF, reward_fn=reward)
        # only two terminal states exist; classic keeps walking into them
        assert result.root.n.sum() == 30
        assert result.root.n.max() > 1


class TestDepthMask:
    def test_depth_cap_masks_deep_expansions(self):
        g = SUM_TREES
        state = initial_state(g, "d")
        for _ in range(3):
            state = apply_rule(g, state, 0)
        # leftmost S sits at depth 4; with max_depth 4 only leaves remain
        mask = legal_actions(g, state, max_nodes=100, max_depth=4)
        assert not mask[0] and mask[1] and mask[2]

    def test_no_depth_cap_by_default(self):
        g = SUM_TREES
        state = initial_state(g, "d")
        for _ in range(5):
            state = apply_rule(g, state, 0)
        assert legal_actions(g, state, max_nodes=100)[0]

    def test_search_stays_within_depth(self):
        cfg = MctsConfig(variant="amex", backprop="max", max_nodes=25,
                         max_depth=4)
        reward = table_reward(SUM_TREES, {}, default=0.2)
        result = run_mcts(initial_state(SUM_TREES, "d"), None, cfg, 200,
                          grammar=SUM_TREES, reward_fn=reward)
        for node in collect_nodes(result.root):
            assert node.state.tree.depth <= 4
