"""Reward case list and the relative error metric."""

import numpy as np
import pytest

from eqsearch import packaged_grammar
from eqsearch.dataset import TabularDataset
from eqsearch.expression import SearchState, from_prefix, initial_state
from eqsearch.reward import RewardConfig, compute_reward, relative_rmse


def state(text, grammar=None):
    return SearchState(from_prefix(text.split(), grammar))


def ds_with_error(m, n=20, seed=0):
    """Dataset where the tree "x0" scores exactly relative RMSE m."""
    rng = np.random.default_rng(seed)
    y = rng.uniform(-3.0, 3.0, size=n)
    xs = (y + m * np.std(y)).reshape(-1, 1)
    return TabularDataset("d", xs, y)


class TestRelativeRmse:
    def test_identity_is_zero(self):
        y = np.array([1.0, 2.0, 5.0])
        assert relative_rmse(y, y) == 0.0

    def test_mean_predictor_scores_one(self):
        rng = np.random.default_rng(1)
        y = rng.normal(3.0, 2.5, size=1000)
        pred = np.full_like(y, y.mean())
        assert relative_rmse(pred, y) == pytest.approx(1.0, abs=1e-12)

    def test_scale_free_under_std_normalization(self):
        y = np.array([1.0, 2.0, 4.0])
        pred = np.array([1.1, 2.1, 4.1])
        a = relative_rmse(pred, y)
        b = relative_rmse(1000 * pred, 1000 * y)
        assert a == pytest.approx(b, rel=1e-12)

    def test_constant_target_floors_at_epsilon(self):
        y = np.full(5, 2.0)
        value = relative_rmse(y + 0.1, y)
        assert np.isfinite(value) and value > 1.0

    def test_none_is_plain_rmse(self):
        y = np.zeros(4)
        pred = np.full(4, 2.0)
        cfg = RewardConfig(normalization="none")
        assert relative_rmse(pred, y, cfg) == pytest.approx(2.0)

    def test_range_normalization(self):
        y = np.array([0.0, 10.0])
        pred = y + 1.0
        cfg = RewardConfig(normalization="range")
        assert relative_rmse(pred, y, cfg) == pytest.approx(0.1)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            relative_rmse(np.zeros(3), np.zeros(4))


class TestRewardCases:
    ds = ds_with_error(0.5)

    def test_depth_cap_violation(self):
        chain = " ".join(["+"] * 10) + " " + " ".join(["x0"] * 11)
        s = state(chain)
        assert s.tree.depth == 11
        assert compute_reward(s, self.ds) == -1.0

    def test_constant_cap_violation(self):
        s = state("+ c + c + c + c + c c")
        assert compute_reward(s, self.ds, RewardConfig(max_constants=5)) == -1.0

    def test_node_cap_violation(self):
        leaves = " ".join(["x0"] * 16)
        s = state(" ".join(["+"] * 15) + " " + leaves)  # balanced via arity fill
        big = state("+ " * 13 + "x0 " * 14)
        assert big.tree.node_count > 25 or s.tree.node_count > 25
        target = big if big.tree.node_count > 25 else s
        cfg = RewardConfig(max_depth=50)
        assert compute_reward(target, self.ds, cfg) == -1.0

    def test_error_above_cutoff(self):
        s = state("* 10 x0")
        assert compute_reward(s, ds_with_error(0.0)) == -1.0

    @pytest.mark.parametrize("m", [0.0, 0.3, 1.999])
    def test_one_minus_error(self, m):
        assert compute_reward(state("x0"), ds_with_error(m)) == pytest.approx(
            1.0 - m, abs=1e-9
        )

    def test_just_above_cutoff(self):
        assert compute_reward(state("x0"), ds_with_error(2.001)) == -1.0

    def test_incomplete_within_bounds_is_zero(self):
        g = packaged_grammar("b")
        assert compute_reward(initial_state(g, "d"), self.ds) == 0.0

    def test_evaluation_failure(self):
        xs = np.array([[-1.0], [2.0]])
        ds = TabularDataset("d", xs, np.array([0.5, 1.0]))
        assert compute_reward(state("log x0"), ds) == -1.0

    def test_constants_fitted_before_scoring(self):
        rng = np.random.default_rng(2)
        xs = rng.uniform(0.5, 3.0, size=(25, 1))
        ds = TabularDataset("d", xs, xs[:, 0] + 5.0)
        reward, constants, error = compute_reward(
            state("+ x0 c"), ds, return_details=True
        )
        assert reward == pytest.approx(1.0, abs=1e-6)
        assert constants[0] == pytest.approx(5.0, abs=1e-4)
        assert error < 1e-6

    def test_fuzz_range(self):
        from eqsearch.datagen import GenConstraints, sample_tree

        g = packaged_grammar("b")
        rng = np.random.default_rng(3)
        ds = ds_with_error(0.5, n=10)
        constraints = GenConstraints(n_rows=10)
        for _ in range(300):
            tree = sample_tree(g, constraints, rng)
            r = compute_reward(SearchState(tree), ds)
            assert -1.0 <= r <= 1.0

    def test_monotone_in_error(self):
        rewards = [compute_reward(state("x0"), ds_with_error(m))
                   for m in (0.1, 0.5, 1.0, 1.8)]
        assert rewards == sorted(rewards, reverse=True)
