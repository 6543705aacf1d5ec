"""Terminal and constraint rewards for search states.

Reward cases, in the order they are checked:

  (i)   tree depth above the cap                     -> -1
  (ii)  more constant slots than allowed             -> -1
  (iii) more nodes than allowed                      -> -1
  (iv)  complete tree with error above the cutoff    -> -1
  (v)   complete tree within the cutoff              -> 1 - error
  (vi)  anything else (incomplete, within bounds)    ->  0

The error is a relative RMSE: with the default "std" normalization the
squared errors are divided by the variance of the target column, so a
constant predictor scores about 1 regardless of the data's magnitude and
the universal cutoff of 2 is meaningful across datasets.  Evaluation
failures of complete trees score -1 like case (iv).  Rewards always use
the unscaled y values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .expression import EvaluationError, evaluate


@dataclass(frozen=True)
class RewardConfig:
    max_depth: int = 10
    max_constants: int = 5
    max_nodes: int = 25
    mse_cutoff: float = 2.0
    normalization: str = "std"  # std | range | none
    epsilon: float = 1e-12

    def __post_init__(self):
        if self.mse_cutoff <= 0 or self.max_depth <= 0 or self.max_nodes <= 0:
            raise ValueError("reward thresholds must be positive")
        if self.normalization not in ("std", "range", "none"):
            raise ValueError(f"unknown normalization {self.normalization!r}")


def relative_rmse(y_calc, y_true, config=RewardConfig()):
    y_calc = np.asarray(y_calc, dtype=np.float64)
    y_true = np.asarray(y_true, dtype=np.float64)
    if y_calc.shape != y_true.shape:
        raise ValueError("y_calc and y_true have different lengths")
    if y_calc.size == 0:
        raise ValueError("need at least one row")
    mean_sq = float(np.mean((y_calc - y_true) ** 2))
    if config.normalization == "std":
        denom = max(float(np.var(y_true)), config.epsilon)
        return float(np.sqrt(mean_sq / denom))
    rmse = float(np.sqrt(mean_sq))
    if config.normalization == "range":
        span = float(np.max(y_true) - np.min(y_true))
        return rmse / max(span, config.epsilon)
    return rmse


def compute_reward(state, ds, config=RewardConfig(), fit_config=None,
                   return_details=False):
    """Score a state per the case list above.

    Complete trees with constant slots are fitted first (Nelder-Mead, see
    `fitting`); pass `fit_config` to control that.  With
    `return_details=True` returns (reward, fitted constants, error).
    """
    tree = state.tree
    reward, constants, error = _reward_inner(tree, ds, config, fit_config)
    if return_details:
        return reward, constants, error
    return reward


def _reward_inner(tree, ds, config, fit_config):
    if tree.depth > config.max_depth:
        return -1.0, None, None
    if tree.n_constants > config.max_constants:
        return -1.0, None, None
    if tree.node_count > config.max_nodes:
        return -1.0, None, None
    if not tree.done:
        return 0.0, None, None
    from .fitting import FitConfig, fit_constants

    result = fit_constants(tree, ds, fit_config or FitConfig(), config)
    if result.mse is None:  # evaluation failed even at the best constants
        return -1.0, None, None
    if result.mse > config.mse_cutoff:
        return -1.0, result.constants, result.mse
    return 1.0 - result.mse, result.constants, result.mse


def reward_for_tree(tree, ds, config=RewardConfig(), fit_config=None):
    """Convenience wrapper when no SearchState exists yet."""
    reward, constants, error = _reward_inner(tree, ds, config, fit_config)
    return reward, constants, error
