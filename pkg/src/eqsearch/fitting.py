"""Constant fitting for completed equations.

The constant slots of a tree are fitted by minimizing the relative RMSE
with a derivative-free Nelder-Mead simplex search.  Expression evaluation
can fail at domain boundaries, so gradients are unreliable; multi-start
(all-ones plus Gaussian perturbations) mitigates local minima.  Probes
whose evaluation fails score +inf.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .expression import EvaluationError, compile_tree, run_program
from .reward import RewardConfig, relative_rmse

# standard simplex coefficients: reflection, expansion, contraction, shrink
_ALPHA, _GAMMA, _RHO, _SIGMA = 1.0, 2.0, 0.5, 0.5


@dataclass(frozen=True)
class FitConfig:
    method: str = "nelder-mead"
    restarts: int = 3
    init_value: float = 1.0
    max_iters: int = 200  # per restart
    tol: float = 1e-9  # simplex size
    perturb_scale: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.method != "nelder-mead":
            raise ValueError(f"unknown fitting method {self.method!r}")
        if self.restarts < 1 or self.tol <= 0:
            raise ValueError("restarts must be >= 1 and tol > 0")


@dataclass(frozen=True)
class FitResult:
    constants: np.ndarray
    mse: float | None  # None when evaluation fails for every probe


def fit_constants(tree, ds, fit_config=FitConfig(), reward_config=RewardConfig()):
    """Fit the tree's constant slots to `ds`, returning the best found."""
    program = compile_tree(tree)

    def objective(constants):
        try:
            y = run_program(program, ds.xs, constants)
        except EvaluationError:
            return np.inf
        return relative_rmse(y, ds.y, reward_config)

    n = program.n_constants
    if n == 0:
        mse = objective(np.empty(0))
        return FitResult(np.empty(0), None if np.isinf(mse) else float(mse))

    rng = np.random.default_rng(fit_config.seed)
    best_x = np.full(n, fit_config.init_value)
    best_f = objective(best_x)
    for restart in range(fit_config.restarts):
        x0 = np.full(n, fit_config.init_value)
        if restart > 0:
            x0 = x0 + rng.normal(scale=fit_config.perturb_scale, size=n)
        x, f = _nelder_mead(objective, x0, fit_config)
        if f < best_f:
            best_x, best_f = x, f
    if np.isinf(best_f):
        return FitResult(best_x, None)
    return FitResult(best_x, float(best_f))


def _nelder_mead(objective, x0, config):
    n = len(x0)
    simplex = [np.array(x0, dtype=np.float64)]
    for i in range(n):
        point = simplex[0].copy()
        point[i] += 0.5
        simplex.append(point)
    values = [objective(p) for p in simplex]

    for _ in range(config.max_iters):
        order = np.argsort(values, kind="stable")
        simplex = [simplex[i] for i in order]
        values = [values[i] for i in order]
        spread = max(np.max(np.abs(p - simplex[0])) for p in simplex[1:])
        if spread < config.tol:
            break
        centroid = np.mean(simplex[:-1], axis=0)
        worst = simplex[-1]

        reflected = centroid + _ALPHA * (centroid - worst)
        f_ref = objective(reflected)
        if values[0] <= f_ref < values[-2]:
            simplex[-1], values[-1] = reflected, f_ref
            continue
        if f_ref < values[0]:
            expanded = centroid + _GAMMA * (reflected - centroid)
            f_exp = objective(expanded)
            if f_exp < f_ref:
                simplex[-1], values[-1] = expanded, f_exp
            else:
                simplex[-1], values[-1] = reflected, f_ref
            continue
        contracted = centroid + _RHO * (worst - centroid)
        f_con = objective(contracted)
        if f_con < values[-1]:
            simplex[-1], values[-1] = contracted, f_con
            continue
        # shrink toward the best vertex
        for i in range(1, n + 1):
            simplex[i] = simplex[0] + _SIGMA * (simplex[i] - simplex[0])
            values[i] = objective(simplex[i])

    best = int(np.argmin(values))
    return simplex[best], values[best]
