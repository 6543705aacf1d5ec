"""Outer search loop, training orchestration, and the benchmark harness.

An episode repeatedly runs the inner MCTS at the current derivation state
(fresh inner tree per outer step, simulation count from `sim_schedule`),
then commits one action: sampled from the visit distribution in train
mode, the argmax in test mode.  Terminal rewards are cached per (dataset,
prefix) so revisited equations are not refitted.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .dataset import TabularDataset
from .datagen import GenConstraints, generate_problems
from .expression import from_prefix, evaluate, initial_state
from .fitting import FitConfig
from .grammar import legal_actions
from .guidance import (
    GuidanceConfig,
    GuidanceModel,
    ReplayBuffer,
    ReplayRecord,
    UniformGuidance,
    make_optimizer,
    make_supervised_targets,
    mcts_targets_filter,
    train_step,
)
from .mcts import MctsConfig, run_mcts, sim_schedule
from .reward import RewardConfig, compute_reward


class RewardCache:
    """Caches rewards (and fitted constants for complete trees) by prefix."""

    def __init__(self, dataset, reward_config, fit_config=None):
        self.dataset = dataset
        self.reward_config = reward_config
        self.fit_config = fit_config
        self.cache = {}
        self.details = {}  # prefix -> (constants, error) for complete trees

    def __call__(self, state):
        key = state.prefix
        hit = self.cache.get(key)
        if hit is not None:
            return hit
        reward, constants, error = compute_reward(
            state, self.dataset, self.reward_config, self.fit_config,
            return_details=True,
        )
        self.cache[key] = reward
        if state.done:
            self.details[key] = (constants, error)
        return reward


@dataclass
class EpisodeResult:
    states: list  # visited derivation states, length = steps + 1
    mcts_distributions: list  # one per committed step
    rewards: list  # reward of the state reached by each step
    final_equation: str
    final_reward: float
    sims_used: int
    explored_states: int
    solved: bool = False
    sims_to_solve: int | None = None  # cumulative sims at the solving simulation
    root_node: object = None  # persistent search tree when tree reuse is on


@dataclass
class KBest:
    k: int = 10
    entries: list = field(default_factory=list)  # {prefix, constants, reward}

    def add(self, prefix, constants, reward):
        for entry in self.entries:
            if entry["prefix"] == prefix:
                if reward > entry["reward"]:
                    entry["reward"] = reward
                    entry["constants"] = constants
                self.entries.sort(key=lambda e: -e["reward"])
                return self
        self.entries.append(
            {"prefix": prefix, "constants": constants, "reward": reward}
        )
        self.entries.sort(key=lambda e: -e["reward"])
        del self.entries[self.k:]
        return self

    def update_from_cache(self, cache):
        for prefix, reward in cache.cache.items():
            if prefix in cache.details:
                constants, _ = cache.details[prefix]
                self.add(prefix, constants, reward)
        return self


def search_equation(model, dataset, grammar, mcts_config=MctsConfig(),
                    reward_config=RewardConfig(), fit_config=None,
                    mode="test", rng=None, stop_reward=None,
                    reward_cache=None, sim_budget=None,
                    tree_reuse=False, root_node=None):
    """Run one episode.  `model` may be None / UniformGuidance for uniform
    priors.  With `stop_reward`, the episode halts as soon as any inner
    simulation finds a terminal above it (used by the benchmark); with
    `sim_budget`, no new outer step starts once the budget is spent.

    With `tree_reuse`, each outer step continues inside the subtree chosen
    by the previous step instead of building a fresh inner tree, and the
    episode's root tree is returned (and accepted back via `root_node`) so
    statistics persist across episodes on the same problem."""
    if mode not in ("train", "test"):
        raise ValueError(f"unknown mode {mode!r}")
    rng = rng if rng is not None else np.random.default_rng()
    cache = reward_cache or RewardCache(dataset, reward_config, fit_config)
    prior_fn = None
    if model is not None and not isinstance(model, UniformGuidance):
        prior_fn = model.prior_fn(dataset)

    state = initial_state(grammar, dataset.id)
    states = [state]
    distributions = []
    rewards = []
    sims_used = 0
    explored = 0
    solved = False
    sims_to_solve = None
    node = root_node if tree_reuse else None

    while not state.done:
        if cache(state) != 0.0:  # constraint violation mid-derivation
            break
        if node is not None and node.is_terminal:
            break  # dead end discovered by an earlier expansion
        n_sims = sim_schedule(mcts_config.sim_init, state.tree.node_count)
        result = run_mcts(
            state, prior_fn, mcts_config, n_sims,
            grammar=grammar, reward_fn=cache, stop_reward=stop_reward,
            root_node=node,
        )
        if tree_reuse and root_node is None:
            root_node = result.root
        sims_used += result.sims_run
        explored += result.explored_states
        if result.solved_at is not None:
            solved = True
            sims_to_solve = sims_used  # sims_run already stops at solved_at
            break
        dist = result.distribution
        if dist.sum() <= 0:
            mask = legal_actions(grammar, state, mcts_config.max_nodes,
                                 mcts_config.max_depth)
            if not mask.any():
                break
            dist = mask / mask.sum()
        if mode == "train":
            action = int(rng.choice(len(dist), p=dist))
        else:
            action = int(np.argmax(dist))  # ties: lowest rule id
        distributions.append(dist)
        state = state.expand(grammar.rules[action].rhs)
        states.append(state)
        node = result.root.children.get(action) if tree_reuse else None
        rewards.append(cache(state))
        if rewards[-1] != 0.0 and not state.done:
            break  # stepped into a violating state
        if sim_budget is not None and sims_used >= sim_budget:
            break

    if solved:
        final_equation = str(result.best_state.prefix)
        final_reward = result.best_reward
    else:
        final_equation = state.prefix
        final_reward = rewards[-1] if rewards else cache(state)
    return EpisodeResult(
        states=states,
        mcts_distributions=distributions,
        rewards=rewards,
        final_equation=final_equation,
        final_reward=final_reward,
        sims_used=sims_used,
        explored_states=explored,
        solved=solved,
        sims_to_solve=sims_to_solve,
        root_node=root_node,
    )


def episode_to_records(episode, dataset, grammar, discount=1.0, max_nodes=25,
                       max_depth=None):
    """Replay records from an episode: per-step visit-count targets and the
    final reward discounted by the remaining steps."""
    records = []
    n_steps = len(episode.mcts_distributions)
    for i in range(n_steps):
        state = episode.states[i]
        mask = legal_actions(grammar, state, max_nodes, max_depth)
        value = episode.final_reward * discount ** (n_steps - 1 - i)
        records.append(ReplayRecord(
            prefix=state.prefix,
            dataset=dataset,
            legal_mask=mask,
            target_policy=episode.mcts_distributions[i],
            target_value=float(np.clip(value, -1.0, 1.0)),
            source="mcts",
        ))
    return mcts_targets_filter(records, episode.final_reward)


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "mcts"  # supervised | mcts | uniform
    iterations: int = 20
    problems_per_iter: int = 10
    cold_start: int = 10  # iterations without network updates
    updates_per_iter: int = 20
    batch_size: int = 64
    buffer_capacity: int = 10000
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("supervised", "mcts", "uniform"):
            raise ValueError(f"unknown training mode {self.mode!r}")


def run_training(grammar, train_config=TrainConfig(),
                 mcts_config=MctsConfig(), reward_config=RewardConfig(),
                 fit_config=None, gen_constraints=GenConstraints(),
                 guidance_config=GuidanceConfig(), model=None,
                 problems_per_iteration=None):
    """Iterative training: generate problems, collect replay records
    (supervised derivations or MCTS episodes), then update the network
    after the cold-start phase.  Mode "uniform" collects nothing and never
    updates.  Returns (model, metrics rows)."""
    rng = np.random.default_rng(train_config.seed)
    metrics = []
    if train_config.mode == "uniform":
        return UniformGuidance(), metrics

    if model is None:
        model = GuidanceModel(grammar, guidance_config)
    optimizer = make_optimizer(model)
    buffer = ReplayBuffer(train_config.buffer_capacity)

    for iteration in range(train_config.iterations):
        if problems_per_iteration is not None:
            problems = problems_per_iteration(iteration, rng)
        else:
            problems = generate_problems(
                grammar, train_config.problems_per_iter, gen_constraints, rng
            )
        for problem in problems:
            if train_config.mode == "supervised":
                buffer.append(make_supervised_targets(
                    problem.tree, grammar, problem.dataset,
                    max_nodes=mcts_config.max_nodes,
                    max_depth=mcts_config.max_depth,
                ))
            else:
                episode = search_equation(
                    model, problem.dataset, grammar, mcts_config,
                    reward_config, fit_config, mode="train", rng=rng,
                )
                buffer.append(episode_to_records(
                    episode, problem.dataset, grammar,
                    discount=mcts_config.discount,
                    max_nodes=mcts_config.max_nodes,
                    max_depth=mcts_config.max_depth,
                ))
        row = {"iteration": iteration, "buffer_size": len(buffer),
               "policy_ce": None, "value_mse": None}
        if iteration >= train_config.cold_start and len(buffer) > 0:
            losses = []
            for _ in range(train_config.updates_per_iter):
                batch = buffer.sample(min(train_config.batch_size, len(buffer)), rng)
                losses.append(train_step(model, batch, optimizer))
            row["policy_ce"] = float(np.mean([l["policy_ce"] for l in losses]))
            row["value_mse"] = float(np.mean([l["value_mse"] for l in losses]))
        metrics.append(row)
    return model, metrics


# ---- benchmark harness ---------------------------------------------------


def load_nguyen_manifest(path=None):
    """The bundled twelve-equation benchmark manifest, or a custom one."""
    import json
    from importlib import resources

    if path is None:
        text = (resources.files("eqsearch.data") / "nguyen.json").read_text()
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    return json.loads(text)


def make_benchmark_dataset(entry, seed):
    """Build the dataset for one manifest entry: uniform draws per variable
    within its range (a zero-width range yields a constant column)."""
    rng = np.random.default_rng(seed)
    n_rows = entry["n_rows"]
    cols = []
    for lo, hi in entry["ranges"]:
        cols.append(np.full(n_rows, lo) if lo == hi else rng.uniform(lo, hi, n_rows))
    xs = np.column_stack(cols)
    tree = from_prefix(entry["expression"].split())
    y = evaluate(tree, xs)
    return TabularDataset(id=f"nguyen_{entry['id']}_seed{seed}", xs=xs, y=y)


def run_benchmark(entries, grammar, grammar_name, variants, seeds,
                  budget=100000, stop_reward=0.999,
                  reward_config=None, fit_config=None, progress=None):
    """Run each (equation, variant, seed) cell until a terminal with reward
    above `stop_reward` appears or the simulation budget is spent.

    Cells run episodes with uniform priors on one persistent search tree:
    outer steps commit the most-visited action and continue inside that
    subtree, and episode restarts keep all statistics, so the simulation
    count accumulates over all outer steps of all episodes.  Returns rows
    in the results-CSV shape.
    """
    reward_config = reward_config or RewardConfig(max_constants=2)
    rows = []
    for entry in entries:
        for variant in variants:
            for seed in seeds:
                row = _run_cell(entry, grammar, grammar_name, variant, seed,
                                budget, stop_reward, reward_config, fit_config)
                rows.append(row)
                if progress is not None:
                    progress(row)
    return rows


def _run_cell(entry, grammar, grammar_name, mcts_config, seed, budget,
              stop_reward, reward_config, fit_config):
    # Tree reuse is what lets the deterministic most-visited commits make
    # progress: statistics persist across episodes, so each restart walks
    # an updated tree instead of re-walking an identical path.
    dataset = make_benchmark_dataset(entry, seed)
    cache = RewardCache(dataset, reward_config, fit_config)
    start = time.perf_counter()
    total = 0
    explored = 0
    solved_at = None
    root = None
    while total < budget and solved_at is None:
        episode = search_equation(
            None, dataset, grammar, mcts_config, reward_config, fit_config,
            mode="test", rng=np.random.default_rng(seed),
            stop_reward=stop_reward, reward_cache=cache,
            sim_budget=budget - total, tree_reuse=True, root_node=root,
        )
        root = episode.root_node
        total += episode.sims_used
        explored += episode.explored_states
        if episode.solved:
            solved_at = total
        if episode.sims_used == 0:
            break  # dead-end root: nothing left to search
    wall_ms = (time.perf_counter() - start) * 1000.0
    return {
        "equation_id": entry["id"],
        "grammar": grammar_name,
        "variant": mcts_config.variant,
        "seed": seed,
        "sims_to_fit": solved_at if solved_at is not None else "",
        "explored_states": explored,
        "failed": 0 if solved_at is not None else 1,
        "wall_ms": round(wall_ms, 1),
    }


def summarize_benchmark(rows):
    """Per (equation, grammar, variant): mean/std of sims-to-fit over the
    solved seeds plus the failure count."""
    groups = {}
    for row in rows:
        key = (row["equation_id"], row["grammar"], row["variant"])
        groups.setdefault(key, []).append(row)
    summary = []
    for (eq, gname, variant), cell in sorted(groups.items()):
        sims = [r["sims_to_fit"] for r in cell if r["failed"] == 0]
        summary.append({
            "equation_id": eq,
            "grammar": gname,
            "variant": variant,
            "mean_sims": float(np.mean(sims)) if sims else None,
            "std_sims": float(np.std(sims)) if sims else None,
            "failed_runs": sum(r["failed"] for r in cell),
            "n_seeds": len(cell),
        })
    return summary


def dump_priors(model, problems, grammar, brute_force_bound=2000,
                mcts_config=None, reward_config=None, fit_config=None):
    """Per problem: the model's masked prior at the initial state, plus the
    normalized root Q-values of a fully explored tree when the space is
    small enough for an exhaustive AmEx pass."""
    rows = []
    for problem in problems:
        dataset = problem.dataset if hasattr(problem, "dataset") else problem
        state = initial_state(grammar, dataset.id)
        cfg0 = mcts_config or MctsConfig()
        mask = legal_actions(grammar, state, cfg0.max_nodes, cfg0.max_depth)
        if model is None or isinstance(model, UniformGuidance):
            prior = mask / mask.sum()
        else:
            prior, _ = model.predict(state, dataset, mask)
        row = {"dataset_id": dataset.id, "prior": prior, "qsa": None,
               "note": ""}
        cfg = replace(mcts_config or MctsConfig(), variant="amex",
                      backprop="max")
        cache = RewardCache(dataset, reward_config or RewardConfig(),
                            fit_config)
        result = run_mcts(state, None, cfg, brute_force_bound,
                          grammar=grammar, reward_fn=cache)
        if result.fully_explored:
            q = np.where(mask, result.root.q, 0.0)
            shifted = np.where(mask, q - q[mask].min(), 0.0)
            total = shifted.sum()
            row["qsa"] = shifted / total if total > 0 else mask / mask.sum()
        else:
            row["note"] = (
                f"space not exhausted within {brute_force_bound} simulations"
            )
        rows.append(row)
    return rows
