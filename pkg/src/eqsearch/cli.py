"""Command-line interface.

Subcommands: generate | search | train | benchmark | contrastive |
dump-priors.  Options come from defaults, then an optional JSON config
file (--config), then explicit flags; flags win.  Every run writes the
resolved configuration next to its outputs.  GMCT_SEED serves as the seed
when no --seed is given.

Exit codes: 0 success, 1 search budget exhausted, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import engine, packaged_grammar
from .dataset import load_csv, save_csv, save_manifest, sort_split
from .datagen import GenConstraints, generate_problems
from .fitting import FitConfig
from .grammar import GrammarError, load_grammar
from .guidance import (
    GuidanceConfig,
    GuidanceModel,
    contrastive_loss,
    load_checkpoint,
    save_checkpoint,
)
from .mcts import MctsConfig
from .reward import RewardConfig

EXIT_OK = 0
EXIT_BUDGET = 1
EXIT_USAGE = 2


class CliError(Exception):
    pass


def _resolve_seed(args):
    if getattr(args, "seed", None) is not None:
        return args.seed
    env = os.environ.get("GMCT_SEED")
    return int(env) if env else 0


def _load_grammar_arg(value):
    """A path to a grammar file, or one of the bundled names a/b/c."""
    if value.lower() in ("a", "b", "c"):
        return packaged_grammar(value.lower()), value.upper()
    path = Path(value)
    if not path.exists():
        raise CliError(f"grammar file not found: {path}")
    try:
        return load_grammar(path), path.stem
    except GrammarError as exc:
        raise CliError(f"{path}: {exc}") from None


def _out_dir(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_effective_config(out_dir, args, seed):
    resolved = {k: v for k, v in vars(args).items() if k != "func"}
    resolved["seed"] = seed
    with open(out_dir / "effective_config.json", "w", encoding="utf-8") as fh:
        json.dump(resolved, fh, indent=2, default=str)
        fh.write("\n")


def _mcts_config(args):
    return MctsConfig(
        variant=args.variant,
        backprop=args.backprop,
        c_puct=args.c_puct,
        sim_init=args.sim_init,
        discount=args.discount,
        max_nodes=args.max_nodes,
        max_depth=args.max_depth,
    )


def _reward_config(args):
    return RewardConfig(
        max_depth=args.max_depth,
        max_constants=args.max_constants,
        max_nodes=args.max_nodes,
        mse_cutoff=args.mse_cutoff,
        normalization=args.normalization,
    )


def _add_search_options(p):
    p.add_argument("--variant", choices=["classic", "amex"], default="classic")
    p.add_argument("--backprop", choices=["mean", "max"], default="mean")
    p.add_argument("--c-puct", type=float, default=10.0, dest="c_puct")
    p.add_argument("--sim-init", type=int, default=250, dest="sim_init")
    p.add_argument("--discount", type=float, default=1.0)
    p.add_argument("--max-nodes", type=int, default=25, dest="max_nodes")
    p.add_argument("--max-depth", type=int, default=10, dest="max_depth")
    p.add_argument("--max-constants", type=int, default=5, dest="max_constants")
    p.add_argument("--mse-cutoff", type=float, default=2.0, dest="mse_cutoff")
    p.add_argument("--normalization", choices=["std", "range", "none"],
                   default="std")


# ---- subcommands ---------------------------------------------------------


def cmd_generate(args):
    grammar, _ = _load_grammar_arg(args.grammar)
    seed = _resolve_seed(args)
    out = _out_dir(args)
    constraints = GenConstraints(
        max_constants=args.max_constants, n_rows=args.rows
    )
    rng = np.random.default_rng(seed)
    problems = generate_problems(grammar, args.n, constraints, rng)
    entries = []
    for problem in problems:
        name = f"{problem.dataset.id}.csv"
        save_csv(problem.dataset, out / name)
        entries.append({
            "id": problem.dataset.id,
            "path": name,
            "skeleton": problem.dataset.source_skeleton,
        })
    save_manifest({"seed": seed, "datasets": entries}, out / "manifest.json")
    _write_effective_config(out, args, seed)
    print(f"wrote {len(entries)} datasets and manifest.json to {out}")
    return EXIT_OK


def cmd_search(args):
    grammar, _ = _load_grammar_arg(args.grammar)
    seed = _resolve_seed(args)
    path = Path(args.dataset)
    if not path.exists():
        raise CliError(f"dataset not found: {path}")
    ds = load_csv(path)
    out = _out_dir(args)
    mcts_config = _mcts_config(args)
    reward_config = _reward_config(args)
    model = None
    if args.checkpoint:
        model = load_checkpoint(args.checkpoint, grammar)
    cache = engine.RewardCache(ds, reward_config, FitConfig(seed=seed))
    episode = engine.search_equation(
        model, ds, grammar, mcts_config, reward_config,
        FitConfig(seed=seed), mode="test",
        rng=np.random.default_rng(seed), reward_cache=cache,
        sim_budget=args.budget,
    )
    kbest = engine.KBest(k=args.k).update_from_cache(cache)
    _write_effective_config(out, args, seed)
    report = out / "kbest.csv"
    with open(report, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        fh.write(f"# variant={args.variant} backprop={args.backprop} "
                 f"sim_init={args.sim_init} seed={seed}\n")
        writer.writerow(["rank", "reward", "equation", "constants"])
        for rank, entry in enumerate(kbest.entries, start=1):
            consts = entry["constants"]
            writer.writerow([
                rank, f"{entry['reward']:.6f}", entry["prefix"],
                " ".join(f"{c:.6g}" for c in consts) if consts is not None else "",
            ])
    print(f"episode reward {episode.final_reward:.4f} "
          f"after {episode.sims_used} simulations; k-best in {report}")
    for entry in kbest.entries[:3]:
        print(f"  {entry['reward']:+.4f}  {entry['prefix']}")
    return EXIT_OK


def cmd_train(args):
    grammar, _ = _load_grammar_arg(args.grammar)
    seed = _resolve_seed(args)
    out = _out_dir(args)
    guidance_config = GuidanceConfig(
        dataset_encoder=args.encoder, tree_encoder=args.tree_encoder
    )
    train_config = engine.TrainConfig(
        mode=args.mode,
        iterations=args.iterations,
        problems_per_iter=args.problems,
        cold_start=args.cold_start,
        updates_per_iter=args.updates,
        batch_size=args.batch_size,
        seed=seed,
    )
    model = None
    if args.resume:
        model = load_checkpoint(args.resume, grammar)
    model, metrics = engine.run_training(
        grammar, train_config, _mcts_config(args), _reward_config(args),
        FitConfig(seed=seed),
        GenConstraints(max_constants=args.max_constants, n_rows=args.rows),
        guidance_config, model=model,
    )
    _write_effective_config(out, args, seed)
    if not isinstance(model, type(None)) and hasattr(model, "state_dict"):
        save_checkpoint(model, out / "checkpoint.pt")
    with open(out / "metrics.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(
            fh, fieldnames=["iteration", "buffer_size", "policy_ce", "value_mse"]
        )
        writer.writeheader()
        writer.writerows(metrics)
    print(f"trained {args.iterations} iterations ({args.mode}); "
          f"outputs in {out}")
    return EXIT_OK


def cmd_benchmark(args):
    seed0 = _resolve_seed(args)
    seeds = ([int(s) for s in args.seeds.split(",")]
             if args.seeds else list(range(seed0, seed0 + 5)))
    entries = engine.load_nguyen_manifest(args.manifest)
    if args.subset:
        wanted = {int(s) for s in args.subset.split(",")}
        entries = [e for e in entries if e["id"] in wanted]
    out = _out_dir(args)
    _write_effective_config(out, args, seed0)
    variants = [
        MctsConfig(variant=v, backprop=args.backprop, c_puct=args.c_puct,
                   sim_init=args.sim_init, max_nodes=args.max_nodes,
                   max_depth=args.max_depth)
        for v in args.variants.split(",")
    ]
    reward_config = _reward_config(args)
    rows = []
    for gname in args.grammars.split(","):
        grammar, label = _load_grammar_arg(gname)
        rows.extend(engine.run_benchmark(
            entries, grammar, label, variants, seeds,
            budget=args.budget, reward_config=reward_config,
            progress=lambda row: print(
                f"  eq {row['equation_id']} {row['grammar']}/{row['variant']}"
                f"/seed {row['seed']}: "
                + (f"solved at {row['sims_to_fit']}" if not row["failed"]
                   else "budget exhausted"), flush=True),
        ))
    fields = ["equation_id", "grammar", "variant", "seed", "sims_to_fit",
              "explored_states", "failed", "wall_ms"]
    with open(out / "results.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        writer.writerows(rows)
    with open(out / "summary.csv", "w", newline="", encoding="utf-8") as fh:
        summary = engine.summarize_benchmark(rows)
        writer = csv.DictWriter(fh, fieldnames=list(summary[0]) if summary else [])
        writer.writeheader()
        writer.writerows(summary)
    print(f"wrote {len(rows)} rows to {out / 'results.csv'}")
    return EXIT_BUDGET if any(r["failed"] for r in rows) else EXIT_OK


def cmd_contrastive(args):
    import torch

    grammar, _ = _load_grammar_arg(args.grammar)
    seed = _resolve_seed(args)
    out = _out_dir(args)
    rng = np.random.default_rng(seed)
    torch.manual_seed(seed)
    constraints = GenConstraints(n_rows=args.rows)
    problems = generate_problems(grammar, args.problems, constraints, rng)
    halves = []
    for problem in problems:
        a, b = sort_split(problem.dataset)
        halves.extend([a, b])
    model = GuidanceModel(
        grammar, GuidanceConfig(dataset_encoder=args.encoder)
    )
    optimizer = torch.optim.Adam(model.parameters(), lr=1e-3)
    curve = []
    for iteration in range(args.iterations):
        idx = rng.choice(len(problems), size=min(8, len(problems)), replace=False)
        batch = [h for i in idx for h in halves[2 * i:2 * i + 2]]
        loss = contrastive_loss(model, batch, lam=args.lam)
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        curve.append({"iteration": iteration, "loss": float(loss)})
    _write_effective_config(out, args, seed)
    save_checkpoint(model, out / "checkpoint.pt")
    with open(out / "loss.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=["iteration", "loss"])
        writer.writeheader()
        writer.writerows(curve)
    print(f"final loss {curve[-1]['loss']:.4f} after {args.iterations} "
          f"iterations; outputs in {out}")
    return EXIT_OK


def cmd_dump_priors(args):
    grammar, _ = _load_grammar_arg(args.grammar)
    seed = _resolve_seed(args)
    out = _out_dir(args)
    model = load_checkpoint(args.checkpoint, grammar) if args.checkpoint else None
    rng = np.random.default_rng(seed)
    problems = generate_problems(
        grammar, args.problems, GenConstraints(n_rows=args.rows), rng
    )
    rows = engine.dump_priors(
        model, problems, grammar, brute_force_bound=args.brute_force_bound
    )
    _write_effective_config(out, args, seed)
    with open(out / "priors.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["dataset_id", "kind"]
                        + [f"rule_{i}" for i in range(grammar.n_rules)])
        for row in rows:
            writer.writerow([row["dataset_id"], "prior"]
                            + [f"{p:.6f}" for p in row["prior"]])
            if row["qsa"] is not None:
                writer.writerow([row["dataset_id"], "qsa"]
                                + [f"{q:.6f}" for q in row["qsa"]])
            elif row["note"]:
                print(f"  {row['dataset_id']}: {row['note']}")
    print(f"wrote priors for {len(rows)} problems to {out / 'priors.csv'}")
    return EXIT_OK


# ---- argument wiring -----------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(
        prog="eqsearch",
        description="Grammar-guided MCTS equation discovery",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON file with option defaults")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("generate", help="sample training problems to CSV")
    common(p)
    p.add_argument("--grammar", required=True)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--rows", type=int, default=100)
    p.add_argument("--max-constants", type=int, default=5, dest="max_constants")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("search", help="search one dataset for an equation")
    common(p)
    p.add_argument("--grammar", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--budget", type=int, default=None,
                   help="simulation cap for the episode")
    _add_search_options(p)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("train", help="train the guidance network")
    common(p)
    p.add_argument("--grammar", required=True)
    p.add_argument("--mode", choices=["supervised", "mcts", "uniform"],
                   default="supervised")
    p.add_argument("--iterations", type=int, default=20)
    p.add_argument("--problems", type=int, default=10)
    p.add_argument("--cold-start", type=int, default=10, dest="cold_start")
    p.add_argument("--updates", type=int, default=20)
    p.add_argument("--batch-size", type=int, default=64, dest="batch_size")
    p.add_argument("--rows", type=int, default=100)
    p.add_argument("--encoder", choices=["none", "flat-mlp", "pooled-set"],
                   default="none")
    p.add_argument("--tree-encoder", choices=["none", "padded-onehot-mlp"],
                   default="padded-onehot-mlp", dest="tree_encoder")
    p.add_argument("--resume")
    _add_search_options(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("benchmark", help="Nguyen benchmark table")
    common(p)
    p.add_argument("--suite", choices=["nguyen", "custom"], default="nguyen")
    p.add_argument("--manifest", help="custom suite manifest (JSON)")
    p.add_argument("--grammars", default="B")
    p.add_argument("--variants", default="classic,amex")
    p.add_argument("--seeds", help="comma separated, e.g. 0,1,2,3,4")
    p.add_argument("--subset", help="equation ids, e.g. 1,5,7,8,11")
    p.add_argument("--budget", type=int, default=100000)
    _add_search_options(p)
    p.set_defaults(func=cmd_benchmark, backprop="max", variant="amex")

    p = sub.add_parser("contrastive", help="train the dataset encoder on the "
                       "two-halves contrastive task")
    common(p)
    p.add_argument("--grammar", required=True)
    p.add_argument("--encoder", choices=["flat-mlp", "pooled-set"],
                   default="pooled-set")
    p.add_argument("--iterations", type=int, default=50)
    p.add_argument("--problems", type=int, default=16)
    p.add_argument("--rows", type=int, default=100)
    p.add_argument("--lambda", type=float, default=0.1, dest="lam")
    p.set_defaults(func=cmd_contrastive)

    p = sub.add_parser("dump-priors", help="model priors (and brute-force "
                       "root values when feasible) per problem")
    common(p)
    p.add_argument("--grammar", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--problems", type=int, default=5)
    p.add_argument("--rows", type=int, default=100)
    p.add_argument("--brute-force-bound", type=int, default=2000,
                   dest="brute_force_bound")
    p.set_defaults(func=cmd_dump_priors)

    return parser


def _apply_config_file(parser, args, argv):
    """File values override defaults; explicit flags override the file."""
    if not getattr(args, "config", None):
        return args
    path = Path(args.config)
    if not path.exists():
        raise CliError(f"config file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        overrides = json.load(fh)
    unknown = [k for k in overrides if not hasattr(args, k)]
    if unknown:
        raise CliError(f"unknown config keys: {', '.join(unknown)}")
    merged = argparse.Namespace(**vars(args))
    explicit = {a.split("=")[0].lstrip("-").replace("-", "_")
                for a in argv if a.startswith("--")}
    for key, value in overrides.items():
        if key not in explicit:
            setattr(merged, key, value)
    return merged


def main(argv=None):
    argv = argv if argv is not None else sys.argv[1:]
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        args = _apply_config_file(parser, args, argv)
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
