"""Compare the compiled evaluation kernel against the numpy fallback.

Times both backends on the same batch of random complete trees and checks
that their outputs agree.  Run as:  python3 benchmarks/bench_eval.py
"""

import time

import numpy as np

import eqsearch.backend as backend
from eqsearch import packaged_grammar
from eqsearch.datagen import GenConstraints, sample_tree
from eqsearch.expression import EvaluationError, compile_tree, run_program


def build_cases(n_trees=200, n_rows=100, seed=0):
    rng = np.random.default_rng(seed)
    grammar = packaged_grammar("a")
    constraints = GenConstraints(n_rows=n_rows)
    cases = []
    while len(cases) < n_trees:
        tree = sample_tree(grammar, constraints, rng)
        program = compile_tree(tree)
        xs = rng.uniform(0.1, 5.0, size=(n_rows, 2))
        constants = rng.uniform(0.5, 5.0, size=program.n_constants)
        cases.append((program, xs, constants))
    return cases


def run_all(cases):
    outputs = []
    for program, xs, constants in cases:
        try:
            outputs.append(run_program(program, xs, constants))
        except EvaluationError:
            outputs.append(None)
    return outputs


def time_backend(name, cases, repeats=5):
    backend.use(name)
    best = np.inf
    outputs = None
    for _ in range(repeats):
        start = time.perf_counter()
        outputs = run_all(cases)
        best = min(best, time.perf_counter() - start)
    return best, outputs


def main():
    if "compiled" not in backend.AVAILABLE:
        print("compiled backend not built; nothing to compare")
        return
    cases = build_cases()
    t_py, out_py = time_backend("python", cases)
    t_c, out_c = time_backend("compiled", cases)
    mismatches = 0
    for a, b in zip(out_py, out_c):
        if (a is None) != (b is None):
            mismatches += 1
        elif a is not None and not np.allclose(a, b, rtol=1e-12, atol=0):
            mismatches += 1
    print(f"{len(cases)} trees x {cases[0][1].shape[0]} rows")
    print(f"python   backend: {t_py * 1000:8.2f} ms")
    print(f"compiled backend: {t_c * 1000:8.2f} ms")
    print(f"speedup: {t_py / t_c:.1f}x, mismatching cases: {mismatches}")


if __name__ == "__main__":
    main()
