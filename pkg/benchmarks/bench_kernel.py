"""Compare the compiled and numpy cell kernels.

    python benchmarks/bench_kernel.py [--n-cells 10000] [--repeat 5]

Times one sweep-sized batch of cell solves (``evaluate_cells`` at a shocked
price vector) and one full market solve per backend, and reports the largest
relative difference between the backends' outputs.
"""
import argparse
import time

import numpy as np

from gridpe import kernel
from gridpe.market import solve_equilibrium
from gridpe.production import evaluate_cells
from gridpe.scenario import build_scenario
from gridpe.synth import SynthSpec, synthesize


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n-cells", type=int, default=10_000)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=42)
    args = ap.parse_args(argv)

    model, pathway = synthesize(SynthSpec(n_cells=args.n_cells), seed=args.seed)
    ta = model.arrays
    scen = build_scenario(pathway, 2030, -0.3)
    print(f"{len(model.cells)} cells, {ta.a0.size} technologies, backends: {', '.join(kernel.available())}")

    results = {}
    for name in kernel.available():
        t_cells, cells = best_of(lambda: evaluate_cells(ta, 0.05, 0.02, -0.01, backend=name), args.repeat)
        t_solve, eq = best_of(lambda: solve_equilibrium(model, scen, backend=name), args.repeat)
        results[name] = (cells, eq)
        print(f"{name:>8}: cells {1e3 * t_cells:8.2f} ms   solve {1e3 * t_solve:8.1f} ms "
              f"({eq.iterations} Newton iterations)")

    if len(results) == 2:
        (c1, e1), (c2, e2) = results.values()
        diff = max(float(np.max(np.abs(a - b) / np.maximum(np.abs(b), 1e-300)))
                   for a, b in ((c1.output, c2.output), (c1.acres, c2.acres), (c1.n_rate, c2.n_rate)))
        print(f"max rel diff in cell outputs {diff:.1e}; world price {e1.world_price!r} vs {e2.world_price!r}")


if __name__ == "__main__":
    main()
