"""Compare the compiled and pure-Python annealing kernels.

Run with ``python benchmarks/bench_anneal.py [--n 25 50 100] [--repeats 3]``.
Both kernels consume the same random stream, so each pair of runs must
return the same partition and energy; the script checks this before timing
is reported.
"""

import argparse
import time

import numpy as np

from pathmv.clustering import AnnealConfig, anneal, available_backends


def random_similarity(n, seed):
    g = np.random.default_rng(seed)
    X = g.normal(size=(n, 3 * n))
    return np.corrcoef(X)


def time_backend(S, cfg, backend, repeats):
    best, result = np.inf, None
    for _ in range(repeats):
        t0 = time.perf_counter()
        result = anneal(S, cfg, rng=cfg.seed, backend=backend)
        best = min(best, time.perf_counter() - t0)
    return best, result


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, nargs="+", default=[25, 50, 100])
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    backends = available_backends()
    if "cython" not in backends:
        print("compiled kernel not built; only the python backend is available")
    cfg = AnnealConfig(seed=args.seed)
    print(f"{'n':>5} " + " ".join(f"{b + ' [s]':>12}" for b in backends) + "   speedup  identical")
    for n in args.n:
        S = random_similarity(n, args.seed + n)
        times, results = {}, {}
        for b in backends:
            times[b], results[b] = time_backend(S, cfg, b, args.repeats)
        ref = results["python"]
        same = all(
            np.array_equal(r.partition.assignment, ref.partition.assignment) and r.energy == ref.energy
            for r in results.values()
        )
        speed = times["python"] / times["cython"] if "cython" in times else 1.0
        cols = " ".join(f"{times[b]:12.4f}" for b in backends)
        print(f"{n:5d} {cols}   {speed:7.1f}x  {same}")
        if not same:
            raise SystemExit("backends disagree")


if __name__ == "__main__":
    main()
