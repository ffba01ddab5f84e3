"""Compiled vs pure-Python kernels, plus end-to-end GM/BGMD aggregation.

    python3 benchmarks/bench_kernels.py --d 100000 --b 32 --repeats 5
"""
import argparse
import sys
import time

import numpy as np

from bgmd._backend import compiled_available, get_kernels
from bgmd.engine import bench_aggregation, bench_to_csv
from bgmd.gm import default_smoothing


def best_of(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def kernel_table(d, b, repeats, seed=0):
    rng = np.random.default_rng(seed)
    G = rng.standard_normal((b, d)) * np.exp(rng.standard_normal(d))
    m = rng.standard_normal(d)
    y = np.median(G, axis=0)
    nu = default_smoothing(G)
    cases = {
        "distances": lambda k: k.distances(G, y),
        "column_sq_norms": lambda k: k.column_sq_norms(G),
        "augmented_column_stats": lambda k: k.augmented_column_stats(G, m, 0.1),
        "column_lower_median": lambda k: k.column_lower_median(G),
        "weiszfeld_solve": lambda k: k.weiszfeld_solve(G, y, nu, 1e-8, 1000),
    }
    backends = ["python"] + (["compiled"] if compiled_available() else [])
    rows = []
    for name, fn in cases.items():
        t = {be: best_of(lambda: fn(get_kernels(be)), repeats) for be in backends}
        ratio = t["python"] / t["compiled"] if "compiled" in t else float("nan")
        rows.append((name, t["python"], t.get("compiled", float("nan")), ratio))
    return rows


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--d", type=int, default=100_000)
    ap.add_argument("--b", type=int, default=32)
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--skip-aggregation", action="store_true")
    args = ap.parse_args(argv)

    print("kernel,python_s,compiled_s,python_over_compiled")
    for name, tp, tc, r in kernel_table(args.d, args.b, args.repeats):
        print(f"{name},{tp:.6g},{tc:.6g},{r:.3f}")
    if args.skip_aggregation:
        return 0
    ks = [max(1, args.d // 100), max(1, args.d // 10), max(1, args.d // 2), args.d]
    for be in ["python"] + (["compiled"] if compiled_available() else []):
        print(f"\n# aggregation, backend={be}")
        sys.stdout.write(bench_to_csv(bench_aggregation(args.d, args.b, ks, trials=args.repeats,
                                                        backend=be)))
    return 0


if __name__ == "__main__":
    sys.exit(main())
