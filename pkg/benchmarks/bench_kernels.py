"""Compare the compiled and numpy matching kernels.

Times ``pair_scan`` (all pairs of a label bucket, the batch and indexed
paths) and ``query_scan`` (one inquiry against the whole database, the
brute incremental path) on random data, and checks that every backend
returns the same rows.

    python benchmarks/bench_kernels.py --sizes 500,2000 --queries 200
"""

from __future__ import annotations

import argparse
import statistics
import time

import numpy as np

from markseq import kernels


def random_database(n: int, k: int, alphabet: int, rng) -> tuple[np.ndarray, np.ndarray]:
    labels = rng.integers(0, alphabet, size=(n, k)).astype(np.int32)
    gaps = rng.uniform(5.0, 25.0, size=(n, k - 1))
    return labels, gaps


def time_call(fn, repeats: int) -> float:
    """Median wall time of ``repeats`` calls, in seconds."""
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--sizes", default="250,1000,4000", help="comma list of database sizes for pair_scan")
    parser.add_argument("--query-size", type=int, default=10_000, help="database size for query_scan")
    parser.add_argument("--queries", type=int, default=200, help="query_scan calls per backend")
    parser.add_argument("--k", type=int, default=4)
    parser.add_argument("--alphabet", type=int, default=2, help="label classes; small values make many label hits")
    parser.add_argument("--epsilon", type=float, default=1.0)
    parser.add_argument("--repeats", type=int, default=3)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    backends = kernels.available()
    rng = np.random.default_rng(args.seed)
    print(f"backends: {', '.join(backends)} (default {kernels.BACKEND})")
    print(f"{'kernel':<11}{'N':>8}  " + "".join(f"{b + ' ms':>14}" for b in backends) + f"{'speedup':>10}")

    for n in (int(v) for v in args.sizes.split(",")):
        labels, gaps = random_database(n, args.k, args.alphabet, rng)
        results = {b: kernels.get(b).pair_scan(labels, gaps, args.epsilon) for b in backends}
        ref = results[backends[0]]
        for b in backends[1:]:
            if not (np.array_equal(results[b][0], ref[0]) and np.array_equal(results[b][1], ref[1])):
                raise SystemExit(f"pair_scan: backend {b} disagrees at N={n}")
        ms = {b: 1e3 * time_call(lambda b=b: kernels.get(b).pair_scan(labels, gaps, args.epsilon), args.repeats)
              for b in backends}
        _row("pair_scan", n, backends, ms)

    n = args.query_size
    labels, gaps = random_database(n, args.k, args.alphabet, rng)
    queries = random_database(args.queries, args.k, args.alphabet, rng)
    ms = {}
    for b in backends:
        kern = kernels.get(b)
        per = []
        for ql, qg in zip(*queries):
            t0 = time.perf_counter()
            kern.query_scan(ql, qg, labels, gaps, n, args.epsilon)
            per.append(time.perf_counter() - t0)
        ms[b] = 1e3 * statistics.median(per)
    for ql, qg in zip(*queries):
        hits = [kernels.get(b).query_scan(ql, qg, labels, gaps, n, args.epsilon) for b in backends]
        if any(not np.array_equal(h, hits[0]) for h in hits[1:]):
            raise SystemExit("query_scan: backends disagree")
    _row("query_scan", n, backends, ms)
    return 0


def _row(name, n, backends, ms):
    cells = "".join(f"{ms[b]:>14.3f}" for b in backends)
    speed = ""
    if "cython" in ms and "python" in ms and ms["cython"] > 0:
        speed = f"{ms['python'] / ms['cython']:>9.1f}x"
    print(f"{name:<11}{n:>8}  {cells}{speed}")


if __name__ == "__main__":
    raise SystemExit(main())
