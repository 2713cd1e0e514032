#!/usr/bin/env python3
"""Compare the compiled kernel backend against the pure-numpy fallback.

Times the two hot kernels (pairwise squared distances, Lloyd assignment
passes) and a full k-means call routed through each backend, and checks the
results agree.

Usage: python3 benchmarks/kernel_bench.py [--n 480] [--dim 8] [--k 4]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from davalid import _kernels
from davalid.numerics import ClusterConfig, kmeans


def _time(fn, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("--n", type=int, default=480)
    parser.add_argument("--dim", type=int, default=8)
    parser.add_argument("--k", type=int, default=4)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    if _kernels.compiled_backend is None:
        print("compiled backend not built; nothing to compare")
        return 1

    rng = np.random.default_rng(0)
    x = rng.normal(size=(args.n, args.dim))
    centers = rng.normal(size=(args.k, args.dim))

    print(f"n={args.n} dim={args.dim} k={args.k} (best of {args.repeats})")
    header = f"{'kernel':<18}{'python':>12}{'compiled':>12}{'speedup':>10}"
    print(header)
    print("-" * len(header))

    rows = [
        ("pairwise_sqdist",
         lambda be: be.pairwise_sqdist(x, x)),
        ("lloyd_step",
         lambda be: be.lloyd_step(x, centers)),
    ]
    for name, call in rows:
        t_py = _time(lambda: call(_kernels.py_backend), args.repeats)
        t_c = _time(lambda: call(_kernels.compiled_backend), args.repeats)
        print(f"{name:<18}{t_py * 1e3:>10.2f}ms{t_c * 1e3:>10.2f}ms"
              f"{t_py / t_c:>9.1f}x")
        out_py = call(_kernels.py_backend)
        out_c = call(_kernels.compiled_backend)
        if isinstance(out_py, tuple):
            agree = all(np.allclose(a, b, atol=1e-9)
                        for a, b in zip(out_py, out_c))
        else:
            agree = np.allclose(out_py, out_c, atol=1e-9)
        if not agree:
            print(f"  !! backends disagree on {name}")
            return 1

    cfg = ClusterConfig(k=args.k, restarts=10, seed=1)
    saved = _kernels.pairwise_sqdist, _kernels.lloyd_step
    results = {}
    for label, backend in (("python", _kernels.py_backend),
                           ("compiled", _kernels.compiled_backend)):
        _kernels.pairwise_sqdist = backend.pairwise_sqdist
        _kernels.lloyd_step = backend.lloyd_step
        results[label] = _time(lambda: kmeans(x, cfg), max(2, args.repeats // 2))
    _kernels.pairwise_sqdist, _kernels.lloyd_step = saved
    speedup = results["python"] / results["compiled"]
    print(f"{'kmeans (10 runs)':<18}{results['python'] * 1e3:>10.2f}ms"
          f"{results['compiled'] * 1e3:>10.2f}ms{speedup:>9.1f}x")
    print("backends agree")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
