"""Compare the numba kernels against the pure-numpy fallback.

Run each backend in a separate process so the SYMSLICE_BACKEND env var is
honored at import time:

    python3 benchmarks/bench_kernels.py            # both backends
    SYMSLICE_BACKEND=numpy python3 benchmarks/bench_kernels.py --single
"""

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np


def bench_conv(reps=10):
    from symslice.autograd import kernels

    rng = np.random.default_rng(0)
    x = rng.normal(size=(8, 21, 32, 32))  # batch of slice stacks
    w = rng.normal(size=(16, 21, 3, 3))
    b = rng.normal(size=16)
    gy = rng.normal(size=(8, 16, 32, 32))
    # warm up JIT before timing
    for _ in range(2):
        y, col = kernels.conv2d_forward(x, w, b, 1, 1, return_col=True)
        kernels.conv2d_backward(x, w, gy, 1, 1, col=col)
    fwd, bwd = [], []
    for _ in range(reps):
        t0 = time.perf_counter()
        y, col = kernels.conv2d_forward(x, w, b, 1, 1, return_col=True)
        t1 = time.perf_counter()
        kernels.conv2d_backward(x, w, gy, 1, 1, col=col)
        t2 = time.perf_counter()
        fwd.append(t1 - t0)
        bwd.append(t2 - t1)
    return min(fwd), min(bwd)


def bench_kd(reps=10):
    from symslice.kdtree import KdIndex

    rng = np.random.default_rng(1)
    pts = rng.normal(size=(2048, 3))
    queries = rng.normal(size=(1000, 3))
    idx = KdIndex(pts)
    idx.nearest(queries)  # warm up
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        idx.nearest(queries)
        times.append(time.perf_counter() - t0)
    return min(times)


def run_single():
    from symslice.autograd.kernels import backend_name

    cf, cb = bench_conv()
    kd = bench_kd()
    print(
        json.dumps(
            {
                "backend": backend_name(),
                "conv_forward_s": cf,
                "conv_backward_s": cb,
                "kd_1000_queries_s": kd,
            }
        )
    )


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--single", action="store_true", help="bench the current backend only")
    args = ap.parse_args()
    if args.single:
        run_single()
        return
    rows = []
    for backend in ("numba", "numpy"):
        env = dict(os.environ, SYMSLICE_BACKEND=backend)
        out = subprocess.run(
            [sys.executable, os.path.abspath(__file__), "--single"],
            env=env,
            capture_output=True,
            text=True,
            check=True,
        )
        rows.append(json.loads(out.stdout.strip().splitlines()[-1]))
    print(f"{'backend':<8} {'conv fwd':>10} {'conv bwd':>10} {'kd 1k queries':>14}")
    for r in rows:
        print(
            f"{r['backend']:<8} {r['conv_forward_s'] * 1e3:>8.2f}ms "
            f"{r['conv_backward_s'] * 1e3:>8.2f}ms {r['kd_1000_queries_s'] * 1e3:>12.2f}ms"
        )


if __name__ == "__main__":
    main()
