#!/usr/bin/env python3
"""Wall-time comparison of linear vs dense all-pair attention.

Prints a table of median forward times; the dense oracle is skipped above
--dense-limit nodes to keep memory bounded.
"""

import argparse
import time

import numpy as np

from cellgraph.autodiff import Tensor
from cellgraph.models import linear_attention


def median_time(fn, reps):
    fn()  # warm-up
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sizes", default="1000,5000,10000,20000,40000")
    ap.add_argument("--dim", type=int, default=32)
    ap.add_argument("--reps", type=int, default=7)
    ap.add_argument("--dense-limit", type=int, default=10000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    d = args.dim
    wq, wk, wv = (rng.normal(size=(d, d)) for _ in range(3))
    print(f"{'N':>8} {'linear (ms)':>12} {'dense (ms)':>12} {'speedup':>8}")
    for n in (int(s) for s in args.sizes.split(",")):
        h = rng.normal(size=(n, d))

        def attn(mode):
            return lambda: linear_attention(Tensor(h), Tensor(wq), Tensor(wk), Tensor(wv), mode)

        t_lin = median_time(attn("linear"), args.reps)
        if n <= args.dense_limit:
            t_dense = median_time(attn("dense_oracle"), args.reps)
            print(f"{n:>8} {t_lin * 1e3:>12.2f} {t_dense * 1e3:>12.2f} {t_dense / t_lin:>8.1f}x")
        else:
            print(f"{n:>8} {t_lin * 1e3:>12.2f} {'skipped':>12} {'':>8}")


if __name__ == "__main__":
    main()
