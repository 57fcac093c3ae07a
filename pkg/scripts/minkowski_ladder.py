"""Minkowski rung values of single traces over a wide r ladder.

Used to pick the scaling window: rungs near the curve diameter show a
finite-size crossover, rungs near the point spacing show discretisation.

    python scripts/minkowski_ladder.py --curves 8 --dt 2.5e-5
"""
import argparse
import time

import numpy as np

from sle4.harness import stream_rng
from sle4.loewner import LoewnerChain, sample_driver, trace
from sle4.measure import minkowski_estimate


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--curves", type=int, default=8)
    ap.add_argument("--t", type=float, default=1.0)
    ap.add_argument("--dt", type=float, default=2.5e-5)
    ap.add_argument("--seed", type=int, default=100)
    ap.add_argument("--dims", type=float, nargs="+", default=[1.4, 1.5, 1.6])
    args = ap.parse_args()
    r = tuple(2.0 ** -k for k in range(2, 7))
    vals = {d: [] for d in args.dims}
    t0 = time.time()
    for i in range(args.curves):
        ch = LoewnerChain(4.0, sample_driver(4.0, args.t, args.dt, stream_rng(args.seed, i)))
        pts = trace(ch).points
        for d in vals:
            vals[d].append(minkowski_estimate(pts, d, r))
        print(f"curve {i}: spacing {np.median(np.abs(np.diff(pts))):.4g}, "
              f"{time.time() - t0:.0f}s", flush=True)
    print("r    " + " ".join(f"{x:9.5f}" for x in r))
    for d, v in vals.items():
        v = np.array(v)
        se = v.std(0, ddof=1) / np.sqrt(len(v)) if len(v) > 1 else np.zeros(len(r))
        print(f"{d:<4} " + " ".join(f"{m:9.4f}" for m in v.mean(0)))
        print("  se " + " ".join(f"{s:9.4f}" for s in se))


if __name__ == "__main__":
    main()
