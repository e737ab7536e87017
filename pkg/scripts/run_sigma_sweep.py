#!/usr/bin/env python3
"""Outcome-noise sweep: MSE of both estimators as sigma_eps grows.

    python scripts/run_sigma_sweep.py --sigmas 1 3 10 --out sigma_sweep.csv
"""

import argparse
import dataclasses
import sys

from orthoplr.harness import ExperimentConfig, concat_results, sweep, write_results


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sigmas", type=float, nargs="+", default=[1.0, 3.0, 10.0])
    ap.add_argument("--seed", type=int, default=2026)
    ap.add_argument("--out", default="sigma_sweep.csv")
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args(argv)

    base = ExperimentConfig(
        n=2000,
        p=200,
        sparsity_grid=(20, 40, 80),
        n_instances=3,
        n_reps=50,
        seed=args.seed,
        threads=args.threads,
    )
    points = sweep(base, "sigma_eps", args.sigmas)
    merged = concat_results(points)
    write_results(merged, args.out, "csv")
    print(f"wrote {len(merged.cells)} cells to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
