#!/usr/bin/env python3
"""Rounds-to-tolerance versus agent count for the ring, complete, and
switching strategies, with the linear fit per strategy."""

import argparse
import dataclasses

from dmslearn.experiment import run_scaling_sweep, scaling_sweep_config


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=None, help="override the sweep seed")
    args = ap.parse_args()

    settings = scaling_sweep_config()
    if args.seed is not None:
        settings = dataclasses.replace(settings, seed=args.seed)
    result = run_scaling_sweep(settings)

    sizes = sorted(settings.sizes)
    header = "agents " + " ".join(f"{s:>8}" for s in settings.strategies)
    print(header)
    for n in sizes:
        row = " ".join(f"{result.rounds[s][n]:>8}" for s in settings.strategies)
        print(f"{n:>6} {row}")
    for strategy in settings.strategies:
        slope, intercept, r2 = result.fit(strategy)
        print(f"{strategy}: slope={slope:.3f} intercept={intercept:.1f} r2={r2:.4f}")


if __name__ == "__main__":
    main()
