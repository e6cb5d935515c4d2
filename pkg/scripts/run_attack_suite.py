#!/usr/bin/env python3
"""Run the poisoning and gradient-reconstruction comparisons over a seed
range and print per-seed outcomes."""

import argparse

import numpy as np

from dmslearn.threats import dlg_compare_topologies, run_poisoning_experiment


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--epsilon", type=float, default=0.2)
    ap.add_argument("--malicious", type=int, default=3)
    ap.add_argument("--skip-dlg", action="store_true")
    args = ap.parse_args()

    seeds = list(range(args.seeds))
    outcome = run_poisoning_experiment(
        seeds, epsilon=args.epsilon, malicious_count=args.malicious
    )
    print("poisoning inflation (poisoned tail error / clean tail error)")
    print(f"{'seed':>4} {'dms':>10} {'fedavg':>10}")
    for i, seed in enumerate(seeds):
        print(
            f"{seed:>4} {outcome.dms_inflation[i]:>10.2f} "
            f"{outcome.fedavg_inflation[i]:>10.2f}"
        )
    print(f"median: dms={outcome.dms_median:.2f} fedavg={outcome.fedavg_median:.2f}")

    if args.skip_dlg:
        return
    print("\ngradient reconstruction input MSE")
    print(f"{'seed':>4} {'fedavg':>12} {'dms':>12} {'clean':>6}")
    worse = 0
    for seed in seeds:
        report = dlg_compare_topologies(seed)
        worse += report.dms_input_mse > report.fedavg_input_mse
        print(
            f"{seed:>4} {report.fedavg_input_mse:>12.2e} "
            f"{report.dms_input_mse:>12.2e} {str(report.transcript_clean):>6}"
        )
    print(f"dms reconstruction worse than fedavg in {worse}/{len(seeds)} seeds")


if __name__ == "__main__":
    main()
