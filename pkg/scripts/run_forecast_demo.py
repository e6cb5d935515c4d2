#!/usr/bin/env python3
"""Train the load-forecast task under every strategy and print the
error/communication comparison tables."""

import argparse
from pathlib import Path

from dmslearn.config import parse_config
from dmslearn.experiment import emit_tables, forecast_comparison


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--rounds", type=int, default=300)
    ap.add_argument("--households", type=int, default=100)
    ap.add_argument("--days", type=int, default=10)
    ap.add_argument("--pick", type=int, default=30)
    ap.add_argument("--out", default="out/forecast")
    args = ap.parse_args()

    base = parse_config(
        {
            "strategy": "dms",
            "task": "forecast",
            "seed": args.seed,
            "gamma": 0.05,
            "rounds": args.rounds,
            "data": {
                "households": args.households,
                "days": args.days,
                "clusters": 3,
                "pick": args.pick,
            },
        }
    )
    results = forecast_comparison(base, out_dir=args.out)
    paths = emit_tables(results, args.out)

    print(f"{'strategy':<12} {'train':>10} {'val':>10} {'test':>10} {'messages':>12}")
    for name, res in results.items():
        s = res.summary
        print(
            f"{name:<12} {s['train_mse']:>10.5f} {s['val_mse']:>10.5f} "
            f"{s['test_mse']:>10.5f} {s['total_messages']:>12}"
        )
    for label, path in paths.items():
        print(f"{label}: {Path(path)}")


if __name__ == "__main__":
    main()
