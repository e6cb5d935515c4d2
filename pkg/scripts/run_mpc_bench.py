#!/usr/bin/env python3
"""Secure-aggregation cost grid: message and byte counts per party count."""

import argparse
import sys

from dmslearn.cli import main as cli_main


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--dim", type=int, default=8)
    ap.add_argument("--out", default="out/mpc-bench")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    return cli_main(
        ["mpc-bench", "--dim", str(args.dim), "--out", args.out, "--seed", str(args.seed)]
    )


if __name__ == "__main__":
    sys.exit(main())
