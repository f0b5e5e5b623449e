#!/usr/bin/env python3
"""Reproduce the loss-function analysis: misalignment and sharpness sweeps.

Writes plot-ready CSVs (sweep_var, sed, kl, js, ws) and prints the built-in
shape self-checks.

    python scripts/run_loss_analysis.py [--out results/loss_curves]
"""

import argparse
import sys

from afkit.cli import main as afkit_main


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="results/loss_curves")
    parser.add_argument("--max-shift", type=int, default=50)
    parser.add_argument("--sigma2", type=float, default=0.1)
    args = parser.parse_args()
    return afkit_main([
        "loss-curves",
        "--out", args.out,
        "--max-shift", str(args.max_shift),
        "--sigma2", str(args.sigma2),
    ])


if __name__ == "__main__":
    sys.exit(main())
