#!/usr/bin/env python3
"""Run the full desk-scale experiment: corpus, training, clip-length sweep.

Generates the default synthetic corpus (four rhythm classes, 20 subjects per
class, 30 s clips at SNR 0 dB), trains the peak estimator with the selected
loss, and evaluates heart-rate / IBI errors plus the two classification tasks
at each clip length. Expect roughly 10-15 minutes on a laptop CPU.

    python scripts/run_af_experiment.py [--out results/af_experiment] [--seed 7]
"""

import argparse
import sys
from pathlib import Path

from afkit.cli import main as afkit_main


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="results/af_experiment")
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--loss", default="ws", choices=("sed", "kl", "js", "ws"))
    parser.add_argument("--subjects", type=int, default=20)
    parser.add_argument("--snr", type=float, default=0.0)
    parser.add_argument("--skip-gen", action="store_true",
                        help="reuse an existing corpus under <out>/corpus")
    args = parser.parse_args()

    out = Path(args.out)
    corpus = out / "corpus"
    if not args.skip_gen:
        rc = afkit_main([
            "gen",
            "--classes", "healthy_rest,healthy_exercise,sr,af",
            "--subjects", str(args.subjects),
            "--clips", "4",
            "--dur", "30",
            "--snr", str(args.snr),
            "--seed", str(args.seed),
            "--out", str(corpus),
        ])
        if rc != 0:
            return rc
    return afkit_main([
        "pipeline",
        "--corpus", str(corpus),
        "--clip-lengths", "10,20,30",
        "--tasks", "af-vs-healthy,af-vs-sr",
        "--loss", args.loss,
        "--seed", str(args.seed),
        "--out", str(out),
    ])


if __name__ == "__main__":
    sys.exit(main())
