#!/usr/bin/env python3
"""Train the survival model with the reference hyperparameters and emit
per-timestep prediction histories for a handful of passengers.

The defaults reproduce the standard run: Q=15 neurons, 30 sweeps,
40 epochs of AdamW (lr 0.01, weight decay 0.001, lr decay 0.9/epoch).
Point --train at a labeled passenger CSV (Kaggle train.csv layout), or
set WEBNN_TITANIC_CSV.
"""

import argparse
import os
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from webnn.cli import main as cli


def default_csv():
    env = os.environ.get("WEBNN_TITANIC_CSV")
    if env:
        return env
    return "data/titanic/train.csv"


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--train", default=default_csv(), help="labeled passenger CSV")
    parser.add_argument("--out", default="runs/titanic", help="run directory")
    parser.add_argument("--seed", type=int, default=42)
    parser.add_argument("--history-samples", type=int, default=16,
                        help="passengers to include in history.json")
    args = parser.parse_args()

    code = cli([
        "train", "titanic",
        "--train", args.train,
        "--out", args.out,
        "--seed", str(args.seed),
    ])
    if code != 0:
        sys.exit(code)

    code = cli([
        "history",
        "--checkpoint", str(Path(args.out) / "checkpoint-best.wnn"),
        "--data", args.train,
        "--limit", str(args.history_samples),
        "--out", str(Path(args.out) / "history.json"),
    ])
    sys.exit(code)
