#!/usr/bin/env python3
"""Train the digit model and emit per-timestep prediction histories.

The default is the desk preset (stride-2 first conv, Q=100) on a 10,000
image subset: a single-core CPU run that finishes in minutes. Pass
--preset paper --limit 0 for the full-size configuration (Q=500, all
60,000 images) if you have the time and memory for it.

Point --images/--labels at uncompressed IDX files, or set
WEBNN_MNIST_DIR to the directory holding train-images-idx3-ubyte and
train-labels-idx1-ubyte.
"""

import argparse
import os
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from webnn.cli import main as cli


def default_dir():
    return os.environ.get("WEBNN_MNIST_DIR", "data/mnist")


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--images", default=None, help="IDX image file")
    parser.add_argument("--labels", default=None, help="IDX label file")
    parser.add_argument("--preset", choices=["paper", "desk"], default="desk")
    parser.add_argument("--limit", type=int, default=10000,
                        help="training subset size; 0 = use every image")
    parser.add_argument("--out", default=None, help="run directory")
    parser.add_argument("--seed", type=int, default=42)
    parser.add_argument("--history-samples", type=int, default=32,
                        help="images to include in history.json")
    args = parser.parse_args()

    images = args.images or str(Path(default_dir()) / "train-images-idx3-ubyte")
    labels = args.labels or str(Path(default_dir()) / "train-labels-idx1-ubyte")
    out = args.out or f"runs/mnist-{args.preset}"

    train_args = [
        "train", "mnist",
        "--preset", args.preset,
        "--images", images,
        "--labels", labels,
        "--out", out,
        "--seed", str(args.seed),
    ]
    if args.limit > 0:
        train_args += ["--limit", str(args.limit)]
    code = cli(train_args)
    if code != 0:
        sys.exit(code)

    code = cli([
        "history",
        "--checkpoint", str(Path(out) / "checkpoint-best.wnn"),
        "--images", images,
        "--labels", labels,
        "--limit", str(args.history_samples),
        "--out", str(Path(out) / "history.json"),
    ])
    sys.exit(code)
