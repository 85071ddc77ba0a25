"""Shared fixtures: synthetic passenger CSVs, synthetic IDX digit files,
and discovery of real datasets supplied by the user.

Real data files are never bundled; tests that need the actual Kaggle or
MNIST corpora look for them via environment variables or ./data and
skip loudly when absent.
"""

import csv
import os
import struct
from pathlib import Path

import numpy as np
import pytest

TRAIN_HEADER = [
    "PassengerId", "Survived", "Pclass", "Name", "Sex", "Age",
    "SibSp", "Parch", "Ticket", "Fare", "Cabin", "Embarked",
]

# one verdict line per acceptance gate, echoed after the test summary so
# they stay visible under pytest's output capture
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance verdicts")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

_LAST_NAMES = ["Braund", "Cumings", "Heikkinen", "Futrelle", "Allen", "Moran", "McCarthy"]
_FIRST_NAMES = ["Owen Harris", "John Bradley", "Laina", "Jacques Heath", "William Henry"]


def synth_titanic_rows(n, seed=0, labeled=True):
    """Deterministic passenger rows in the Kaggle layout. Survival is a
    noisy logistic of sex, class, and age so the task is learnable."""
    rng = np.random.default_rng(seed)
    rows = []
    for pid in range(1, n + 1):
        pclass = int(rng.integers(1, 4))
        sex = "female" if rng.random() < 0.35 else "male"
        age_missing = rng.random() < 0.2
        age = float(np.round(rng.uniform(1, 70), 1))
        sibsp = int(rng.integers(0, 4))
        parch = int(rng.integers(0, 3))
        fare_missing = rng.random() < 0.02
        fare = float(np.round(rng.lognormal(2.5, 0.9), 4))
        cabin_known = rng.random() < 0.25
        embarked = rng.choice(["S", "S", "S", "C", "Q", ""])
        title = "Mrs." if sex == "female" else "Mr."
        name = f"{rng.choice(_LAST_NAMES)}, {title} {rng.choice(_FIRST_NAMES)}"

        score = (
            2.2 * (sex == "female")
            - 0.75 * (pclass - 2)
            - 0.018 * (30.0 if age_missing else age)
            + 0.9 * cabin_known
            + rng.normal(0, 0.9)
        )
        survived = int(score > 0)

        row = {
            "PassengerId": str(pid),
            "Survived": str(survived),
            "Pclass": str(pclass),
            "Name": name,
            "Sex": sex,
            "Age": "" if age_missing else str(age),
            "SibSp": str(sibsp),
            "Parch": str(parch),
            "Ticket": f"A/{rng.integers(10000, 99999)}",
            "Fare": "" if fare_missing else str(fare),
            "Cabin": f"C{rng.integers(1, 150)}" if cabin_known else "",
            "Embarked": str(embarked),
        }
        if not labeled:
            row.pop("Survived")
        rows.append(row)
    return rows


def write_titanic_csv(path, rows):
    header = TRAIN_HEADER if "Survived" in rows[0] else [c for c in TRAIN_HEADER if c != "Survived"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=header)
        writer.writeheader()
        writer.writerows(rows)
    return path


def write_idx(images_path, labels_path, images, labels):
    """Independent big-endian IDX writer used as the round-trip oracle.

    images: uint8 array (N, H, W); labels: int array (N,).
    """
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, h, w = images.shape
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", 2051, n, h, w))
        fh.write(images.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", 2049, labels.shape[0]))
        fh.write(labels.tobytes())
    return images_path, labels_path


@pytest.fixture
def titanic_csv(tmp_path):
    return write_titanic_csv(tmp_path / "train.csv", synth_titanic_rows(240, seed=5))


@pytest.fixture(scope="session")
def digits_as_idx(tmp_path_factory):
    """Stand-in digit corpus written as real IDX files: the sklearn 8x8
    digits upscaled to 28x28. Not MNIST, but byte-compatible with it."""
    from sklearn.datasets import load_digits

    raw = load_digits()
    small = raw.images  # (1797, 8, 8), values 0..16
    scaled = np.clip(small * 255.0 / 16.0, 0, 255).astype(np.uint8)
    big = np.repeat(np.repeat(scaled, 3, axis=1), 3, axis=2)  # 24x24
    canvas = np.zeros((big.shape[0], 28, 28), dtype=np.uint8)
    canvas[:, 2:26, 2:26] = big
    out = tmp_path_factory.mktemp("digits-idx")
    return write_idx(
        out / "train-images-idx3-ubyte",
        out / "train-labels-idx1-ubyte",
        canvas,
        raw.target,
    )


def find_real_titanic_csv():
    """Path to the real Kaggle train.csv, or None with a reason string."""
    env = os.environ.get("WEBNN_TITANIC_CSV")
    candidates = [Path(env)] if env else []
    candidates += [Path("data/titanic/train.csv"), Path("data/train.csv")]
    for path in candidates:
        if path.is_file():
            return path, None
    return None, (
        "real Kaggle passenger data not present; set WEBNN_TITANIC_CSV or place "
        "train.csv under ./data/titanic/ (no network access in this environment)"
    )


def find_real_mnist_dir():
    """Directory holding the four standard IDX files, or None with a reason."""
    env = os.environ.get("WEBNN_MNIST_DIR")
    candidates = [Path(env)] if env else []
    candidates += [Path("data/mnist")]
    needed = ["train-images-idx3-ubyte", "train-labels-idx1-ubyte"]
    for d in candidates:
        if d.is_dir() and all((d / f).is_file() for f in needed):
            return d, None
    return None, (
        "real MNIST IDX files not present; set WEBNN_MNIST_DIR or place the "
        "uncompressed files under ./data/mnist/ (no network access in this environment)"
    )
