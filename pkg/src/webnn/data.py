"""Dataset ingestion: Kaggle-style survival CSV and IDX-format digit
files, plus deterministic splitting, preprocessing, and batching."""

import csv
import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np


class DataFormatError(ValueError):
    """Input file does not match the expected layout."""


# --- tabular survival data ---------------------------------------------------

TRAIN_HEADER = [
    "PassengerId", "Survived", "Pclass", "Name", "Sex", "Age",
    "SibSp", "Parch", "Ticket", "Fare", "Cabin", "Embarked",
]
TEST_HEADER = [c for c in TRAIN_HEADER if c != "Survived"]

FEATURE_NAMES = ["pclass", "sex", "age", "sibsp", "parch", "fare", "embarked", "cabin_known"]

_SEX_CODES = {"male": 0.0, "female": 1.0}
_EMBARKED_CODES = {"S": 0.0, "C": 1.0, "Q": 2.0}


@dataclass
class TitanicRecord:
    passenger_id: int
    survived: Optional[int]
    pclass: int
    name: str
    sex: str
    age: Optional[float]
    sibsp: int
    parch: int
    ticket: str
    fare: Optional[float]
    cabin: Optional[str]
    embarked: Optional[str]


def _parse_row(values, line_num):
    def req_int(field, text):
        try:
            return int(text)
        except ValueError:
            raise DataFormatError(f"line {line_num}: {field} must be an integer, got {text!r}")

    def opt_float(field, text):
        if text == "":
            return None
        try:
            return float(text)
        except ValueError:
            raise DataFormatError(f"line {line_num}: {field} must be a number, got {text!r}")

    survived = None
    if values["Survived"] is not None:
        survived = req_int("Survived", values["Survived"])
        if survived not in (0, 1):
            raise DataFormatError(f"line {line_num}: Survived must be 0 or 1, got {survived}")
    return TitanicRecord(
        passenger_id=req_int("PassengerId", values["PassengerId"]),
        survived=survived,
        pclass=req_int("Pclass", values["Pclass"]),
        name=values["Name"],
        sex=values["Sex"],
        age=opt_float("Age", values["Age"]),
        sibsp=req_int("SibSp", values["SibSp"]),
        parch=req_int("Parch", values["Parch"]),
        ticket=values["Ticket"],
        fare=opt_float("Fare", values["Fare"]),
        cabin=values["Cabin"] or None,
        embarked=values["Embarked"] or None,
    )


def load_titanic_csv(path):
    """Parse a labeled (train) or unlabeled (test) passenger CSV into
    typed records; quoted names containing commas are handled by the
    CSV layer. Errors carry the 1-based line number."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: empty file, expected a CSV header")
        if header == TRAIN_HEADER:
            columns = TRAIN_HEADER
        elif header == TEST_HEADER:
            columns = TEST_HEADER
        else:
            raise DataFormatError(
                f"{path}: unknown header {header}, expected {TRAIN_HEADER} or {TEST_HEADER}"
            )
        records = []
        seen_ids = set()
        for row in reader:
            if not row:
                continue
            if len(row) != len(columns):
                raise DataFormatError(
                    f"line {reader.line_num}: expected {len(columns)} fields, got {len(row)}"
                )
            values = dict(zip(columns, row))
            values.setdefault("Survived", None)
            record = _parse_row(values, reader.line_num)
            if record.passenger_id in seen_ids:
                raise DataFormatError(
                    f"line {reader.line_num}: duplicate PassengerId {record.passenger_id}"
                )
            seen_ids.add(record.passenger_id)
            records.append(record)
    return records


@dataclass
class FeatureStats:
    """Standardization and imputation constants fitted on the train split."""

    mean: np.ndarray  # (8,)
    std: np.ndarray  # (8,)
    age_median: float
    fare_median: float

    def to_dict(self):
        return {
            "mean": [float(v) for v in self.mean],
            "std": [float(v) for v in self.std],
            "age_median": float(self.age_median),
            "fare_median": float(self.fare_median),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            mean=np.asarray(d["mean"], dtype=np.float64),
            std=np.asarray(d["std"], dtype=np.float64),
            age_median=float(d["age_median"]),
            fare_median=float(d["fare_median"]),
        )


def _encode_records(records):
    raw = np.zeros((len(records), 8), dtype=np.float64)
    for row, rec in enumerate(records):
        if rec.sex not in _SEX_CODES:
            raise DataFormatError(
                f"passenger {rec.passenger_id}: unknown Sex value {rec.sex!r}"
            )
        if rec.embarked is not None and rec.embarked not in _EMBARKED_CODES:
            raise DataFormatError(
                f"passenger {rec.passenger_id}: unknown Embarked value {rec.embarked!r}"
            )
        raw[row] = [
            float(rec.pclass),
            _SEX_CODES[rec.sex],
            rec.age if rec.age is not None else np.nan,
            float(rec.sibsp),
            float(rec.parch),
            rec.fare if rec.fare is not None else np.nan,
            _EMBARKED_CODES[rec.embarked] if rec.embarked is not None else 0.0,
            0.0 if rec.cabin is None else 1.0,
        ]
    return raw


def preprocess_titanic(records, stats=None):
    """Encode records into the fixed 8-column feature matrix.

    Column order: class, sex, age, siblings/spouses, parents/children,
    fare, embarkation port, cabin-known flag. Age and fare gaps are
    filled with medians, then every column is standardized. Without
    `stats` the medians and moments are fitted on the given records;
    with `stats` they are applied unchanged, so validation and test
    features never leak into the fit.

    Returns (features (N,8) f32, labels (N,1) f32 or None, stats).
    """
    if not records:
        raise ValueError("no records to preprocess")
    raw = _encode_records(records)

    if stats is None:
        age_median = float(np.nanmedian(raw[:, 2]))
        fare_median = float(np.nanmedian(raw[:, 5]))
        if np.isnan(age_median):
            age_median = 0.0
        if np.isnan(fare_median):
            fare_median = 0.0
        filled = raw.copy()
        filled[np.isnan(filled[:, 2]), 2] = age_median
        filled[np.isnan(filled[:, 5]), 5] = fare_median
        mean = filled.mean(axis=0)
        std = filled.std(axis=0)
        std[std == 0.0] = 1.0
        stats = FeatureStats(mean=mean, std=std, age_median=age_median, fare_median=fare_median)
    else:
        filled = raw.copy()
        filled[np.isnan(filled[:, 2]), 2] = stats.age_median
        filled[np.isnan(filled[:, 5]), 5] = stats.fare_median

    features = ((filled - stats.mean) / stats.std).astype(np.float32)

    labeled = [rec.survived is not None for rec in records]
    if all(labeled):
        labels = np.array([[rec.survived] for rec in records], dtype=np.float32)
    elif not any(labeled):
        labels = None
    else:
        raise ValueError("records mix labeled and unlabeled rows")
    return features, labels, stats


# --- digit image data --------------------------------------------------------

IMAGES_MAGIC = 2051
LABELS_MAGIC = 2049


@dataclass
class MnistSet:
    images: np.ndarray  # (N, 1, H, W) float32 in [0, 1]
    labels: np.ndarray  # (N,) int64 in [0, 9]


def _read_exact(fh, count, path, what):
    buf = fh.read(count)
    if len(buf) != count:
        raise DataFormatError(f"{path}: truncated {what}, wanted {count} bytes, got {len(buf)}")
    return buf


def load_mnist_idx(images_path, labels_path):
    """Load big-endian IDX image/label files; pixels are scaled by 255."""
    with open(images_path, "rb") as fh:
        magic, n, h, w = struct.unpack(">IIII", _read_exact(fh, 16, images_path, "header"))
        if magic != IMAGES_MAGIC:
            raise DataFormatError(
                f"{images_path}: bad images magic, expected {IMAGES_MAGIC}, found {magic}"
            )
        raw = _read_exact(fh, n * h * w, images_path, "pixel data")
    images = np.frombuffer(raw, dtype=np.uint8).reshape(n, 1, h, w).astype(np.float32) / 255.0

    with open(labels_path, "rb") as fh:
        magic, n_labels = struct.unpack(">II", _read_exact(fh, 8, labels_path, "header"))
        if magic != LABELS_MAGIC:
            raise DataFormatError(
                f"{labels_path}: bad labels magic, expected {LABELS_MAGIC}, found {magic}"
            )
        raw = _read_exact(fh, n_labels, labels_path, "label data")
    labels = np.frombuffer(raw, dtype=np.uint8).astype(np.int64)

    if n != n_labels:
        raise DataFormatError(
            f"image/label count mismatch: {images_path} has {n}, {labels_path} has {n_labels}"
        )
    if labels.size and (labels.min() < 0 or labels.max() > 9):
        raise DataFormatError(f"{labels_path}: labels outside [0, 9]")
    return MnistSet(images=images, labels=labels)


# --- splitting and batching --------------------------------------------------

@dataclass
class DatasetSplit:
    """One split of constant-input data: features (or images) plus labels."""

    features: np.ndarray
    labels: Optional[np.ndarray]

    def __len__(self):
        return self.features.shape[0]


def split_indices(n, val_fraction=0.2, seed=42):
    """Index arrays (train, val) for a seeded permutation split of n items;
    the val split takes the first floor(n * fraction) of the permutation."""
    if not 0.0 < val_fraction < 1.0:
        raise ValueError(f"val_fraction must lie in (0, 1), got {val_fraction}")
    n_val = int(n * val_fraction)
    if n_val < 1 or n - n_val < 1:
        raise ValueError(f"fraction {val_fraction} of {n} samples leaves an empty split")
    perm = np.random.default_rng(seed).permutation(n)
    return perm[n_val:], perm[:n_val]


def split_train_val(features, labels, val_fraction=0.2, seed=42):
    """Seeded permutation split; the val split takes floor(N * fraction)."""
    train_idx, val_idx = split_indices(features.shape[0], val_fraction, seed)
    pick = lambda idx: DatasetSplit(
        features=features[idx], labels=None if labels is None else labels[idx]
    )
    return pick(train_idx), pick(val_idx)


def batches(split, batch_size, shuffle_seed=None):
    """Slice one epoch of (X, y) batches covering every sample exactly
    once; the last batch may be short. Shuffles only when a seed is given."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    n = len(split)
    order = np.arange(n)
    if shuffle_seed is not None:
        order = np.random.default_rng(shuffle_seed).permutation(n)
    out = []
    for start in range(0, n, batch_size):
        idx = order[start : start + batch_size]
        y = None if split.labels is None else split.labels[idx]
        out.append((split.features[idx], y))
    return out
