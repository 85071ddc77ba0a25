"""Command line for training, evaluation, prediction-history emission,
and the naive-vs-vectorized step benchmark.

Exit codes: 0 success, 2 bad configuration or data format, 3 missing
input file, 4 bad checkpoint, 5 step-equivalence failure.
"""

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .data import (
    DataFormatError,
    DatasetSplit,
    FeatureStats,
    load_mnist_idx,
    load_titanic_csv,
    preprocess_titanic,
    split_indices,
    split_train_val,
)
from .models import (
    CheckpointError,
    MnistModel,
    TitanicModel,
    build_mnist_model,
    build_titanic_model,
    load_checkpoint,
    mnist_web_config,
    predict_history,
    save_checkpoint,
    titanic_web_config,
)
from .tensor import Tensor, no_grad
from .training import TrainConfig, evaluate, fit, load_snapshot
from .web import EquivalenceError, WebConfig, bench_step

METRICS_HEADER = ["epoch", "lr", "train_loss", "train_acc", "val_loss", "val_acc"]

TASK_DEFAULTS = {
    "titanic": {"epochs": 40, "batch": 64, "lr": 0.01, "wd": 0.001, "sched_gamma": 0.9},
    "mnist": {"epochs": 5, "batch": 128, "lr": 0.001, "wd": 0.0, "sched_gamma": 1.0},
}


class CliError(ValueError):
    """Configuration problem reported to the user (exit code 2)."""


def build_parser():
    parser = argparse.ArgumentParser(
        prog="webnn",
        description="Train and inspect complete-digraph recurrent networks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="train a model and write run artifacts")
    train.add_argument("task", choices=["titanic", "mnist"])
    train.add_argument("--preset", choices=["paper", "desk"], default="paper",
                       help="mnist size preset (paper: Q=500; desk: Q=100, CPU-friendly)")
    train.add_argument("--epochs", type=int, default=None)
    train.add_argument("--batch", type=int, default=None)
    train.add_argument("--q", type=int, default=None, help="neuron count override")
    train.add_argument("--timesteps", type=int, default=None)
    train.add_argument("--lr", type=float, default=None)
    train.add_argument("--wd", type=float, default=None, help="weight decay")
    train.add_argument("--sched-gamma", type=float, default=None,
                       help="exponential lr decay per epoch")
    train.add_argument("--seed", type=int, default=42)
    train.add_argument("--val-fraction", type=float, default=0.2)
    train.add_argument("--grad-clip", type=float, default=None)
    train.add_argument("--out", required=True, help="run directory for artifacts")
    train.add_argument("--train", dest="train_csv", help="labeled passenger CSV (titanic)")
    train.add_argument("--images", help="IDX image file (mnist)")
    train.add_argument("--labels", help="IDX label file (mnist)")
    train.add_argument("--limit", type=int, default=None,
                       help="use only the first N samples (mnist)")

    ev = sub.add_parser("eval", help="evaluate a checkpoint on labeled data")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--data", help="labeled passenger CSV (titanic)")
    ev.add_argument("--images", help="IDX image file (mnist)")
    ev.add_argument("--labels", help="IDX label file (mnist)")
    ev.add_argument("--limit", type=int, default=None)
    ev.add_argument("--json", dest="json_out", help="also write metrics to this JSON file")

    hist = sub.add_parser("history", help="emit per-timestep outputs and prediction traces")
    hist.add_argument("--checkpoint", required=True)
    hist.add_argument("--out", required=True, help="history JSON path")
    hist.add_argument("--data", help="labeled passenger CSV (titanic)")
    hist.add_argument("--images", help="IDX image file (mnist)")
    hist.add_argument("--labels", help="IDX label file (mnist)")
    hist.add_argument("--limit", type=int, default=None)

    bench = sub.add_parser("bench", help="time the naive vs vectorized step")
    bench.add_argument("--q", type=int, default=100)
    bench.add_argument("--batch", type=int, default=64)
    bench.add_argument("--timesteps", type=int, default=5)
    bench.add_argument("--iters", type=int, default=9)
    bench.add_argument("--seed", type=int, default=0)
    bench.add_argument("--out", default="bench.json", help="benchmark JSON path")

    return parser


# --- data assembly -----------------------------------------------------------

def _require(value, flag, task):
    if value is None:
        raise CliError(f"{task} needs {flag}")
    return value


def _load_titanic_features(path, stats=None):
    records = load_titanic_csv(path)
    if not records:
        raise CliError(f"{path} contains no data rows")
    features, labels, stats = preprocess_titanic(records, stats=stats)
    if labels is None:
        raise CliError(f"{path} has no Survived column; labeled data required")
    return features, labels, stats


def _load_mnist_arrays(images_path, labels_path, limit):
    ds = load_mnist_idx(images_path, labels_path)
    images, labels = ds.images, ds.labels.reshape(-1, 1)
    if limit is not None:
        if limit < 1:
            raise CliError(f"--limit must be >= 1, got {limit}")
        images, labels = images[:limit], labels[:limit]
    return images, labels


# --- train -------------------------------------------------------------------

def _format_float(value):
    return repr(float(value))


def _write_metrics_csv(path, history):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRICS_HEADER)
        for m in history:
            writer.writerow([
                m.epoch,
                _format_float(m.lr),
                _format_float(m.train_loss),
                _format_float(m.train_acc),
                _format_float(m.val_loss),
                _format_float(m.val_acc),
            ])


def _write_json(path, payload):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_train(args):
    defaults = TASK_DEFAULTS[args.task]
    epochs = args.epochs if args.epochs is not None else defaults["epochs"]
    batch = args.batch if args.batch is not None else defaults["batch"]
    lr = args.lr if args.lr is not None else defaults["lr"]
    wd = args.wd if args.wd is not None else defaults["wd"]
    sched = args.sched_gamma if args.sched_gamma is not None else defaults["sched_gamma"]

    preprocess = None
    if args.task == "titanic":
        csv_path = _require(args.train_csv, "--train", "titanic")
        records = load_titanic_csv(csv_path)
        if not records:
            raise CliError(f"{csv_path} contains no data rows")
        # split records before fitting so standardization stats never see
        # the validation rows
        train_idx, val_idx = split_indices(len(records), args.val_fraction, args.seed)
        train_x, train_y, stats = preprocess_titanic([records[i] for i in train_idx])
        val_x, val_y, _ = preprocess_titanic([records[i] for i in val_idx], stats=stats)
        if train_y is None:
            raise CliError(f"{csv_path} has no Survived column; labeled data required")
        train_split = DatasetSplit(train_x, train_y)
        val_split = DatasetSplit(val_x, val_y)
        preprocess = stats.to_dict()
        base = titanic_web_config()
        config = WebConfig(
            neurons=args.q if args.q is not None else base.neurons,
            in_neurons=base.in_neurons,
            out_neurons=base.out_neurons,
            timesteps=args.timesteps if args.timesteps is not None else base.timesteps,
        )
        model = build_titanic_model(args.seed, config=config)
        loss_kind = "bce"
        data_block = {"train_csv": str(csv_path)}
    else:
        images_path = _require(args.images, "--images", "mnist")
        labels_path = _require(args.labels, "--labels", "mnist")
        features, labels = _load_mnist_arrays(images_path, labels_path, args.limit)
        base = mnist_web_config(args.preset)
        config = WebConfig(
            neurons=args.q if args.q is not None else base.neurons,
            in_neurons=base.in_neurons,
            out_neurons=base.out_neurons,
            timesteps=args.timesteps if args.timesteps is not None else base.timesteps,
        )
        image_hw = features.shape[2:]
        model = build_mnist_model(
            args.seed, preset=args.preset, web_config=config, image_hw=image_hw
        )
        loss_kind = "ce"
        data_block = {
            "images": str(images_path),
            "labels": str(labels_path),
            "limit": args.limit,
        }
        train_split, val_split = split_train_val(
            features, labels, val_fraction=args.val_fraction, seed=args.seed
        )

    train_config = TrainConfig(
        epochs=epochs,
        batch_size=batch,
        lr=lr,
        weight_decay=wd,
        scheduler_gamma=sched,
        seed=args.seed,
        loss=loss_kind,
        grad_clip=args.grad_clip,
    )

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    def progress(m):
        print(
            f"epoch {m.epoch}/{epochs} lr {m.lr:.6f} "
            f"train_loss {m.train_loss:.4f} train_acc {m.train_acc:.4f} "
            f"val_loss {m.val_loss:.4f} val_acc {m.val_acc:.4f}",
            flush=True,
        )

    history, best_snapshot = fit(model, train_split, val_split, train_config, on_epoch=progress)

    _write_metrics_csv(out_dir / "metrics.csv", history)
    resolved = {
        "task": args.task,
        "preset": args.preset if args.task == "mnist" else None,
        "web": {
            "neurons": model.config.neurons,
            "in_neurons": model.config.in_neurons,
            "out_neurons": model.config.out_neurons,
            "timesteps": model.config.timesteps,
            "leak": model.config.leak,
        },
        "convs": [
            {
                "in_channels": l.spec.in_channels,
                "out_channels": l.spec.out_channels,
                "kernel": l.spec.kernel,
                "stride": l.spec.stride,
            }
            for l in (model.convs if isinstance(model, MnistModel) else [])
        ],
        "image_hw": list(model.image_hw) if isinstance(model, MnistModel) else None,
        "train": {
            "epochs": epochs,
            "batch_size": batch,
            "lr": lr,
            "weight_decay": wd,
            "scheduler_gamma": sched,
            "seed": args.seed,
            "loss": loss_kind,
            "grad_clip": args.grad_clip,
        },
        "val_fraction": args.val_fraction,
        "data": data_block,
        "preprocess": preprocess,
    }
    _write_json(out_dir / "resolved-config.json", resolved)

    save_checkpoint(out_dir / "checkpoint-final.wnn", model, preprocess=preprocess)
    if best_snapshot is not None:
        load_snapshot(model, best_snapshot)
    save_checkpoint(out_dir / "checkpoint-best.wnn", model, preprocess=preprocess)

    best_val = max(m.val_acc for m in history)
    print(f"run artifacts in {out_dir} (best val_acc {best_val:.4f})")
    return 0


# --- eval / history ----------------------------------------------------------

def _load_eval_data(model, config, args):
    task = config["task"]
    if task == "titanic":
        path = _require(args.data, "--data", "titanic")
        stats = FeatureStats.from_dict(config["preprocess"]) if config.get("preprocess") else None
        features, labels, _ = _load_titanic_features(path, stats=stats)
        return features, labels, "bce"
    images_path = _require(args.images, "--images", "mnist")
    labels_path = _require(args.labels, "--labels", "mnist")
    images, labels = _load_mnist_arrays(images_path, labels_path, args.limit)
    return images, labels, "ce"


def _load_checkpoint_arg(path):
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"checkpoint {path} does not exist")
    return load_checkpoint(p)


def cmd_eval(args):
    model, config = _load_checkpoint_arg(args.checkpoint)
    features, labels, loss_kind = _load_eval_data(model, config, args)
    if config["task"] == "titanic" and args.limit is not None:
        features, labels = features[: args.limit], labels[: args.limit]
    result = evaluate(model, DatasetSplit(features, labels), loss_kind)
    print(f"loss: {result['loss']:.4f}")
    print(f"accuracy: {result['accuracy']:.4f}")
    if args.json_out:
        _write_json(args.json_out, {"loss": result["loss"], "accuracy": result["accuracy"]})
    return 0


def cmd_history(args):
    model, config = _load_checkpoint_arg(args.checkpoint)
    features, labels, _ = _load_eval_data(model, config, args)
    if config["task"] == "titanic" and args.limit is not None:
        features, labels = features[: args.limit], labels[: args.limit]

    t = model.config.timesteps
    o = model.config.out_neurons
    samples = []
    with no_grad():
        for start in range(0, features.shape[0], 256):
            chunk = features[start : start + 256]
            hist = model.history(Tensor(chunk)).data  # (n, T, O)
            trace = predict_history(hist)
            for row in range(chunk.shape[0]):
                samples.append({
                    "label": int(labels[start + row, 0]),
                    "outputs": [[float(v) for v in hist[row, ts]] for ts in range(t)],
                    "trace": [int(v) for v in trace[row]],
                })
    _write_json(args.out, {"T": t, "O": o, "samples": samples})
    print(f"wrote {len(samples)} sample histories to {args.out}")
    return 0


# --- bench -------------------------------------------------------------------

def cmd_bench(args):
    if args.q < 2:
        raise CliError(f"--q must be >= 2, got {args.q}")
    if args.batch < 1 or args.timesteps < 1:
        raise CliError("--batch and --timesteps must be >= 1")
    config = WebConfig(neurons=args.q, in_neurons=1, out_neurons=1, timesteps=args.timesteps)
    report = bench_step(config, batch=args.batch, iterations=args.iters, seed=args.seed)
    print(f"{'':>14} {'ms/step':>12}")
    print(f"{'naive':>14} {report['naive_ms']:>12.4f}")
    print(f"{'vectorized':>14} {report['vectorized_ms']:>12.4f}")
    print(f"ratio (naive/vectorized): {report['ratio']:.2f}")
    payload = {
        "q": args.q,
        "batch": args.batch,
        "timesteps": args.timesteps,
        "iterations": args.iters,
        **report,
    }
    _write_json(args.out, payload)
    return 0


# --- entry point -------------------------------------------------------------

def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "train": cmd_train,
        "eval": cmd_eval,
        "history": cmd_history,
        "bench": cmd_bench,
    }
    try:
        return handlers[args.command](args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except CheckpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except EquivalenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 5
    except (CliError, DataFormatError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FloatingPointError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
