"""Mini-batch training loop: AdamW with decoupled weight decay, an
exponential per-epoch learning-rate schedule, and loss/accuracy
tracking on train and validation splits."""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .data import batches
from .tensor import Tensor, bce_with_logits, cross_entropy_from_logits, no_grad

LOSS_KINDS = ("bce", "ce")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    batch_size: int
    lr: float
    weight_decay: float = 0.0
    scheduler_gamma: float = 1.0
    seed: int = 0
    loss: str = "bce"
    grad_clip: Optional[float] = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr <= 0:
            raise ValueError(f"lr must be > 0, got {self.lr}")
        if not 0.0 < self.scheduler_gamma <= 1.0:
            raise ValueError(f"scheduler_gamma must lie in (0, 1], got {self.scheduler_gamma}")
        if self.loss not in LOSS_KINDS:
            raise ValueError(f"loss must be one of {LOSS_KINDS}, got {self.loss!r}")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ValueError(f"grad_clip must be > 0, got {self.grad_clip}")


@dataclass
class EpochMetrics:
    epoch: int
    lr: float
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float


class AdamW:
    """Adam moments plus decoupled weight decay: the decay term scales
    the parameter directly instead of entering the gradient."""

    def __init__(self, params, lr, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        self.params = list(params)
        self.lr = float(lr)
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        self.step_count += 1
        t = self.step_count
        for idx, p in enumerate(self.params):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if not np.isfinite(g).all():
                bad = int((~np.isfinite(g)).sum())
                raise FloatingPointError(
                    f"non-finite gradient in parameter {idx} (shape {p.shape}, "
                    f"{bad} bad entries) at optimizer step {t}"
                )
            self.m[idx] = self.beta1 * self.m[idx] + (1 - self.beta1) * g
            self.v[idx] = self.beta2 * self.v[idx] + (1 - self.beta2) * (g * g)
            m_hat = self.m[idx] / (1 - self.beta1**t)
            v_hat = self.v[idx] / (1 - self.beta2**t)
            update = m_hat / (np.sqrt(v_hat) + self.eps) + self.weight_decay * p.data
            p.data = p.data - self.lr * update.astype(p.data.dtype)


def clip_grad_norm(params, max_norm):
    """Scale all gradients down so their global L2 norm is at most max_norm."""
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float((p.grad.astype(np.float64) ** 2).sum())
    norm = np.sqrt(total)
    if norm > max_norm and norm > 0:
        scale = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * p.grad.dtype.type(scale)
    return norm


def exponential_lr(lr0, scheduler_gamma, epoch):
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    return lr0 * scheduler_gamma**epoch


def _batch_loss(history, y, loss_kind, timesteps):
    """Final-timestep loss plus the number of correct predictions."""
    logits = history[:, timesteps - 1, :]
    if loss_kind == "bce":
        loss = bce_with_logits(logits, Tensor(y.astype(logits.data.dtype)))
        correct = int(((logits.data[:, 0] >= 0.0) == (y[:, 0] > 0.5)).sum())
    else:
        labels = y.astype(np.int64).reshape(-1)
        loss = cross_entropy_from_logits(logits, labels)
        correct = int((logits.data.argmax(axis=1) == labels).sum())
    return loss, correct


def train_epoch(model, split, config, optimizer, shuffle_seed):
    """One pass over the train split: seeded shuffle, forward, final-step
    loss, backward, optimizer step per batch. Returns (mean loss over
    batches, accuracy over all samples)."""
    losses = []
    correct = 0
    timesteps = model.config.timesteps
    for index, (x, y) in enumerate(batches(split, config.batch_size, shuffle_seed=shuffle_seed)):
        history = model.history(Tensor(x))
        loss, batch_correct = _batch_loss(history, y, config.loss, timesteps)
        value = float(loss.data)
        if not np.isfinite(value):
            raise FloatingPointError(f"non-finite loss {value} in batch {index}")
        optimizer.zero_grad()
        loss.backward()
        if config.grad_clip is not None:
            clip_grad_norm(optimizer.params, config.grad_clip)
        optimizer.step()
        losses.append(value)
        correct += batch_correct
    return float(np.mean(losses)), correct / len(split)


def evaluate(model, split, loss_kind, batch_size=256):
    """Loss and accuracy on a split without touching parameters."""
    if len(split) == 0:
        raise ValueError("cannot evaluate an empty split")
    timesteps = model.config.timesteps
    total_loss = 0.0
    correct = 0
    with no_grad():
        for x, y in batches(split, batch_size):
            history = model.history(Tensor(x))
            loss, batch_correct = _batch_loss(history, y, loss_kind, timesteps)
            total_loss += float(loss.data) * x.shape[0]
            correct += batch_correct
    return {"loss": total_loss / len(split), "accuracy": correct / len(split)}


def fit(model, train_split, val_split, config, on_epoch=None):
    """Full training run. Returns (per-epoch metrics, best parameter
    snapshot by validation accuracy as a list of arrays).

    The run is reproducible: the epoch shuffles derive from config.seed
    and the schedule changes the learning rate only at epoch boundaries.
    """
    optimizer = AdamW(
        model.parameters(),
        lr=config.lr,
        weight_decay=config.weight_decay,
    )
    rng = np.random.default_rng(config.seed)
    history = []
    best_acc = -1.0
    best_snapshot = None
    for epoch in range(1, config.epochs + 1):
        optimizer.lr = exponential_lr(config.lr, config.scheduler_gamma, epoch - 1)
        shuffle_seed = int(rng.integers(2**31))
        train_loss, train_acc = train_epoch(model, train_split, config, optimizer, shuffle_seed)
        val = evaluate(model, val_split, config.loss)
        metrics = EpochMetrics(
            epoch=epoch,
            lr=optimizer.lr,
            train_loss=train_loss,
            train_acc=train_acc,
            val_loss=val["loss"],
            val_acc=val["accuracy"],
        )
        history.append(metrics)
        if val["accuracy"] > best_acc:
            best_acc = val["accuracy"]
            best_snapshot = [p.data.copy() for p in model.parameters()]
        if on_epoch is not None:
            on_epoch(metrics)
    return history, best_snapshot


def load_snapshot(model, snapshot):
    """Copy a fit() snapshot back into the model's parameters."""
    params = model.parameters()
    if len(params) != len(snapshot):
        raise ValueError(f"snapshot has {len(snapshot)} tensors, model has {len(params)}")
    for p, data in zip(params, snapshot):
        if p.data.shape != data.shape:
            raise ValueError(f"snapshot shape {data.shape} does not match {p.data.shape}")
        p.data = data.copy()
