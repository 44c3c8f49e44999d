"""SGD training loop.

The schedule all benchmark runs use: initial learning rate 0.1 dropped by
10x at 50% and 75% epoch completion, momentum 0.9, weight decay 1e-5,
batch size 64, gradients clipped to global norm 1.  Weight decay is added
to the (clipped) gradient before the momentum update; clipping is a single
global norm over all parameters jointly.

Everything stochastic in a run -- shuffling, train augmentation (fresh
every epoch), test augmentation (drawn once per run) -- derives from one
seed, so a rerun reproduces metrics bit for bit.  Divergence aborts with
the epoch index instead of training through NaNs.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .layers import softmax_xent
from .mnist import AugmentSpec, IdxDataset, augment_batch
from .network import Sequential, save_checkpoint
from .rng import Rng

METRICS_COLUMNS = ("epoch", "lr", "train_loss", "train_err", "test_err", "seconds")


class DivergenceError(RuntimeError):
    def __init__(self, epoch: int, detail: str):
        super().__init__(f"training diverged at epoch {epoch}: {detail}")
        self.epoch = epoch


@dataclass
class OptimState:
    """SGD hyperparameters plus per-parameter velocity buffers."""

    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-5
    clip_norm: float | None = 1.0
    epochs: int = 300
    batch_size: int = 64
    decay_points: tuple = (0.5, 0.75)
    decay_factor: float = 0.1
    velocity: dict = field(default_factory=dict)


def lr_at(epoch: int, total: int, state: OptimState) -> float:
    """Piecewise-constant rate: drops at ceil(p * total) for each decay point."""
    if not 0 <= epoch < total:
        raise ValueError(f"epoch {epoch} outside [0, {total})")
    passed = sum(1 for p in state.decay_points if epoch >= math.ceil(p * total))
    return state.lr * state.decay_factor ** passed


def global_grad_norm(param_items) -> float:
    return float(np.sqrt(sum(float((g * g).sum()) for _, _, g in param_items)))


def sgd_step(param_items, state: OptimState, lr: float) -> None:
    """One update: clip g globally, then v <- mu*v + (g + wd*w); w <- w - lr*v."""
    norm = global_grad_norm(param_items)
    if not np.isfinite(norm):
        raise FloatingPointError(f"non-finite gradient (global norm {norm})")
    scale = 1.0
    if state.clip_norm is not None and norm > state.clip_norm:
        scale = state.clip_norm / norm
    for name, value, grad in param_items:
        v = state.velocity.get(name)
        if v is None:
            v = state.velocity.setdefault(name, np.zeros_like(value))
        g = grad * scale + state.weight_decay * value
        v *= state.momentum
        v += g
        value -= lr * v


@dataclass
class RunMetrics:
    seed: int
    epochs: list = field(default_factory=list)  # rows matching METRICS_COLUMNS

    @property
    def final_test_err(self) -> float:
        return self.epochs[-1][4]

    @property
    def final_train_err(self) -> float:
        return self.epochs[-1][3]

    @property
    def total_seconds(self) -> float:
        return sum(r[5] for r in self.epochs)


def evaluate(model: Sequential, images: np.ndarray, labels: np.ndarray,
             batch_size: int = 256) -> float:
    """Fraction misclassified, in eval mode (BatchNorm running statistics)."""
    wrong = 0
    for i in range(0, len(labels), batch_size):
        logits = model.forward(images[i : i + batch_size], train=False)
        wrong += int((logits.argmax(axis=1) != labels[i : i + batch_size]).sum())
    return wrong / len(labels)


def train(model: Sequential, train_ds: IdxDataset, test_ds: IdxDataset,
          state: OptimState, seed: int, augment: AugmentSpec = AugmentSpec(),
          metrics_path=None, checkpoint_path=None, checkpoint_every: int = 0,
          log=None) -> RunMetrics:
    """Train `model` in place and return per-epoch metrics.

    Seed derivation: shuffling uses stream 1, train augmentation stream 2,
    and test augmentation stream 3 of ``Rng(seed)``; the test set is
    augmented exactly once per run.
    """
    if len(train_ds) == 0 or len(test_ds) == 0:
        raise ValueError("datasets must be non-empty")
    root = Rng(seed)
    shuffle_rng = root.spawn(1)
    train_aug_rng = root.spawn(2)
    test_aug_rng = root.spawn(3)

    test_images = augment_batch(test_ds.images, augment, test_aug_rng)
    metrics = RunMetrics(seed=seed)
    writer = _MetricsWriter(metrics_path) if metrics_path else None

    n = len(train_ds)
    bs = state.batch_size
    for epoch in range(state.epochs):
        t0 = time.perf_counter()
        lr = lr_at(epoch, state.epochs, state)
        order = shuffle_rng.permutation(n)
        images = augment_batch(train_ds.images[order], augment, train_aug_rng)
        labels = train_ds.labels[order]
        loss_sum = 0.0
        wrong = 0
        for i in range(0, n, bs):
            x = images[i : i + bs]
            y = labels[i : i + bs]
            try:
                logits = model.forward(x, train=True)
                loss, grad_logits = softmax_xent(logits, y)
                model.zero_grads()
                model.backward(grad_logits)
                sgd_step(model.param_items(), state, lr)
            except FloatingPointError as e:
                raise DivergenceError(epoch, str(e)) from e
            loss_sum += loss * len(y)
            wrong += int((logits.argmax(axis=1) != y).sum())
        test_err = evaluate(model, test_images, test_ds.labels)
        seconds = time.perf_counter() - t0
        row = (epoch, lr, loss_sum / n, wrong / n, test_err, seconds)
        metrics.epochs.append(row)
        if writer:
            writer.append(row)
        if log:
            log(f"epoch {epoch:3d}  lr {lr:.4f}  loss {row[2]:.4f}  "
                f"train_err {row[3]:.4f}  test_err {test_err:.4f}  {seconds:.1f}s")
        if checkpoint_path and checkpoint_every and (epoch + 1) % checkpoint_every == 0:
            save_checkpoint(checkpoint_path, model, meta={"epoch": epoch, "seed": seed})
    if checkpoint_path:
        save_checkpoint(checkpoint_path, model, meta={"epoch": state.epochs - 1, "seed": seed})
    return metrics


class _MetricsWriter:
    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        if not self.path.exists():
            with open(self.path, "w", newline="") as f:
                csv.writer(f).writerow(METRICS_COLUMNS)

    def append(self, row):
        with open(self.path, "a", newline="") as f:
            csv.writer(f).writerow([repr(v) if isinstance(v, float) else v for v in row])
