"""Training loop, optimizers, evaluation, and history export.

Each epoch iterates seeded-shuffled training batches (forward, softmax
cross-entropy, backward, optimizer step), then evaluates both splits
with frozen weights and appends one history row per split. The whole
loop is deterministic given (data, config, seed).
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from . import metrics, ops
from .data import DataBundle, SplitArrays, iter_batches
from .errors import ConfigError, DataError, NumericalError
from .model import ModelGraph


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 5
    batch_size: int = 16
    optimizer: str = "adam"  # "sgd" or "adam"
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def validate(self) -> None:
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")


@dataclass
class EpochMetrics:
    epoch: int
    split: str  # "train" or "val"
    loss: float
    accuracy: float
    auc: float
    precision: float
    recall: float
    f1: float

    FIELDS = ("epoch", "split", "loss", "accuracy", "auc", "precision", "recall", "f1")


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def _check_registries(params, grads):
    if set(params) != set(grads):
        raise NumericalError("parameter and gradient registries disagree")


def _check_finite(grads):
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise NumericalError(f"non-finite gradient in {name}")


def sgd_step(params, grads, lr: float) -> None:
    """In-place p <- p - lr * g."""
    _check_registries(params, grads)
    _check_finite(grads)
    lr = np.float32(lr)
    for name, g in grads.items():
        params[name] -= lr * g


def adam_step(params, grads, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """Standard bias-corrected Adam update, in place."""
    _check_registries(params, grads)
    _check_finite(grads)
    if not state.m:
        state.m = {k: np.zeros_like(v) for k, v in params.items()}
        state.v = {k: np.zeros_like(v) for k, v in params.items()}
    state.t += 1
    b1, b2 = np.float32(beta1), np.float32(beta2)
    correction1 = 1.0 - beta1 ** state.t
    correction2 = 1.0 - beta2 ** state.t
    for name, g in grads.items():
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        m_hat = m / np.float32(correction1)
        v_hat = v / np.float32(correction2)
        params[name] -= np.float32(lr) * m_hat / (np.sqrt(v_hat) + np.float32(eps))


def evaluate(graph: ModelGraph, arrays: SplitArrays, batch_size: int = 64):
    """Frozen-weight metrics over one split: (EpochMetrics row, confusion).

    Loss is the batch-size-weighted mean cross-entropy; predictions are
    softmax argmax with ties toward the lowest class index.
    """
    n = len(arrays.ids)
    if n == 0:
        raise DataError("cannot evaluate an empty split")
    k = graph.cfg.num_classes
    all_probs = np.empty((n, k), dtype=np.float64)
    loss_sum = 0.0
    for start in range(0, n, batch_size):
        xb = arrays.x[start:start + batch_size]
        yb = arrays.y[start:start + batch_size]
        logits, _ = graph.forward(xb)
        loss, probs, _ = ops.softmax_cross_entropy(logits, yb)
        loss_sum += loss * len(yb)
        all_probs[start:start + batch_size] = probs
    preds = all_probs.argmax(axis=1)  # first max -> lowest class index on ties
    cm = metrics.confusion_matrix(arrays.y, preds, num_classes=k)
    prec, rec, f1 = metrics.macro_precision_recall_f1(cm)
    row = EpochMetrics(
        epoch=-1, split="",
        loss=loss_sum / n,
        accuracy=metrics.accuracy(cm),
        auc=metrics.macro_ovr_auc(all_probs, arrays.y),
        precision=prec, recall=rec, f1=f1)
    return row, cm


def train(graph: ModelGraph, data: DataBundle, cfg: TrainConfig,
          stop_when=None) -> list[EpochMetrics]:
    """Run the training loop; returns the per-epoch history for both splits.

    stop_when, if given, is called with each epoch's training-split row and
    ends the loop early when it returns True (used by test harnesses).
    """
    cfg.validate()
    params = graph._require_params()
    adam = AdamState()
    history: list[EpochMetrics] = []
    for epoch in range(cfg.epochs):
        for b_idx, (xb, yb) in enumerate(
                iter_batches(data.train, cfg.batch_size, cfg.seed, epoch)):
            logits, tapes = graph.forward(xb)
            loss, _, grad_logits = ops.softmax_cross_entropy(logits, yb)
            if not np.isfinite(loss):
                raise NumericalError(f"non-finite loss at epoch {epoch} batch {b_idx}")
            grads = graph.backward(tapes, grad_logits)
            if cfg.optimizer == "sgd":
                sgd_step(params, grads, cfg.learning_rate)
            else:
                adam_step(params, grads, adam, cfg.learning_rate,
                          cfg.beta1, cfg.beta2, cfg.eps)
        train_row, _ = evaluate(graph, data.train)
        train_row.epoch, train_row.split = epoch, "train"
        val_row, _ = evaluate(graph, data.val)
        val_row.epoch, val_row.split = epoch, "val"
        history += [train_row, val_row]
        if stop_when is not None and stop_when(train_row):
            break
    return history


def history_csv(history: list[EpochMetrics]) -> str:
    """Render history as CSV text, metric values with 6 fractional digits."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(EpochMetrics.FIELDS)
    for row in history:
        writer.writerow([row.epoch, row.split] +
                        [f"{getattr(row, f):.6f}" for f in EpochMetrics.FIELDS[2:]])
    return buf.getvalue()


def export_history(history: list[EpochMetrics], path) -> None:
    if not history:
        raise DataError("history is empty; nothing to export")
    from .fileio import atomic_write_text

    atomic_write_text(path, history_csv(history))


def parse_history_csv(text: str) -> list[EpochMetrics]:
    rows = []
    reader = csv.DictReader(io.StringIO(text))
    for rec in reader:
        rows.append(EpochMetrics(
            epoch=int(rec["epoch"]), split=rec["split"],
            **{f: float(rec[f]) for f in EpochMetrics.FIELDS[2:]}))
    return rows


def summary_table(model_name: str, rows: list[EpochMetrics]) -> str:
    """Final-epoch results table (loss raw, other metrics as percentages)."""
    header = (f"{'Model':<14} {'Split':<11} {'Loss':>8} {'Accuracy':>9} "
              f"{'AUC':>7} {'Precision':>10} {'Recall':>7} {'F1':>7}")
    lines = [header, "-" * len(header)]
    split_label = {"train": "Training", "val": "Validation"}
    for row in rows:
        lines.append(
            f"{model_name:<14} {split_label.get(row.split, row.split):<11} "
            f"{row.loss:>8.4f} {row.accuracy * 100:>9.2f} {row.auc * 100:>7.2f} "
            f"{row.precision * 100:>10.2f} {row.recall * 100:>7.2f} {row.f1 * 100:>7.2f}")
    return "\n".join(lines)
