"""Multiclass evaluation metrics: confusion counts, macro PRF, OvR AUC.

Macro averages are unweighted means over classes. A class that never
occurs as truth and is never predicted contributes nothing and is
excluded from the macro denominator; within a present class, 0/0
precision or recall counts as 0.
"""

from __future__ import annotations

import numpy as np
from scipy.stats import rankdata

from .errors import DataError
from .data import NUM_GRADES


def confusion_matrix(y_true, y_pred, num_classes: int = NUM_GRADES) -> np.ndarray:
    """Counts with rows = true class, columns = predicted class."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape or y_true.ndim != 1:
        raise DataError(f"label arrays must be equal rank-1, got {y_true.shape}, {y_pred.shape}")
    for name, arr in (("true", y_true), ("predicted", y_pred)):
        if arr.size and (arr.min() < 0 or arr.max() >= num_classes):
            raise DataError(f"{name} labels outside 0..{num_classes - 1}")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def accuracy(cm: np.ndarray) -> float:
    total = cm.sum()
    if total == 0:
        raise DataError("empty confusion matrix")
    return float(np.trace(cm) / total)


def macro_precision_recall_f1(cm: np.ndarray) -> tuple[float, float, float]:
    if cm.sum() == 0:
        raise DataError("empty confusion matrix")
    row = cm.sum(axis=1)  # true counts
    col = cm.sum(axis=0)  # predicted counts
    diag = np.diag(cm)
    present = (row > 0) | (col > 0)
    if not present.any():
        raise DataError("no class present in confusion matrix")
    with np.errstate(invalid="ignore", divide="ignore"):
        prec = np.where(col > 0, diag / np.maximum(col, 1), 0.0)
        rec = np.where(row > 0, diag / np.maximum(row, 1), 0.0)
        denom = prec + rec
        f1 = np.where(denom > 0, 2 * prec * rec / np.maximum(denom, 1e-300), 0.0)
    n = present.sum()
    return (float(prec[present].sum() / n),
            float(rec[present].sum() / n),
            float(f1[present].sum() / n))


def macro_ovr_auc(scores: np.ndarray, labels) -> float:
    """One-vs-rest ROC AUC per class via ranks (ties 0.5), macro-averaged.

    Classes lacking either a positive or a negative sample are skipped;
    at least one class must be evaluable.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if scores.ndim != 2 or scores.shape[0] != labels.shape[0]:
        raise DataError(f"scores {scores.shape} incompatible with labels {labels.shape}")
    n, k = scores.shape
    aucs = []
    for c in range(k):
        pos = labels == c
        n_pos = int(pos.sum())
        n_neg = n - n_pos
        if n_pos == 0 or n_neg == 0:
            continue
        ranks = rankdata(scores[:, c])  # average ranks handle ties as 0.5
        auc = (ranks[pos].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg)
        aucs.append(auc)
    if not aucs:
        raise DataError("no class has both positive and negative samples")
    return float(np.mean(aucs))


def per_class_report(cm: np.ndarray) -> list[dict]:
    """Per-class precision/recall/F1/support rows plus a macro row."""
    row = cm.sum(axis=1)
    col = cm.sum(axis=0)
    diag = np.diag(cm)
    rows = []
    for c in range(cm.shape[0]):
        p = float(diag[c] / col[c]) if col[c] else 0.0
        r = float(diag[c] / row[c]) if row[c] else 0.0
        f1 = 2 * p * r / (p + r) if (p + r) > 0 else 0.0
        rows.append({"class": str(c), "precision": p, "recall": r,
                     "f1": f1, "support": int(row[c])})
    mp, mr, mf = macro_precision_recall_f1(cm)
    rows.append({"class": "macro", "precision": mp, "recall": mr,
                 "f1": mf, "support": int(cm.sum())})
    return rows
