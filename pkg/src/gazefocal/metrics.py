"""Classification metrics from predicted probability vectors."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata


@dataclass
class MetricResult:
    value: float
    per_class: np.ndarray | None = None
    # classes whose denominator was zero (they contribute 0)
    undefined: list[int] = field(default_factory=list)


def _arrays(labels, probs) -> tuple[np.ndarray, np.ndarray]:
    y = np.asarray(labels, dtype=np.int64)
    p = np.asarray(probs, dtype=np.float64)
    if y.size == 0:
        raise ValueError("no records to evaluate")
    if p.ndim != 2 or p.shape[0] != y.shape[0]:
        raise ValueError(f"probabilities {p.shape} do not match {y.shape[0]} labels")
    if y.min() < 0 or y.max() >= p.shape[1]:
        raise ValueError(f"labels must lie in [0, {p.shape[1]})")
    return y, p


def confusion_matrix(labels, probs) -> np.ndarray:
    """``cm[i, j]``: records of true class i predicted as class j (argmax)."""
    y, p = _arrays(labels, probs)
    k = p.shape[1]
    return np.bincount(y * k + p.argmax(axis=1), minlength=k * k).reshape(k, k)


def _ratio(num: np.ndarray, den: np.ndarray) -> tuple[np.ndarray, list[int]]:
    undefined = [int(i) for i in np.flatnonzero(den == 0)]
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(den > 0, num / np.where(den > 0, den, 1), 0.0)
    return out, undefined


def _per_class(cm: np.ndarray, which: str):
    tp = np.diag(cm).astype(np.float64)
    if which == "precision":
        return _ratio(tp, cm.sum(axis=0).astype(np.float64))
    if which == "recall":
        return _ratio(tp, cm.sum(axis=1).astype(np.float64))
    prec, u1 = _ratio(tp, cm.sum(axis=0).astype(np.float64))
    rec, u2 = _ratio(tp, cm.sum(axis=1).astype(np.float64))
    f1, u3 = _ratio(2 * prec * rec, prec + rec)
    return f1, sorted(set(u1) | set(u2) | set(u3))


def _scored(labels, probs, which: str, averaging: str) -> MetricResult:
    cm = confusion_matrix(labels, probs)
    per_class, undefined = _per_class(cm, which)
    if averaging in ("none", "macro"):
        value = float(per_class.mean())
    elif averaging == "micro":
        # single-label: micro precision = micro recall = micro F1 = accuracy
        value = float(np.trace(cm) / cm.sum())
    else:
        raise ValueError(f"unknown averaging {averaging!r}")
    return MetricResult(value, per_class, undefined)


def accuracy(labels, probs) -> float:
    cm = confusion_matrix(labels, probs)
    return float(np.trace(cm) / cm.sum())


def precision(labels, probs, averaging: str = "none") -> MetricResult:
    return _scored(labels, probs, "precision", averaging)


def recall(labels, probs, averaging: str = "none") -> MetricResult:
    return _scored(labels, probs, "recall", averaging)


def f1(labels, probs, averaging: str = "none") -> MetricResult:
    return _scored(labels, probs, "f1", averaging)


def binary_auc(is_positive, scores) -> float:
    """Mann-Whitney AUC with average ranks for ties (ties count one half)."""
    pos = np.asarray(is_positive, dtype=bool)
    s = np.asarray(scores, dtype=np.float64)
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs at least one positive and one negative")
    ranks = rankdata(s)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def auc(labels, probs) -> MetricResult:
    """One-vs-rest macro ROC AUC; the binary case scores class 1 only.

    Classes without both positives and negatives are skipped and listed in
    ``undefined``.
    """
    y, p = _arrays(labels, probs)
    k = p.shape[1]
    if k == 2:
        return MetricResult(binary_auc(y == 1, p[:, 1]), None, [])
    per_class = np.full(k, np.nan)
    undefined = []
    for c in range(k):
        pos = y == c
        if pos.all() or not pos.any():
            undefined.append(c)
            continue
        per_class[c] = binary_auc(pos, p[:, c])
    if undefined:
        warnings.warn(f"AUC undefined for classes {undefined}; excluded from the macro average", stacklevel=2)
    scored = per_class[~np.isnan(per_class)]
    if scored.size == 0:
        raise ValueError("AUC undefined for every class")
    return MetricResult(float(scored.mean()), per_class, undefined)


def report(labels, probs) -> dict:
    """Metrics JSON payload with stable field names."""
    prec = precision(labels, probs)
    rec = recall(labels, probs)
    f1_none = f1(labels, probs)
    try:
        a = auc(labels, probs)
        auc_value, auc_undefined = a.value, a.undefined
    except ValueError:
        auc_value, auc_undefined = None, list(range(np.asarray(probs).shape[1]))
    return {
        "accuracy": accuracy(labels, probs),
        "auc": auc_value,
        "f1_per_class": f1_none.per_class.tolist(),
        "f1_macro": f1(labels, probs, "macro").value,
        "f1_micro": f1(labels, probs, "micro").value,
        "precision": prec.value,
        "recall": rec.value,
        "precision_per_class": prec.per_class.tolist(),
        "recall_per_class": rec.per_class.tolist(),
        "undefined": {"precision": prec.undefined, "recall": rec.undefined, "f1": f1_none.undefined, "auc": auc_undefined},
        "n": int(np.asarray(labels).size),
    }
