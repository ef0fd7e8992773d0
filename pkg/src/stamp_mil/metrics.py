"""Bag-level classification metrics."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata

AVERAGING = ("binary", "macro", "weighted")
METRIC_NAMES = ("acc", "auc", "precision", "recall", "f1")


class UndefinedMetricError(ValueError):
    pass


def _check(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel().astype(np.int64)
    if s.shape != y.shape:
        raise ValueError("scores and labels must have the same length")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be 0 or 1")
    return s, y


def auc(scores, labels) -> float:
    """ROC AUC as the Mann-Whitney statistic; ties count one half."""
    s, y = _check(scores, labels)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs at least one positive and one negative label")
    ranks = rankdata(s)
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2
    return float(u / (n_pos * n_neg))


def confusion(scores, labels, threshold: float = 0.5) -> dict[str, int]:
    s, y = _check(scores, labels)
    pred = s >= threshold
    return {
        "tp": int(np.sum(pred & (y == 1))),
        "fp": int(np.sum(pred & (y == 0))),
        "tn": int(np.sum(~pred & (y == 0))),
        "fn": int(np.sum(~pred & (y == 1))),
    }


def _prf(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def threshold_metrics(scores, labels, threshold: float = 0.5, averaging: str = "macro") -> dict[str, float]:
    """Accuracy, precision, recall and F1 with ``score >= threshold`` predicted positive."""
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must be in (0, 1)")
    if averaging not in AVERAGING:
        raise ValueError(f"averaging must be one of {AVERAGING}")
    c = confusion(scores, labels, threshold)
    tp, fp, tn, fn = c["tp"], c["fp"], c["tn"], c["fn"]
    n = tp + fp + tn + fn
    if n == 0:
        raise UndefinedMetricError("no samples")
    acc = (tp + tn) / n
    pos = _prf(tp, fp, fn)
    if averaging == "binary":
        p, r, f = pos
    else:
        support_pos, support_neg = tp + fn, tn + fp
        if support_pos == 0 or support_neg == 0:
            raise UndefinedMetricError(f"{averaging} averaging needs both classes present")
        neg = _prf(tn, fn, fp)
        w_pos, w_neg = (0.5, 0.5) if averaging == "macro" else (support_pos / n, support_neg / n)
        p, r, f = (w_neg * a + w_pos * b for a, b in zip(neg, pos))
    return {"acc": acc, "precision": p, "recall": r, "f1": f}


@dataclass
class MetricsRecord:
    acc: float
    auc: float
    precision: float
    recall: float
    f1: float
    averaging: str = "macro"
    threshold: float = 0.5
    seed: int | None = None
    split: str = "test"
    tag: str = ""
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def to_dict(self) -> dict:
        return asdict(self)


def compute_record(scores, labels, threshold: float = 0.5, averaging: str = "macro", **meta) -> MetricsRecord:
    tm = threshold_metrics(scores, labels, threshold, averaging)
    return MetricsRecord(
        auc=auc(scores, labels),
        averaging=averaging,
        threshold=threshold,
        **tm,
        **confusion(scores, labels, threshold),
        **meta,
    )
