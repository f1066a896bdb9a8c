"""ROC-AUC, PR-AUC (average precision) and LogLoss for binary labels."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

PROB_CLAMP = 1e-15


@dataclass(frozen=True)
class EvalResult:
    auc: float
    pr_auc: float
    logloss: float
    n_pos: int
    n_neg: int

    def to_dict(self) -> dict:
        return asdict(self)


def _prepare(scores, labels):
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1)
    if s.shape != y.shape:
        raise ValueError(f"scores and labels differ in length: {s.size} vs {y.size}")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0 or 1")
    return s, y.astype(np.int64)


def _midranks(s: np.ndarray) -> np.ndarray:
    order = np.argsort(s, kind="mergesort")
    ranked = s[order]
    # start of each run of equal scores
    starts = np.flatnonzero(np.r_[True, ranked[1:] != ranked[:-1]])
    ends = np.r_[starts[1:], ranked.size]
    avg = (starts + ends + 1) / 2.0  # 1-based average rank within the run
    ranks = np.empty(s.size)
    ranks[order] = np.repeat(avg, ends - starts)
    return ranks


def roc_auc(scores, labels) -> float:
    """Mann-Whitney estimate of ROC-AUC; tied scores get their mid-rank."""
    s, y = _prepare(scores, labels)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("roc_auc needs at least one positive and one negative")
    ranks = _midranks(s)
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def pr_auc(scores, labels) -> float:
    """Average precision: sum over score thresholds of precision * recall step.

    Samples with equal scores enter together, so ties never get an
    optimistic ordering.
    """
    s, y = _prepare(scores, labels)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise ValueError("pr_auc needs at least one positive")
    order = np.argsort(-s, kind="mergesort")
    s_sorted = s[order]
    y_sorted = y[order]
    last_of_group = np.r_[s_sorted[1:] != s_sorted[:-1], True]
    tp = np.cumsum(y_sorted)[last_of_group]
    seen = (np.flatnonzero(last_of_group) + 1).astype(np.float64)
    precision = tp / seen
    recall_step = np.diff(np.r_[0, tp]) / n_pos
    return float(np.sum(precision * recall_step))


def logloss(scores, labels) -> float:
    """Mean binary cross-entropy with probabilities clamped to [1e-15, 1 - 1e-15]."""
    s, y = _prepare(scores, labels)
    p = np.clip(s, PROB_CLAMP, 1.0 - PROB_CLAMP)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log1p(-p)))


def evaluate(scores, labels) -> EvalResult:
    s, y = _prepare(scores, labels)
    n_pos = int(y.sum())
    return EvalResult(
        auc=roc_auc(s, y),
        pr_auc=pr_auc(s, y),
        logloss=logloss(s, y),
        n_pos=n_pos,
        n_neg=int(y.size - n_pos),
    )
