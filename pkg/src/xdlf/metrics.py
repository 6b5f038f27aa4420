"""Classification metrics on probability scores."""

from __future__ import annotations

from typing import Sequence

import numpy as np
from scipy.stats import rankdata


def roc_auc(labels: Sequence[float], scores: Sequence[float]) -> float | None:
    """ROC AUC via the Mann-Whitney rank statistic; tied scores count 1/2.

    Returns ``None`` when only one class is present.
    """
    y = np.asarray(labels, dtype=np.float64) > 0.5
    s = np.asarray(scores, dtype=np.float64)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(s)
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def accuracy(labels: Sequence[float], probs: Sequence[float], threshold: float = 0.5) -> float:
    """Fraction of samples where ``prob > threshold`` agrees with ``label > 0.5``."""
    y = np.asarray(labels, dtype=np.float64) > 0.5
    p = np.asarray(probs, dtype=np.float64) > threshold
    if len(y) == 0:
        return float("nan")
    return float((y == p).mean())


def confusion(labels: Sequence[float], probs: Sequence[float], threshold: float = 0.5) -> dict[str, int]:
    y = np.asarray(labels, dtype=np.float64) > 0.5
    p = np.asarray(probs, dtype=np.float64) > threshold
    return {"tp": int((y & p).sum()), "fp": int((~y & p).sum()),
            "tn": int((~y & ~p).sum()), "fn": int((y & ~p).sum())}
