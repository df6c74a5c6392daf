"""Evaluation metrics: accuracy and mean average precision.

AP per class walks the score-ranked list (ties broken by ascending sample
index) and sums precision-at-positive times the recall increment. Classes
with no positive example are excluded from the mean; if every class is
empty that is an error.
"""

from __future__ import annotations

import numpy as np


def accuracy(predictions: np.ndarray, labels: np.ndarray) -> float:
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.shape != labels.shape:
        raise ValueError(f"shape mismatch: {predictions.shape} vs {labels.shape}")
    return float((predictions == labels).mean())


def average_precision(scores: np.ndarray, positives: np.ndarray) -> float:
    """AP for one class; scores (V,), positives (V,) in {0, 1}."""
    order = np.argsort(-scores, kind="stable")  # stable: ties keep ascending index
    hits = positives[order] > 0
    num_pos = int(hits.sum())
    if num_pos == 0:
        raise ValueError("average_precision needs at least one positive")
    cum_hits = np.cumsum(hits)
    ranks = np.arange(1, len(scores) + 1)
    precision_at = cum_hits / ranks
    return float((precision_at[hits] / num_pos).sum())


def mean_average_precision(scores: np.ndarray, labels: np.ndarray) -> float:
    """Mean AP over classes with at least one positive.

    scores: (V, K) real-valued; labels: (V, K) binary.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.ndim != 2 or scores.shape != labels.shape:
        raise ValueError(f"scores and labels must both be (V, K); got {scores.shape} and {labels.shape}")
    aps = [average_precision(scores[:, k], labels[:, k])
           for k in range(scores.shape[1]) if labels[:, k].sum() > 0]
    if not aps:
        raise ValueError("no class has a positive example")
    return float(np.mean(aps))
