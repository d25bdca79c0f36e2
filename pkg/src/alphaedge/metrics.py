"""Prequential evaluation metrics.

Both metrics are oriented so that higher is better and 1.0 is perfect,
which keeps classification (AUC) and regression (1 - SMAPE) reports on the
same scale.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, ShapeError

METRICS = ("auc", "one-minus-smape")


def auc(labels: np.ndarray, scores: np.ndarray) -> float | None:
    """Ranking AUC via the Mann-Whitney statistic with average ranks.

    Tied scores split their wins evenly (a batch scored all-equal comes out
    at exactly 0.5). A single-class batch has no defined AUC and returns
    None so callers can exclude it.
    """
    labels = np.asarray(labels, dtype=float)
    scores = np.asarray(scores, dtype=float)
    if labels.shape != scores.shape or labels.ndim != 1:
        raise ShapeError(f"labels {labels.shape} and scores {scores.shape} must match, 1-D")
    if not np.isin(labels, (0.0, 1.0)).all():
        raise DataError("AUC requires binary 0/1 labels")
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return None

    # Average ranks, 1-based: ties share the mean of their rank range.
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(labels.size)
    i = 0
    while i < labels.size:
        j = i
        while j + 1 < labels.size and scores[order[j + 1]] == scores[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    rank_sum = float(ranks[labels == 1.0].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def one_minus_smape(labels: np.ndarray, predictions: np.ndarray) -> float:
    """One minus the bounded symmetric relative error, averaged over a batch.

    Each point contributes ``|yhat - y| / (|yhat| + |y|)``, which lies in
    [0, 1]; a point with both prediction and label exactly zero contributes
    zero error.
    """
    labels = np.asarray(labels, dtype=float)
    predictions = np.asarray(predictions, dtype=float)
    if labels.shape != predictions.shape or labels.ndim != 1:
        raise ShapeError(
            f"labels {labels.shape} and predictions {predictions.shape} must match, 1-D"
        )
    if labels.size == 0:
        raise DataError("cannot score an empty batch")
    denom = np.abs(predictions) + np.abs(labels)
    err = np.divide(
        np.abs(predictions - labels),
        denom,
        out=np.zeros_like(denom),
        where=denom > 0,
    )
    return 1.0 - float(err.mean())


@dataclass
class MetricSeries:
    """Per-edge metric history with batch-size weighting."""

    steps: list[int] = field(default_factory=list)
    values: list[float] = field(default_factory=list)
    weights: list[float] = field(default_factory=list)

    def append(self, step: int, value: float, weight: float = 1.0) -> None:
        if weight <= 0:
            raise ShapeError(f"weight must be positive, got {weight}")
        self.steps.append(step)
        self.values.append(float(value))
        self.weights.append(float(weight))

    def cumulative_mean(self) -> float | None:
        """Weighted mean over the whole history; None while empty."""
        if not self.values:
            return None
        v = np.array(self.values)
        w = np.array(self.weights)
        return float((v * w).sum() / w.sum())

    def window_mean(self, window: int = 50) -> float | None:
        """Weighted mean over the most recent ``window`` entries."""
        if window < 1:
            raise ShapeError(f"window must be >= 1, got {window}")
        if not self.values:
            return None
        v = np.array(self.values[-window:])
        w = np.array(self.weights[-window:])
        return float((v * w).sum() / w.sum())
