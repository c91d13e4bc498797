"""Classification and deferral metrics.

Balanced accuracy, per-class accuracy, AUC (Mann-Whitney, ties get half
credit), partial AUC over the high-specificity band (FPR in [0, 0.1],
normalized by the band width), and per-threshold deferral curve points.

Metrics that are undefined on the evaluated subset (a class missing, or
everything deferred) return None rather than raising; the CSV layer writes
those as empty fields.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from deferbench.errors import InputShapeError

# Decision code meaning "route this input to the expert".
DEFER = -1

PAUC_BAND = 0.1  # FPR band [0, 0.1] == 90-100% specificity


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @classmethod
    def from_predictions(cls, labels, predictions) -> "ConfusionCounts":
        labels = np.asarray(labels)
        predictions = np.asarray(predictions)
        if labels.shape != predictions.shape:
            raise InputShapeError("labels and predictions must have the same shape")
        return cls(
            tp=int(np.sum((labels == 1) & (predictions == 1))),
            fp=int(np.sum((labels == 0) & (predictions == 1))),
            tn=int(np.sum((labels == 0) & (predictions == 0))),
            fn=int(np.sum((labels == 1) & (predictions == 0))),
        )

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def balanced_accuracy(counts: ConfusionCounts) -> Optional[float]:
    """(sensitivity + specificity) / 2; None if either class is absent."""
    pos = counts.tp + counts.fn
    neg = counts.tn + counts.fp
    if pos == 0 or neg == 0:
        return None
    return 0.5 * (counts.tp / pos + counts.tn / neg)


def per_class_accuracy(counts: ConfusionCounts):
    """(acc0, acc1): recall of the negative and positive class; None when absent."""
    neg = counts.tn + counts.fp
    pos = counts.tp + counts.fn
    acc0 = counts.tn / neg if neg > 0 else None
    acc1 = counts.tp / pos if pos > 0 else None
    return acc0, acc1


def auc(scores, labels) -> Optional[float]:
    """Probability a random positive outranks a random negative; ties count 1/2.

    Computed from average ranks (Mann-Whitney U), which is exactly the
    pairwise count with half credit for ties. None if only one class present.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise InputShapeError("scores and labels must be equal-length 1-D arrays")
    n_pos = int(np.sum(labels == 1))
    n_neg = int(np.sum(labels == 0))
    if n_pos == 0 or n_neg == 0:
        return None

    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(scores.shape[0], dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < sorted_scores.shape[0]:
        j = i
        while j + 1 < sorted_scores.shape[0] and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0  # average 1-based rank
        i = j + 1
    rank_sum = ranks[labels == 1].sum()
    u = rank_sum - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def _roc_points(scores, labels):
    """Empirical ROC polyline from (0,0) to (1,1); ties produce diagonal segments."""
    order = np.argsort(-scores, kind="mergesort")
    sorted_labels = labels[order]
    sorted_scores = scores[order]
    # group boundaries at distinct score values
    distinct = np.nonzero(np.diff(sorted_scores))[0]
    ends = np.concatenate([distinct, [scores.shape[0] - 1]])
    tps = np.cumsum(sorted_labels == 1)[ends]
    fps = np.cumsum(sorted_labels == 0)[ends]
    n_pos = tps[-1]
    n_neg = fps[-1]
    tpr = np.concatenate([[0.0], tps / n_pos])
    fpr = np.concatenate([[0.0], fps / n_neg])
    return fpr, tpr


def pauc(scores, labels, band: float = PAUC_BAND) -> Optional[float]:
    """ROC area over FPR in [0, band], trapezoidal, normalized by the band width.

    A perfect classifier scores 1.0; an uninformative one band/2.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise InputShapeError("scores and labels must be equal-length 1-D arrays")
    if np.sum(labels == 1) == 0 or np.sum(labels == 0) == 0:
        return None

    fpr, tpr = _roc_points(scores, labels)
    inside = fpr <= band
    fpr_clip = fpr[inside]
    tpr_clip = tpr[inside]
    if fpr_clip[-1] < band:
        tpr_at_band = np.interp(band, fpr, tpr)
        fpr_clip = np.append(fpr_clip, band)
        tpr_clip = np.append(tpr_clip, tpr_at_band)
    area = np.trapezoid(tpr_clip, fpr_clip)
    return float(area / band)


@dataclass
class CurvePoint:
    """One point of a deferral sweep.

    bacc is None exactly when it cannot be computed on the non-deferred
    remainder (everything deferred, or a class absent there). Provenance
    fields identify the run that produced the point.
    """

    deferral_rate: float
    bacc: Optional[float]
    frac_positives_deferred: Optional[float]
    auc: Optional[float] = None
    pauc: Optional[float] = None
    acc0: Optional[float] = None
    acc1: Optional[float] = None
    method: str = ""
    condition: str = ""
    level: int = 0
    seed: int = 0
    param_kind: str = ""
    param_value: Optional[float] = None
    status: str = "ok"


def deferral_curve_point(decisions, labels, scores=None) -> CurvePoint:
    """Deferral rate, remainder bAcc / per-class accuracy, positive-deferral fraction.

    decisions: per-sample class (0/1) or DEFER. scores, when given, are the
    positive-class scores used for AUC/pAUC on the non-deferred remainder.
    """
    decisions = np.asarray(decisions)
    labels = np.asarray(labels)
    if decisions.shape != labels.shape or decisions.ndim != 1 or decisions.size == 0:
        raise InputShapeError("decisions and labels must be equal-length non-empty 1-D arrays")

    total = decisions.shape[0]
    deferred = decisions == DEFER
    rate = float(deferred.sum() / total)

    n_pos = int(np.sum(labels == 1))
    frac_pos = float(np.sum(deferred & (labels == 1)) / n_pos) if n_pos > 0 else None

    kept = ~deferred
    bacc = acc0 = acc1 = auc_v = pauc_v = None
    if kept.any():
        counts = ConfusionCounts.from_predictions(labels[kept], decisions[kept])
        bacc = balanced_accuracy(counts)
        acc0, acc1 = per_class_accuracy(counts)
        if scores is not None:
            scores = np.asarray(scores, dtype=np.float64)
            auc_v = auc(scores[kept], labels[kept])
            pauc_v = pauc(scores[kept], labels[kept])

    return CurvePoint(
        deferral_rate=rate,
        bacc=bacc,
        frac_positives_deferred=frac_pos,
        auc=auc_v,
        pauc=pauc_v,
        acc0=acc0,
        acc1=acc1,
    )
