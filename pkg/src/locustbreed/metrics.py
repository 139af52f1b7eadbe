"""Classification metrics: accuracy, precision, recall, F1 and ROC-AUC."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .tensorkit.losses import IGNORE, EmptyMask

THRESHOLD = 0.5


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @classmethod
    def from_predictions(cls, labels, predicted) -> ConfusionCounts:
        y = np.asarray(labels).astype(bool)
        p = np.asarray(predicted).astype(bool)
        if y.shape != p.shape:
            raise ValueError(f"{y.shape[0]} labels vs {p.shape[0]} predictions")
        return cls(int((y & p).sum()), int((~y & p).sum()), int((~y & ~p).sum()), int((y & ~p).sum()))

    def swapped(self) -> ConfusionCounts:
        """Counts with class 0 treated as the positive class."""
        return ConfusionCounts(tp=self.tn, fp=self.fn, tn=self.tp, fn=self.fp)


@dataclass(frozen=True)
class ClassificationMetrics:
    accuracy: float
    precision: float
    recall: float
    f1: float
    zero_division: tuple[str, ...] = ()

    def as_dict(self) -> dict:
        d = asdict(self)
        d["zero_division"] = list(self.zero_division)
        return d


def _ratio(num, den, name, flags):
    if den == 0:
        flags.append(name)
        return 0.0
    return num / den


def _binary(c: ConfusionCounts, flags: list, tag: str = ""):
    precision = _ratio(c.tp, c.tp + c.fp, "precision" + tag, flags)
    recall = _ratio(c.tp, c.tp + c.fn, "recall" + tag, flags)
    f1 = _ratio(2 * precision * recall, precision + recall, "f1" + tag, flags)
    return precision, recall, f1


def classification_metrics(counts: ConfusionCounts, averaging: str = "binary") -> ClassificationMetrics:
    """Accuracy plus precision/recall/F1.

    ``binary`` reports the positive (breeding) class; ``macro`` averages the
    per-class values of both classes. Zero denominators yield 0 and are
    named in ``zero_division``.
    """
    flags: list[str] = []
    accuracy = _ratio(counts.tp + counts.tn, counts.total, "accuracy", flags)
    if averaging == "binary":
        p, r, f = _binary(counts, flags)
    elif averaging == "macro":
        p1, r1, f1 = _binary(counts, flags, "[1]")
        p0, r0, f0 = _binary(counts.swapped(), flags, "[0]")
        p, r, f = (p1 + p0) / 2, (r1 + r0) / 2, (f1 + f0) / 2
    else:
        raise ValueError(f"unknown averaging {averaging!r}")
    return ClassificationMetrics(accuracy, p, r, f, tuple(flags))


def roc_auc(scores, labels) -> float:
    """Area under the ROC curve by the trapezoidal rule over distinct thresholds.

    Equals the probability that a random positive outscores a random negative,
    counting ties as one half. Raises ``ValueError`` if a class is absent.
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel().astype(bool)
    if scores.shape != y.shape:
        raise ValueError(f"{scores.shape[0]} scores vs {y.shape[0]} labels")
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC-AUC needs both classes")
    order = np.argsort(-scores, kind="mergesort")
    s, yy = scores[order], y[order]
    # last index of each run of equal scores
    ends = np.r_[np.nonzero(np.diff(s))[0], s.size - 1]
    tps = np.cumsum(yy)[ends]
    fps = (ends + 1) - tps
    tpr = np.r_[0.0, tps / n_pos]
    fpr = np.r_[0.0, fps / n_neg]
    return float(np.sum((fpr[1:] - fpr[:-1]) * (tpr[1:] + tpr[:-1]) / 2.0))


@dataclass(frozen=True)
class ScoredSample:
    score: float
    label: int

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [0, 1]")


def chip_level_prediction(prob_map, mask) -> ScoredSample:
    """Mean class-1 probability over the labelled pixels of ``mask``.

    ``prob_map`` is either a class-1 map [H,W] or a two-class map [2,H,W].
    """
    prob = np.asarray(prob_map, dtype=np.float64)
    if prob.ndim == 3:
        prob = prob[1]
    mask = np.asarray(mask)
    if prob.shape != mask.shape:
        raise ValueError(f"probability map {prob.shape} vs mask {mask.shape}")
    labeled = mask != IGNORE
    if not labeled.any():
        raise EmptyMask("mask has no labelled pixels")
    label = int(mask[labeled].mean() >= 0.5)
    return ScoredSample(float(np.clip(prob[labeled].mean(), 0.0, 1.0)), label)


def evaluate_scores(scores, labels, threshold: float = THRESHOLD) -> dict:
    """Both averaging modes, counts, ROC-AUC and sample size for one split."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(np.int64)
    counts = ConfusionCounts.from_predictions(labels, scores >= threshold)
    try:
        auc = roc_auc(scores, labels)
    except ValueError:
        auc = None
    out = {"n": int(labels.size), "counts": asdict(counts), "roc_auc": auc}
    for mode in ("binary", "macro"):
        m = classification_metrics(counts, mode).as_dict()
        m["roc_auc"] = auc
        out[mode] = m
    return out
