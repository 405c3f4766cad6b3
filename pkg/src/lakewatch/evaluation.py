"""Loss functions with analytic gradients, and confusion-count metrics.

Losses are means over the jointly-valid pixels of a probability map and a
ground-truth mask, with probabilities clamped to [eps, 1-eps] before any
logarithm.  Reductions run in row-major order through compensated
summation, so results are deterministic regardless of how the caller
parallelizes upstream work.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import EvaluationError, ShapeMismatchError
from .segmentation import BinaryMask, ProbabilityMap

#: probability clamp applied before logarithms
EPS = 1e-7

#: Dice smoothing constant added to numerator and denominator
DICE_SMOOTH = 1.0


@dataclass(frozen=True)
class FocalParams:
    """Focal-loss weights: class balance alpha, focusing exponent gamma."""

    alpha: float = 0.25
    gamma: float = 2.0

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha < 1.0:
            raise EvaluationError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.gamma < 0.0:
            raise EvaluationError(f"gamma must be >= 0, got {self.gamma}")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    def __post_init__(self) -> None:
        if min(self.tp, self.tn, self.fp, self.fn) < 0:
            raise EvaluationError("confusion counts must be nonnegative")

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    iou: float
    flags: tuple[str, ...] = ()

    def as_dict(self, counts: ConfusionCounts | None = None) -> dict:
        out = {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "iou": self.iou,
        }
        if counts is not None:
            out.update(tp=counts.tp, tn=counts.tn, fp=counts.fp, fn=counts.fn)
        if self.flags:
            out["flags"] = list(self.flags)
        return out


def _joint_setup(pred: ProbabilityMap, truth: BinaryMask):
    """Clamped probabilities, 0/1 truth, joint validity, and valid count."""
    if pred.probs.shape != truth.classes.shape:
        raise ShapeMismatchError(
            f"prediction shape {pred.probs.shape} vs truth shape {truth.classes.shape}"
        )
    valid = pred.validity & truth.validity
    n = int(valid.sum())
    if n == 0:
        raise EvaluationError("no jointly-valid pixels to evaluate")
    p = np.clip(pred.probs, EPS, 1.0 - EPS)
    y = truth.classes.astype(np.float64)
    return p, y, valid, n


def _mean(terms: np.ndarray, valid: np.ndarray, n: int) -> float:
    # row-major compensated reduction keeps the result order-independent
    return math.fsum(terms[valid]) / n


def bce_loss(pred: ProbabilityMap, truth: BinaryMask) -> tuple[float, np.ndarray]:
    """Mean binary cross-entropy and its gradient w.r.t. each probability."""
    p, y, valid, n = _joint_setup(pred, truth)
    terms = -(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))
    loss = _mean(terms, valid, n)
    grad = np.where(valid, (p - y) / (n * p * (1.0 - p)), 0.0)
    return loss, grad


def focal_loss(
    pred: ProbabilityMap, truth: BinaryMask, params: FocalParams = FocalParams()
) -> tuple[float, np.ndarray]:
    """Mean focal loss (down-weights well-classified pixels) and gradient."""
    p, y, valid, n = _joint_setup(pred, truth)
    a, g = params.alpha, params.gamma
    terms = -(
        a * (1.0 - p) ** g * y * np.log(p)
        + (1.0 - a) * p**g * (1.0 - y) * np.log(1.0 - p)
    )
    loss = _mean(terms, valid, n)
    pos = a * ((1.0 - p) ** g / p - g * (1.0 - p) ** (g - 1.0) * np.log(p))
    neg = (1.0 - a) * (p**g / (1.0 - p) - g * p ** (g - 1.0) * np.log(1.0 - p))
    grad = np.where(valid, (-y * pos + (1.0 - y) * neg) / n, 0.0)
    return loss, grad


def dice_loss(pred: ProbabilityMap, truth: BinaryMask) -> tuple[float, np.ndarray]:
    """Soft Dice loss over valid pixels and its gradient."""
    p, y, valid, n = _joint_setup(pred, truth)
    inter = math.fsum((p * y)[valid])
    psum = math.fsum(p[valid])
    ysum = math.fsum(y[valid])
    num = 2.0 * inter + DICE_SMOOTH
    den = psum + ysum + DICE_SMOOTH
    loss = 1.0 - num / den
    grad = np.where(valid, -(2.0 * y * den - num) / (den * den), 0.0)
    return loss, grad


def total_loss(
    pred: ProbabilityMap, truth: BinaryMask, params: FocalParams = FocalParams()
) -> tuple[float, np.ndarray]:
    """Unweighted sum of BCE, Dice, and Focal losses; gradients add."""
    lb, gb = bce_loss(pred, truth)
    ld, gd = dice_loss(pred, truth)
    lf, gf = focal_loss(pred, truth, params)
    return lb + ld + lf, gb + gd + gf


def confusion(pred_mask: BinaryMask, truth: BinaryMask) -> ConfusionCounts:
    """Exact TP/TN/FP/FN over jointly-valid pixels."""
    if pred_mask.classes.shape != truth.classes.shape:
        raise ShapeMismatchError(
            f"prediction shape {pred_mask.classes.shape} vs truth shape {truth.classes.shape}"
        )
    valid = pred_mask.validity & truth.validity
    p = pred_mask.classes[valid] == 1
    y = truth.classes[valid] == 1
    return ConfusionCounts(
        tp=int((p & y).sum()),
        tn=int((~p & ~y).sum()),
        fp=int((p & ~y).sum()),
        fn=int((~p & y).sum()),
    )


def _ratio(num: int, den: int, name: str, flags: list[str]) -> float:
    if den == 0:
        flags.append(f"degenerate:{name}")
        return 0.0
    return num / den


def metrics(cc: ConfusionCounts) -> MetricsReport:
    """Accuracy, precision, recall, F1, and IoU from confusion counts.

    Zero-division denominators yield 0 with a degenerate flag instead of
    raising, so pathological masks still produce a report.
    """
    if cc.total == 0:
        raise EvaluationError("empty counts: tp+tn+fp+fn must be positive")
    flags: list[str] = []
    accuracy = (cc.tp + cc.tn) / cc.total
    precision = _ratio(cc.tp, cc.tp + cc.fp, "precision", flags)
    recall = _ratio(cc.tp, cc.tp + cc.fn, "recall", flags)
    f1 = _ratio(2 * cc.tp, 2 * cc.tp + cc.fp + cc.fn, "f1", flags)
    iou = _ratio(cc.tp, cc.tp + cc.fp + cc.fn, "iou", flags)
    return MetricsReport(
        accuracy=accuracy,
        precision=precision,
        recall=recall,
        f1=f1,
        iou=iou,
        flags=tuple(flags),
    )
