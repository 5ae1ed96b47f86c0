"""
Confusion-matrix bookkeeping, accuracy/sensitivity/specificity and timing.

The positive class is AD (label 1). Metrics whose denominator is zero are
reported as ``None`` (undefined) rather than 0 or 1.
"""
from __future__ import annotations
import logging
import time
from dataclasses import dataclass
from typing import Optional, Sequence

from .exceptions import EmptyInputError, LengthMismatchError, NonPositiveBaselineError, ValidationError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int = 0
    fn: int = 0
    fp: int = 0
    tn: int = 0

    def __post_init__(self) -> None:
        if min(self.tp, self.fn, self.fp, self.tn) < 0:
            raise ValidationError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fn + self.fp + self.tn

    def swapped(self) -> "ConfusionMatrix":
        """The same counts read with class 0 as the positive class."""
        return ConfusionMatrix(tp=self.tn, fn=self.fp, fp=self.fn, tn=self.tp)


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    sensitivity: Optional[float]
    specificity: Optional[float]

    @property
    def undefined(self) -> list[str]:
        return [name for name in ("sensitivity", "specificity") if getattr(self, name) is None]


@dataclass(frozen=True)
class TimingRecord:
    label: str
    seconds: float

    def __post_init__(self) -> None:
        if self.seconds < 0:
            raise ValidationError(f"timing for {self.label} is negative: {self.seconds}")


class Stopwatch:
    """Context manager timing a block with the monotonic clock."""

    def __init__(self, label: str = ""):
        self.label = label
        self.seconds = 0.0
        self._start = 0.0

    def __enter__(self) -> "Stopwatch":
        self._start = time.monotonic()
        return self

    def __exit__(self, *exc) -> None:
        self.seconds = time.monotonic() - self._start

    def record(self) -> TimingRecord:
        return TimingRecord(self.label, self.seconds)


def confusion_from_predictions(truth: Sequence[int], pred: Sequence[int]) -> ConfusionMatrix:
    truth, pred = list(truth), list(pred)
    if len(truth) != len(pred):
        raise LengthMismatchError(f"truth has {len(truth)} labels, pred has {len(pred)}")
    if not truth:
        raise EmptyInputError("no predictions to score")
    tp = fn = fp = tn = 0
    for t, p in zip(truth, pred):
        if t not in (0, 1) or p not in (0, 1):
            raise ValidationError(f"labels must be 0 or 1, got truth={t!r} pred={p!r}")
        if t == 1:
            if p == 1:
                tp += 1
            else:
                fn += 1
        elif p == 1:
            fp += 1
        else:
            tn += 1
    return ConfusionMatrix(tp=tp, fn=fn, fp=fp, tn=tn)


def metrics_from_cm(cm: ConfusionMatrix) -> Metrics:
    if cm.total == 0:
        raise EmptyInputError("confusion matrix is empty")
    positives = cm.tp + cm.fn
    negatives = cm.tn + cm.fp
    sensitivity = cm.tp / positives if positives else None
    specificity = cm.tn / negatives if negatives else None
    result = Metrics(accuracy=(cm.tp + cm.tn) / cm.total, sensitivity=sensitivity, specificity=specificity)
    if result.undefined:
        logger.warning("Undefined metric(s) %s for %s", ", ".join(result.undefined), cm)
    return result


def percentage_decrease(before: float, after: float) -> float:
    """(before - after) / before * 100."""
    if before <= 0:
        raise NonPositiveBaselineError(f"baseline must be > 0, got {before}")
    return (before - after) / before * 100.0
