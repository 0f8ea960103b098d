"""Dataset splitting, detection matching and the detection-performance metrics.

Two evaluation modes exist. ``chip`` mode scores classifications of
held-out chips; it defines true negatives and is the one accuracy and
Cohen's kappa are meaningful for. ``box`` mode matches scene detections
against truth boxes one to one.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass
from typing import Callable, Literal, Optional, Sequence, TypeVar

import numpy as np

from .detector import Detection, iou
from .errors import ValidationError
from .scene_io import SEA, VESSEL, GroundTruth

T = TypeVar("T")

REPORT_KEYS = (
    "accuracy_pct",
    "precision",
    "recall",
    "f1",
    "cohen_kappa",
    "jaccard",
    "training_time_ms",
    "detection_time_ms",
)


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ValidationError(f"confusion counts must be non-negative: {self}")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EvalReport:
    accuracy_pct: float
    precision: float
    recall: float
    f1: float
    cohen_kappa: float
    jaccard: float
    counts: ConfusionCounts
    mode: Literal["chip", "box"] = "chip"
    training_time_ms: float = 0.0
    detection_time_ms: float = 0.0

    def to_dict(self) -> dict:
        out = {k: float(getattr(self, k)) for k in REPORT_KEYS}
        out["counts"] = self.counts.to_dict()
        out["mode"] = self.mode
        return out


def split_dataset(chips: Sequence[T], train_fraction: float = 0.75, seed: int = 0) -> tuple[list[T], list[T]]:
    """Seeded shuffle; the first ``round(n * train_fraction)`` items train."""
    if len(chips) < 2:
        raise ValidationError("need at least two chips to split")
    if not 0 < train_fraction < 1:
        raise ValidationError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    order = np.random.Generator(np.random.PCG64(seed)).permutation(len(chips))
    n_train = int(round(len(chips) * train_fraction))
    return [chips[i] for i in order[:n_train]], [chips[i] for i in order[n_train:]]


def match_box_detections(
    dets: Sequence[Detection],
    truth: GroundTruth,
    iou_min: float = 0.5,
    n_proposals: Optional[int] = None,
) -> ConfusionCounts:
    """Greedy one-to-one matching in descending score order."""
    boxes = truth.vessel_boxes
    matched = [False] * len(boxes)
    tp = fp = 0
    for det in sorted(dets, key=lambda d: (-d.score, d.box.row, d.box.col)):
        best, best_iou = -1, -1.0
        for j, box in enumerate(boxes):
            if not matched[j]:
                v = iou(det.box, box)
                if v > best_iou:
                    best, best_iou = j, v
        if best >= 0 and best_iou >= iou_min:
            matched[best] = True
            tp += 1
        else:
            fp += 1
    fn = matched.count(False)
    tn = 0
    if n_proposals is not None:
        tn = n_proposals - tp - fp
        if tn < 0:
            raise ValidationError(f"n_proposals={n_proposals} is smaller than the {tp + fp} detections")
    return ConfusionCounts(tp, fp, fn, tn)


def chip_confusion(predictions: Sequence[str], labels: Sequence[str]) -> ConfusionCounts:
    if len(predictions) != len(labels):
        raise ValidationError(f"{len(predictions)} predictions for {len(labels)} labels")
    for v in (*predictions, *labels):
        if v not in (VESSEL, SEA):
            raise ValidationError(f"unknown class {v!r}")
    p = np.asarray(predictions) == VESSEL
    t = np.asarray(labels) == VESSEL
    return ConfusionCounts(
        int(np.sum(p & t)), int(np.sum(p & ~t)), int(np.sum(~p & t)), int(np.sum(~p & ~t))
    )


def metrics(
    counts: ConfusionCounts,
    mode: Literal["chip", "box"] = "chip",
    training_time_ms: float = 0.0,
    detection_time_ms: float = 0.0,
) -> EvalReport:
    total = counts.total
    if total == 0:
        raise ValidationError("metrics are undefined for all-zero counts")
    tp, fp, fn, tn = counts.tp, counts.fp, counts.fn, counts.tn
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    jaccard = tp / (tp + fp + fn) if tp + fp + fn else 1.0
    p_o = (tp + tn) / total
    p_e = ((tp + fp) * (tp + fn) + (fn + tn) * (fp + tn)) / total**2
    kappa = 1.0 if p_e == 1 else (p_o - p_e) / (1 - p_e)
    return EvalReport(
        accuracy_pct=100.0 * p_o,
        precision=precision,
        recall=recall,
        f1=f1,
        cohen_kappa=kappa,
        jaccard=jaccard,
        counts=counts,
        mode=mode,
        training_time_ms=float(training_time_ms),
        detection_time_ms=float(detection_time_ms),
    )


def time_ms(action: Callable[[], T]) -> tuple[T, float]:
    """Run ``action`` and return its result with the monotonic wall time in ms."""
    t0 = time.perf_counter()
    result = action()
    return result, (time.perf_counter() - t0) * 1000.0
