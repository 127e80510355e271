"""Segmentation losses (Dice, BCE, hybrid) and hard-mask evaluation metrics."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass

import numpy as np
import torch

DICE_EPS = 1e-8
BCE_CLIP = 1e-7

METRIC_COLUMNS = ("split", "dice", "iou", "precision", "recall", "tp", "tn", "fp", "fn")


def _check_shapes(pred, truth):
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: pred {tuple(pred.shape)} vs truth {tuple(truth.shape)}")


def soft_counts(pred: torch.Tensor, truth: torch.Tensor):
    tp = (pred * truth).sum()
    fp = (pred * (1 - truth)).sum()
    fn = ((1 - pred) * truth).sum()
    return tp, fp, fn


def dice_loss(pred: torch.Tensor, truth: torch.Tensor) -> torch.Tensor:
    """Soft Dice loss ``1 - (2TP + eps) / (2TP + FP + FN + eps)`` over the whole tensor."""
    _check_shapes(pred, truth)
    tp, fp, fn = soft_counts(pred, truth)
    return 1 - (2 * tp + DICE_EPS) / (2 * tp + fp + fn + DICE_EPS)


def bce_loss(pred: torch.Tensor, truth: torch.Tensor) -> torch.Tensor:
    _check_shapes(pred, truth)
    p = pred.clamp(BCE_CLIP, 1 - BCE_CLIP)
    return -(truth * torch.log(p) + (1 - truth) * torch.log(1 - p)).mean()


def hybrid_loss(pred: torch.Tensor, truth: torch.Tensor) -> torch.Tensor:
    return bce_loss(pred, truth) + dice_loss(pred, truth)


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def total(self):
        return self.tp + self.tn + self.fp + self.fn

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.tn + other.tn,
                               self.fp + other.fp, self.fn + other.fn)


def _as_binary(a, name):
    a = np.asarray(a)
    if a.dtype == bool:
        return a
    if not np.isin(a, (0, 1)).all():
        raise ValueError(f"{name} must be binary (0/1); threshold predictions first")
    return a.astype(bool)


def confusion(pred_binary, truth) -> ConfusionCounts:
    p = _as_binary(pred_binary, "pred_binary")
    t = _as_binary(truth, "truth")
    _check_shapes(p, t)
    return ConfusionCounts(
        tp=int(np.count_nonzero(p & t)),
        tn=int(np.count_nonzero(~p & ~t)),
        fp=int(np.count_nonzero(p & ~t)),
        fn=int(np.count_nonzero(~p & t)),
    )


def _ratio(num, den, empty_value):
    return num / den if den > 0 else empty_value


@dataclass(frozen=True)
class MetricsReport:
    dice: float
    iou: float
    precision: float
    recall: float
    counts: ConfusionCounts

    def to_dict(self) -> dict:
        return {"dice": self.dice, "iou": self.iou, "precision": self.precision,
                "recall": self.recall, **asdict(self.counts)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def csv_row(self, split: str) -> list:
        d = self.to_dict()
        return [split] + [d[k] for k in METRIC_COLUMNS[1:]]


def metrics(counts: ConfusionCounts) -> MetricsReport:
    """Hard-mask metrics from confusion counts.

    Zero-denominator cases score 1 when both prediction and truth are empty
    and 0 otherwise, so an all-background sample predicted as all-background
    is perfect while a missed or hallucinated object scores 0.
    """
    tp, fp, fn = counts.tp, counts.fp, counts.fn
    both_empty = 1.0 if (tp + fp + fn) == 0 else 0.0
    return MetricsReport(
        dice=_ratio(2 * tp, 2 * tp + fp + fn, both_empty),
        iou=_ratio(tp, tp + fp + fn, both_empty),
        precision=_ratio(tp, tp + fp, both_empty),
        recall=_ratio(tp, tp + fn, both_empty),
        counts=counts,
    )


def mean_report(reports: list[MetricsReport]) -> MetricsReport:
    """Per-sample mean of the four scores; counts are pooled."""
    if not reports:
        raise ValueError("no reports to average")
    pooled = reports[0].counts
    for r in reports[1:]:
        pooled = pooled + r.counts
    return MetricsReport(
        dice=float(np.mean([r.dice for r in reports])),
        iou=float(np.mean([r.iou for r in reports])),
        precision=float(np.mean([r.precision for r in reports])),
        recall=float(np.mean([r.recall for r in reports])),
        counts=pooled,
    )


def reports_to_csv(rows: dict[str, MetricsReport]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(METRIC_COLUMNS)
    for split, report in rows.items():
        writer.writerow(report.csv_row(split))
    return buf.getvalue()
