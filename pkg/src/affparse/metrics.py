"""Segmentation metrics via an accumulating integer confusion matrix.

Per-class IoU is TP / (TP + FP + FN); the mean runs over classes present
in ground truth or prediction (absent classes report NaN and are skipped).
Pixel accuracy is correct/valid, mean accuracy the mean per-class recall
over gt-present classes.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionError
from .losses import LabelMap


@dataclass
class MetricsResult:
    miou: float
    pixel_acc: float
    mean_acc: float
    per_class_iou: np.ndarray  # (K,), NaN where the class is absent


class ConfusionMatrix:
    """K x K integer counts, rows = ground truth, cols = prediction."""

    def __init__(self, num_classes: int, ignore_index: int = 255):
        self.num_classes = num_classes
        self.ignore_index = ignore_index
        self.counts = np.zeros((num_classes, num_classes), dtype=np.int64)

    def update(self, pred: np.ndarray, gt: np.ndarray) -> None:
        pred = np.asarray(pred)
        gt = np.asarray(gt)
        if pred.shape != gt.shape:
            raise DimensionError(f"prediction {pred.shape} and ground truth {gt.shape} differ")
        mask = gt != self.ignore_index
        k = self.num_classes
        flat = k * gt[mask].astype(np.int64) + pred[mask].astype(np.int64)
        self.counts += np.bincount(flat, minlength=k * k).reshape(k, k)

    def merge(self, other: "ConfusionMatrix") -> None:
        self.counts += other.counts

    def result(self) -> MetricsResult:
        c = self.counts.astype(np.float64)
        tp = np.diag(c)
        gt_count = c.sum(axis=1)
        pred_count = c.sum(axis=0)
        union = gt_count + pred_count - tp
        iou = np.full(self.num_classes, np.nan)
        present = union > 0
        iou[present] = tp[present] / union[present]
        total = c.sum()
        pixel_acc = tp.sum() / total if total > 0 else 0.0
        gt_present = gt_count > 0
        mean_acc = float(np.mean(tp[gt_present] / gt_count[gt_present])) if gt_present.any() else 0.0
        miou = float(np.mean(iou[present])) if present.any() else 0.0
        return MetricsResult(miou=miou, pixel_acc=float(pixel_acc), mean_acc=mean_acc, per_class_iou=iou)


def _labels_array(x) -> tuple:
    if isinstance(x, LabelMap):
        return x.data, x.ignore_index
    return np.asarray(x), None


def segmentation_metrics(pred, gt, num_classes: int, ignore_index: int = 255) -> MetricsResult:
    pred_arr, _ = _labels_array(pred)
    gt_arr, gt_ignore = _labels_array(gt)
    cm = ConfusionMatrix(num_classes, gt_ignore if gt_ignore is not None else ignore_index)
    cm.update(pred_arr, gt_arr)
    return cm.result()


def write_report(path, result: MetricsResult, class_names=None) -> None:
    """CSV report: one iou row per class, then a summary block."""
    k = len(result.per_class_iou)
    names = class_names or [f"class_{i}" for i in range(k)]
    lines = ["class_id,class_name,iou"]
    for i in range(k):
        v = result.per_class_iou[i]
        lines.append(f"{i},{names[i]},{'' if np.isnan(v) else f'{v:.6f}'}")
    lines.append("mIoU,pixel_acc,mean_acc")
    lines.append(f"{result.miou:.6f},{result.pixel_acc:.6f},{result.mean_acc:.6f}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
