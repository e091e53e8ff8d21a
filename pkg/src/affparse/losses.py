"""Training objectives: parsing cross entropy, its hard-example-mined
variant, class-weighted boundary cross entropy, joint-heatmap regression,
and the weighted total.

All losses are scalar tensors on the autodiff tape. Pixel selection masks
(validity, OHEM keep set, class weights) are computed from forward values
and enter the graph as constants, so discarded pixels get zero gradient.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DataError, DimensionError
from .tensor import Tensor, log_softmax_along, mean_all, mul, scale, sub, sum_all


@dataclass
class LossWeights:
    """Balance factors and pixel-selection hyperparameters."""

    alpha: float = 1.0               # boundary term
    beta: float = 10.0               # heatmap term
    ohem_keep_fraction: float = 0.25
    ohem_min_kept: int = 64
    boundary_pos_weight_mode: str = "inverse-frequency"  # or "fixed"
    boundary_fixed_pos_weight: float = 2.0

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ConfigurationError(f"loss weights must be nonnegative, got alpha={self.alpha} beta={self.beta}")
        if not 0.0 < self.ohem_keep_fraction <= 1.0:
            raise ConfigurationError(f"ohem_keep_fraction must be in (0, 1], got {self.ohem_keep_fraction}")
        if self.ohem_min_kept < 1:
            raise ConfigurationError(f"ohem_min_kept must be >= 1, got {self.ohem_min_kept}")
        if self.boundary_pos_weight_mode not in ("inverse-frequency", "fixed"):
            raise ConfigurationError(f"unknown boundary weight mode {self.boundary_pos_weight_mode!r}")


@dataclass
class LabelMap:
    """Per-pixel integer class ids, (B, H, W), with an ignore value."""

    data: np.ndarray
    num_classes: int
    ignore_index: int = 255

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim == 2:
            self.data = self.data[None]
        if self.data.ndim != 3:
            raise DimensionError(f"label maps are (B, H, W), got {self.data.shape}")
        if not np.issubdtype(self.data.dtype, np.integer):
            self.data = self.data.astype(np.int64)


def _check_logits_target(logits: Tensor, target: LabelMap):
    if logits.data.ndim != 4:
        raise DimensionError(f"logits are (B, K, H, W), got {logits.shape}")
    b, k, h, w = logits.data.shape
    if k != target.num_classes:
        raise DimensionError(f"logits carry {k} classes, target declares {target.num_classes}")
    if target.data.shape != (b, h, w):
        raise DimensionError(f"target shape {target.data.shape} does not match logits {logits.shape}")
    valid = target.data != target.ignore_index
    bad = valid & ((target.data < 0) | (target.data >= k))
    if bad.any():
        raise DataError(f"target contains class id {int(target.data[bad][0])} outside [0, {k})")
    if not valid.any():
        raise DataError("target has no valid pixels")
    return valid


def _one_hot(target: LabelMap, k: int, valid: np.ndarray) -> np.ndarray:
    b, h, w = target.data.shape
    oh = np.zeros((b, k, h, w), dtype=np.float32)
    bi, hi, wi = np.nonzero(valid)
    oh[bi, target.data[bi, hi, wi], hi, wi] = 1.0
    return oh


def cross_entropy(logits: Tensor, target: LabelMap) -> Tensor:
    """Mean over valid pixels of -log softmax(logits)[target]."""
    valid = _check_logits_target(logits, target)
    oh = _one_hot(target, logits.data.shape[1], valid)
    picked = mul(log_softmax_along(logits, axis=1), Tensor(oh, dtype=logits.data.dtype))
    return scale(sum_all(picked), -1.0 / float(valid.sum()))


def _per_pixel_ce(logits: Tensor, oh: np.ndarray):
    """log-softmax node plus the (B, H, W) per-pixel loss values."""
    ls = log_softmax_along(logits, axis=1)
    values = -(ls.data * oh).sum(axis=1)
    return ls, values


def ohem_cross_entropy(logits: Tensor, target: LabelMap, w: LossWeights) -> Tensor:
    """Average the per-pixel CE over only the hardest pixels.

    Keeps max(ohem_min_kept, ceil(keep_fraction * valid)) pixels (clamped
    to the valid count); ties at the cutoff are all kept. Discarded pixels
    contribute no gradient.
    """
    valid = _check_logits_target(logits, target)
    oh = _one_hot(target, logits.data.shape[1], valid)
    ls, px = _per_pixel_ce(logits, oh)
    n_valid = int(valid.sum())
    quota = min(n_valid, max(int(w.ohem_min_kept), math.ceil(w.ohem_keep_fraction * n_valid)))
    losses = px[valid]
    cutoff = np.partition(losses, n_valid - quota)[n_valid - quota]
    keep = valid & (px >= cutoff)
    kept = int(keep.sum())
    mask = oh * keep[:, None, :, :]
    return scale(sum_all(mul(ls, Tensor(mask, dtype=logits.data.dtype))), -1.0 / kept)


def boundary_ce(logits: Tensor, target: LabelMap, w: LossWeights) -> Tensor:
    """Two-class CE with per-class weights.

    Inverse-frequency mode sets weight_c = valid / (2 * count_c) from the
    batch; if either class is absent it falls back to the fixed weights
    (1 for background, ``boundary_fixed_pos_weight`` for boundary). The sum
    is normalized by the total weight of the counted pixels, so balanced
    targets reduce to plain CE.
    """
    if logits.data.ndim != 4 or logits.data.shape[1] != 2:
        raise DimensionError(f"boundary logits are (B, 2, H, W), got {logits.shape}")
    valid = _check_logits_target(logits, target)
    counts = np.array([np.count_nonzero(valid & (target.data == c)) for c in (0, 1)], dtype=np.float64)
    if w.boundary_pos_weight_mode == "inverse-frequency" and counts.min() > 0:
        weights = valid.sum() / (2.0 * counts)
    else:
        weights = np.array([1.0, float(w.boundary_fixed_pos_weight)])
    oh = _one_hot(target, 2, valid)
    pixel_w = np.where(valid, weights[np.clip(target.data, 0, 1)], 0.0)
    mask = oh * pixel_w[:, None, :, :]
    norm = float(pixel_w.sum())
    ls = log_softmax_along(logits, axis=1)
    return scale(sum_all(mul(ls, Tensor(mask, dtype=logits.data.dtype))), -1.0 / norm)


def skeleton_mse(pred_heatmaps: Tensor, gt_heatmaps) -> Tensor:
    """Mean squared error over every element."""
    gt = gt_heatmaps if isinstance(gt_heatmaps, Tensor) else Tensor(np.asarray(gt_heatmaps, dtype=np.float32))
    if pred_heatmaps.data.shape != gt.data.shape:
        raise DimensionError(f"heatmap shapes differ: {pred_heatmaps.shape} vs {gt.data.shape}")
    d = sub(pred_heatmaps, gt)
    return mean_all(mul(d, d))


@dataclass
class TrainTargets:
    """Supervision bundle for one batch."""

    labels: LabelMap
    boundary: LabelMap
    heatmaps: np.ndarray  # (B, J, H, W)


@dataclass
class LossReport:
    total: float
    base: float = 0.0
    fine: float = 0.0
    bd: float = 0.0
    ske: float = 0.0


def total_loss(base_logits: Tensor, fine_logits: Tensor,
               boundary_logits, skel_pred, targets: TrainTargets,
               w: LossWeights):
    """Weighted sum of the four terms; absent branch outputs contribute 0.

    Returns (scalar tensor, LossReport with the unweighted components).
    """
    l_base = cross_entropy(base_logits, targets.labels)
    l_fine = ohem_cross_entropy(fine_logits, targets.labels, w)
    total = l_base + l_fine
    report = LossReport(total=0.0, base=l_base.item(), fine=l_fine.item())
    if boundary_logits is not None:
        l_bd = boundary_ce(boundary_logits, targets.boundary, w)
        report.bd = l_bd.item()
        total = total + scale(l_bd, w.alpha)
    if skel_pred is not None:
        l_ske = skeleton_mse(skel_pred, targets.heatmaps)
        report.ske = l_ske.item()
        total = total + scale(l_ske, w.beta)
    report.total = total.item()
    return total, report
