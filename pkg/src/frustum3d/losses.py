"""Loss terms of the joint objective.

total = seg + tnet_center + lambda * (center_reg + angle_cls + angle_reg
        + size_cls + size_reg + gamma * corner)
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .errors import LabelError, NumericError
from .geometry import CORNER_SIGNS, Box3D, box_corners
from .tensor import Tensor

TERMS = ("seg", "tnet_center", "center_reg", "angle_cls", "angle_reg",
         "size_cls", "size_reg", "corner")


@dataclass
class LossWeights:
    lam: float = 1.0
    gamma: float = 10.0

    def __post_init__(self):
        if self.lam < 0 or self.gamma < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass
class LossBreakdown:
    seg: float
    tnet_center: float
    center_reg: float
    angle_cls: float
    angle_reg: float
    size_cls: float
    size_reg: float
    corner: float
    total: float

    def as_dict(self) -> dict[str, float]:
        return asdict(self)


def bin_mask(num_size: int, num_heading: int, size_bin: int, heading_bin: int) -> np.ndarray:
    if not (0 <= size_bin < num_size and 0 <= heading_bin < num_heading):
        raise LabelError(f"bin ({size_bin}, {heading_bin}) outside {num_size} x {num_heading}")
    m = np.zeros((num_size, num_heading))
    m[size_bin, heading_bin] = 1.0
    return m


def seg_loss(logits: Tensor, labels) -> Tensor:
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() > 1):
        raise LabelError("segmentation labels must be 0 or 1")
    return T.softmax_cross_entropy(logits, labels)


def center_loss(pred_center: Tensor, gt_center, delta: float = 1.0) -> Tensor:
    """Smooth-L1 summed over the three coordinates."""
    return T.smooth_l1(pred_center, np.asarray(gt_center, dtype=np.float64), delta, "sum")


def center_losses(tnet_center: Tensor, final_center: Tensor, gt_center, delta: float = 1.0):
    return center_loss(tnet_center, gt_center, delta), center_loss(final_center, gt_center, delta)


def angle_reg_loss(theta_pred: Tensor, theta_gt, mask, batch_size: int = 1) -> Tensor:
    """``(1/B) * sum_mn M_mn (2 - 2 cos(theta_mn - theta*_mn))``."""
    mask = np.asarray(mask, dtype=np.float64)
    diff = T.sub(theta_pred, np.asarray(theta_gt, dtype=np.float64))
    return T.tsum((2.0 - 2.0 * T.cos(diff)) * mask) * (1.0 / batch_size)


def angle_reg_modulus_form(theta_pred, theta_gt, mask, batch_size: int = 1) -> float:
    """Same loss written as ``|e^{j a} - e^{j b}|^2`` with complex numbers."""
    a = np.asarray(theta_pred, dtype=np.float64)
    b = np.asarray(theta_gt, dtype=np.float64)
    return float(np.sum(np.asarray(mask) * np.abs(np.exp(1j * a) - np.exp(1j * b)) ** 2)
                 / batch_size)


def angle_reg_trig_form(theta_pred, theta_gt, mask, batch_size: int = 1) -> float:
    """Same loss expanded as ``(cos a - cos b)^2 + (sin a - sin b)^2``."""
    a = np.asarray(theta_pred, dtype=np.float64)
    b = np.asarray(theta_gt, dtype=np.float64)
    val = (np.cos(a) - np.cos(b)) ** 2 + (np.sin(a) - np.sin(b)) ** 2
    return float(np.sum(np.asarray(mask) * val) / batch_size)


def naive_angle_loss(res_pred: Tensor, res_gt: float, delta: float = 1.0) -> Tensor:
    """Smooth-L1 on the normalised heading residual of the ground-truth bin."""
    return T.smooth_l1(res_pred, np.array(res_gt), delta, "mean")


def _check_index(i: int, n: int, what: str) -> None:
    if not (0 <= int(i) < n) or int(i) != i:
        raise LabelError(f"{what} index {i} outside [0, {n})")


def angle_cls_loss(scores: Tensor, gt_bin: int) -> Tensor:
    _check_index(gt_bin, scores.shape[-1], "heading bin")
    return T.softmax_cross_entropy(scores, np.array(gt_bin))


def size_cls_loss(scores: Tensor, gt_template: int) -> Tensor:
    _check_index(gt_template, scores.shape[-1], "size template")
    return T.softmax_cross_entropy(scores, np.array(gt_template))


def size_reg_loss(residuals: Tensor, gt_residual, mask, delta: float = 1.0) -> Tensor:
    """Smooth-L1 (mean over h, w, l) on the residual row selected by ``mask``.

    ``mask`` may be a length-NS indicator or an NS x NH bin mask.
    """
    mask = np.asarray(mask, dtype=np.float64)
    row = mask if mask.ndim == 1 else mask.sum(axis=1)
    picked = T.tsum(residuals * row[:, None], axis=0)
    return T.smooth_l1(picked, np.asarray(gt_residual, dtype=np.float64), delta, "mean")


def corners_tensor(center: Tensor, size_hwl: Tensor, theta: Tensor) -> Tensor:
    """Differentiable version of :func:`geometry.box_corners` (8 x 3)."""
    half_lwh = T.concat([size_hwl[2:3], size_hwl[1:2], size_hwl[0:1]]) * 0.5
    local = half_lwh * CORNER_SIGNS  # 8 x 3
    c, s = T.cos(theta), T.sin(theta)
    lx, ly, lz = local[:, 0], local[:, 1], local[:, 2]
    x = lx * c - ly * s
    y = lx * s + ly * c
    return T.stack([x, y, lz], axis=1) + center


def corner_distance_tensor(pred_corners: Tensor, gt: Box3D) -> Tensor:
    """Mean corner distance to ``gt``, minimised over the heading flip of ``gt``."""
    dists = []
    for box in (gt, gt.flipped()):
        d = T.sub(pred_corners, box_corners(box))
        dists.append(T.mean(T.sqrt(T.tsum(d * d, axis=1))))
    return T.minimum(dists[0], dists[1])


def corner_loss(pred, gt: Box3D, delta: float = 1.0) -> Tensor:
    """Smooth-L1 of the flip-minimised mean corner distance.

    ``pred`` is either a :class:`Box3D` or a ``(center, size_hwl, theta)``
    triple of tensors.
    """
    if isinstance(pred, Box3D):
        pred_corners = Tensor(box_corners(pred))
    else:
        pred_corners = corners_tensor(*pred)
    dist = corner_distance_tensor(pred_corners, gt)
    return T.smooth_l1(dist, np.array(0.0), delta, "sum")


def total_loss(parts: dict[str, Tensor | float], weights: LossWeights) -> tuple[Tensor, LossBreakdown]:
    """Weighted recombination; returns the differentiable total and its breakdown."""
    missing = [k for k in TERMS if k not in parts]
    if missing:
        raise KeyError(f"missing loss terms {missing}")

    def t(k):
        v = parts[k]
        return v if isinstance(v, Tensor) else Tensor(np.array(float(v)))

    box_group = (t("center_reg") + t("angle_cls") + t("angle_reg") + t("size_cls")
                 + t("size_reg") + t("corner") * weights.gamma)
    total = t("seg") + t("tnet_center") + box_group * weights.lam
    vals = {k: float(t(k).item()) for k in TERMS}
    if not all(np.isfinite(v) for v in vals.values()):
        raise NumericError(f"non-finite loss term in {vals}")
    return total, LossBreakdown(**vals, total=float(total.item()))
