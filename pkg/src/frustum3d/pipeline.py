"""Per-sample forward pass through all three networks and the joint loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import losses as L
from . import tensor as T
from .data import FrustumSample
from .errors import NumericError
from .evaluation import Detection
from .geometry import Box3D, box_from_frustum_frame
from .networks import (BoxPrediction, ClassTemplates, NetConfig, SegmentationOutput, box_targets,
                       decode_box, mask_select, point_senet_forward, point_unet_forward,
                       size_templates_from_boxes, heading_bin_centers, tnet_forward)
from .tensor import Tensor

ANGLE_MODES = ("naive", "cosine")


@dataclass
class ForwardResult:
    seg: SegmentationOutput
    mask_indices: np.ndarray
    centroid: np.ndarray
    delta: Tensor
    pred: BoxPrediction
    box_frustum: Box3D
    box: Box3D
    score: float

    @property
    def tnet_center(self) -> Tensor:
        return Tensor(self.centroid) - self.delta

    @property
    def final_center(self) -> Tensor:
        return self.tnet_center + self.pred.center()


def forward(params: T.ParameterSet, cfg: NetConfig, templates: ClassTemplates,
            sample: FrustumSample, mask_from_labels: bool = False,
            threshold: float = 0.5) -> ForwardResult:
    """Segment, select the mask, translate, estimate and decode one frustum."""
    pts = sample.canonical_points()
    seg = point_unet_forward(params, cfg, pts, sample.one_hot, sample.image_feature)
    probs = sample.seg_labels.astype(np.float64) if mask_from_labels else seg.probabilities
    interest, centroid, idx = mask_select(pts, probs, threshold)
    centred = interest.copy()
    centred[:, :3] -= centroid
    delta, translated = tnet_forward(params, cfg, centred)
    pred = point_senet_forward(params, cfg, translated)
    if not (np.all(np.isfinite(seg.logits.data)) and np.all(np.isfinite(pred.raw.data))
            and np.all(np.isfinite(delta.data))):
        raise NumericError("non-finite network output")
    cls = sample.class_id
    box_c = decode_box(pred.raw, centroid, delta, templates, cls)
    box = box_from_frustum_frame(box_c, sample.frame)
    p_size = T.softmax(pred.size_scores()).max()
    p_head = T.softmax(pred.heading_scores()).max()
    score = float(seg.probabilities[idx].mean() * p_size * p_head)
    return ForwardResult(seg, idx, centroid, delta, pred, box_c, box, score)


def loss_terms(fr: ForwardResult, sample: FrustumSample, templates: ClassTemplates,
               angle_mode: str = "naive") -> dict[str, Tensor]:
    """Every term of the joint objective for one sample (frustum frame)."""
    if angle_mode not in ANGLE_MODES:
        raise ValueError(f"angle_mode must be one of {ANGLE_MODES}")
    gt = sample.canonical_box()
    cls = sample.class_id
    tg = box_targets(gt, templates, cls)
    pred = fr.pred
    ns, nh = templates.num_size, templates.num_heading
    seg = L.seg_loss(fr.seg.logits, sample.seg_labels)
    final_center = fr.final_center
    tnet_c, center_reg = L.center_losses(fr.tnet_center, final_center, gt.center)
    size_onehot = np.eye(ns)[tg.size_bin]
    size_cls = L.size_cls_loss(pred.size_scores(), tg.size_bin)
    size_reg = L.size_reg_loss(pred.size_residuals(), tg.size_residual, size_onehot)
    angle_cls = L.angle_cls_loss(pred.heading_scores(), tg.heading_bin)
    head_res = pred.heading_residuals()
    if angle_mode == "naive":
        angle_reg = L.naive_angle_loss(head_res[tg.heading_bin], tg.heading_residual)
    else:
        theta_bins = head_res * templates.half_bin + templates.heading_centers
        theta_pred = T.broadcast_to(T.reshape(theta_bins, (1, nh)), (ns, nh))
        theta_gt = np.full((ns, nh), gt.theta)
        mask = L.bin_mask(ns, nh, tg.size_bin, tg.heading_bin)
        angle_reg = L.angle_reg_loss(theta_pred, theta_gt, mask, batch_size=1)
    size_pred = (pred.size_residuals()[tg.size_bin] + 1.0) * templates.sizes[cls, tg.size_bin]
    theta_corner = (head_res[tg.heading_bin] * templates.half_bin
                    + templates.heading_centers[tg.heading_bin])
    corner = L.corner_loss((final_center, size_pred, theta_corner), gt)
    return {"seg": seg, "tnet_center": tnet_c, "center_reg": center_reg, "angle_cls": angle_cls,
            "angle_reg": angle_reg, "size_cls": size_cls, "size_reg": size_reg, "corner": corner}


def sample_loss(params, cfg: NetConfig, templates: ClassTemplates, sample: FrustumSample,
                weights: L.LossWeights, angle_mode: str = "naive",
                mask_from_labels: bool = False):
    fr = forward(params, cfg, templates, sample, mask_from_labels)
    total, breakdown = L.total_loss(loss_terms(fr, sample, templates, angle_mode), weights)
    return total, breakdown, fr


def detect(params, cfg: NetConfig, templates: ClassTemplates, sample: FrustumSample,
           frame: int = 0) -> Detection:
    fr = forward(params, cfg, templates, sample)
    return Detection(fr.box, fr.score, sample.class_id, frame)


def templates_from_samples(samples, cfg: NetConfig) -> ClassTemplates:
    """Size templates from the canonical ground-truth boxes of a training split."""
    by_class = [[] for _ in range(cfg.num_classes)]
    for s in samples:
        by_class[s.class_id].append(s.gt_box.size)
    sizes = size_templates_from_boxes([np.array(b) for b in by_class], cfg.num_size)
    return ClassTemplates(sizes, heading_bin_centers(cfg.num_heading))
