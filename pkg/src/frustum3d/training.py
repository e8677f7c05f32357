"""Adam training over the joint loss, and dataset-level evaluation helpers."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .data import FrustumSample, augment
from .errors import NumericError
from .evaluation import APResult, GroundTruth, evaluate
from .geometry import wrap_angle
from .losses import TERMS, LossWeights
from .networks import ClassTemplates, NetConfig
from .pipeline import detect, forward, sample_loss

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    steps: int = 1500
    batch_size: int = 4
    lr: float = 0.001
    lr_decay: float = 1.0   # multiplicative factor per ``decay_steps`` steps
    decay_steps: int = 1000
    beta1: float = 0.95
    beta2: float = 0.999
    eps_hat: float = 1e-8
    angle_loss: str = "naive"
    finetune_steps: int = 0
    finetune_angle_loss: str = "cosine"
    flip: bool = True
    max_zshift: float = 0.5
    mask_from_labels: bool = False
    # steps at the start that feed the box branch ground-truth masks even when
    # mask_from_labels is False
    teacher_mask_steps: int = 0


def learning_rate(step: int, cfg: TrainConfig) -> float:
    """Exponentially decayed step size, ``lr * lr_decay ** (step / decay_steps)``."""
    return cfg.lr * cfg.lr_decay ** (step / cfg.decay_steps)


def phase_of(step: int, cfg: TrainConfig) -> str:
    return cfg.angle_loss if step < cfg.steps else cfg.finetune_angle_loss


def batch_gradient(params: T.ParameterSet, net: NetConfig, templates: ClassTemplates,
                   batch: Sequence[FrustumSample], weights: LossWeights, angle_mode: str,
                   mask_from_labels: bool = False):
    """Batch-mean loss breakdown and gradients (one tape per sample)."""
    tensors = params.tensors()
    grads = [np.zeros_like(t.data) for t in tensors]
    acc = {k: 0.0 for k in TERMS + ("total",)}
    for s in batch:
        with T.Tape() as tape:
            total, br, _ = sample_loss(params, net, templates, s, weights, angle_mode,
                                       mask_from_labels)
        for g, gi in zip(grads, tape.gradient(total, tensors)):
            g += gi
        for k, v in br.as_dict().items():
            acc[k] += v
    inv = 1.0 / len(batch)
    for g in grads:
        g *= inv
    return {k: v * inv for k, v in acc.items()}, grads


def train(params: T.ParameterSet, net: NetConfig, templates: ClassTemplates,
          samples: Sequence[FrustumSample], cfg: TrainConfig, weights: LossWeights,
          seed: int = 0, on_step: Callable[[dict], None] | None = None,
          start_step: int = 0) -> list[dict]:
    """Run ``cfg.steps + cfg.finetune_steps`` Adam steps; returns the per-step log."""
    if not samples:
        raise ValueError("no training samples")
    rng = np.random.default_rng(seed)
    history = []
    order: list[int] = []
    plist = list(params)
    for step in range(start_step, cfg.steps + cfg.finetune_steps):
        batch = []
        for _ in range(cfg.batch_size):
            if not order:
                order = list(rng.permutation(len(samples)))
            batch.append(augment(samples[order.pop()], rng, cfg.flip, cfg.max_zshift))
        mode = phase_of(step, cfg)
        gt_masks = cfg.mask_from_labels or step < cfg.teacher_mask_steps
        try:
            br, grads = batch_gradient(params, net, templates, batch, weights, mode, gt_masks)
        except NumericError as exc:
            raise NumericError(f"step {step}: {exc}") from exc
        if not all(np.all(np.isfinite(g)) for g in grads):
            raise NumericError(f"step {step}: non-finite gradient; losses {br}")
        T.adam_step(plist, grads, learning_rate(step, cfg), cfg.beta1, cfg.beta2, cfg.eps_hat)
        entry = {"step": step, "phase": mode, **br}
        history.append(entry)
        if on_step is not None:
            on_step(entry)
    return history


def ground_truths(samples: Sequence[FrustumSample]) -> list[GroundTruth]:
    return [GroundTruth(s.gt_box, s.class_id, i) for i, s in enumerate(samples)]


def detect_all(params, net: NetConfig, templates: ClassTemplates, samples):
    return [detect(params, net, templates, s, i) for i, s in enumerate(samples)]


def evaluate_samples(params, net: NetConfig, templates: ClassTemplates,
                     samples: Sequence[FrustumSample], class_names: Sequence[str],
                     thresholds: dict[str, float], metric: str = "3d",
                     num_points: int = 11, dets=None) -> APResult:
    dets = detect_all(params, net, templates, samples) if dets is None else dets
    return evaluate(dets, ground_truths(samples), class_names, thresholds, metric, num_points)


def segmentation_accuracy(params, net: NetConfig, templates: ClassTemplates, samples) -> float:
    correct = total = 0
    for s in samples:
        fr = forward(params, net, templates, s)
        pred = fr.seg.probabilities > 0.5
        correct += int(np.sum(pred == s.seg_labels.astype(bool)))
        total += len(s.seg_labels)
    return correct / max(total, 1)


def mean_heading_error(dets, samples) -> float:
    """Mean absolute wrapped heading difference between detections and ground truth."""
    errs = [abs(wrap_angle(d.box.theta - s.gt_box.theta)) for d, s in zip(dets, samples)]
    return float(np.mean(errs))
