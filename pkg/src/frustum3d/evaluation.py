"""Greedy detection matching and interpolated average precision."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ClassError
from .geometry import Box3D, iou_3d, iou_bev

# IoU presets by class name
KITTI_THRESHOLDS = {"car": 0.7, "pedestrian": 0.5, "cyclist": 0.5}
SUNRGBD_CLASSES = ("bathtub", "bed", "bookshelf", "chair", "desk", "dresser",
                   "nightstand", "sofa", "table", "toilet")
SUNRGBD_THRESHOLDS = {name: 0.25 for name in SUNRGBD_CLASSES}


def threshold_profile(name: str, class_names: Sequence[str]) -> dict[str, float]:
    """Per-class IoU thresholds for ``kitti``, ``sunrgbd`` or ``uniform:<t>``.

    Under ``sunrgbd`` every class uses 0.25 whatever its name.
    """
    if name == "kitti":
        unknown = [c for c in class_names if c not in KITTI_THRESHOLDS]
        if unknown:
            raise ClassError(f"no KITTI threshold for classes {unknown}")
        return {c: KITTI_THRESHOLDS[c] for c in class_names}
    if name == "sunrgbd":
        return {c: 0.25 for c in class_names}
    if name.startswith("uniform:"):
        t = float(name.split(":", 1)[1])
        return {c: t for c in class_names}
    raise ValueError(f"unknown threshold profile {name!r}")


@dataclass
class Detection:
    box: Box3D
    score: float
    class_id: int
    frame: int = 0

    def __post_init__(self):
        if not np.isfinite(self.score):
            raise ValueError("detection score must be finite")


@dataclass
class GroundTruth:
    box: Box3D
    class_id: int
    frame: int = 0


@dataclass
class MatchResult:
    tp: np.ndarray  # flags in descending-score order
    fp: np.ndarray
    order: np.ndarray  # detection indices in that order
    pairs: list[tuple[int, int]] = field(default_factory=list)  # (det index, gt index)


IOU_FUNCS: dict[str, Callable[[Box3D, Box3D], float]] = {"3d": iou_3d, "bev": iou_bev}


def score_order(dets: Sequence[Detection]) -> np.ndarray:
    """Descending score, ties by input index."""
    scores = np.array([d.score for d in dets], dtype=np.float64)
    return np.lexsort((np.arange(len(dets)), -scores)) if len(dets) else np.zeros(0, np.intp)


def match_detections(dets: Sequence[Detection], gts: Sequence[GroundTruth],
                     iou_fn: Callable[[Box3D, Box3D], float], threshold: float) -> MatchResult:
    """Greedy matching in descending score order.

    A detection is a true positive when the best IoU against the still
    unmatched ground truths of its frame exceeds ``threshold``.
    """
    order = score_order(dets)
    tp = np.zeros(len(dets), dtype=bool)
    used = np.zeros(len(gts), dtype=bool)
    by_frame: dict[int, list[int]] = {}
    for j, g in enumerate(gts):
        by_frame.setdefault(g.frame, []).append(j)
    pairs = []
    for rank, i in enumerate(order):
        d = dets[i]
        best, best_j = -1.0, -1
        for j in by_frame.get(d.frame, []):
            if used[j]:
                continue
            v = iou_fn(d.box, gts[j].box)
            if v > best:
                best, best_j = v, j
        if best_j >= 0 and best > threshold:
            used[best_j] = True
            tp[rank] = True
            pairs.append((int(i), best_j))
    return MatchResult(tp, ~tp, order, pairs)


def average_precision(tp_flags, num_gt: int, num_points: int = 11) -> float:
    """Interpolated AP from TP flags sorted by descending score.

    ``num_points=11`` samples recall at 0, 0.1, ..., 1; ``num_points=40``
    samples 1/40, ..., 1.
    """
    tp = np.asarray(tp_flags, dtype=bool)
    if num_gt == 0:
        return 1.0 if tp.size == 0 else 0.0
    if tp.size == 0:
        return 0.0
    ctp = np.cumsum(tp)
    precision = ctp / np.arange(1, tp.size + 1)
    recall = ctp / num_gt
    if num_points == 11:
        levels = np.linspace(0.0, 1.0, 11)
    elif num_points == 40:
        levels = np.arange(1, 41) / 40.0
    else:
        raise ValueError("num_points must be 11 or 40")
    total = 0.0
    for r in levels:
        ok = recall >= r - 1e-12
        total += precision[ok].max() if ok.any() else 0.0
    return float(total / len(levels))


@dataclass
class APResult:
    per_class: dict[str, float]
    mAP: float
    thresholds: dict[str, float]
    counts: dict[str, dict[str, int]]
    metric: str

    def to_json(self, **extra) -> str:
        payload = {"metric": self.metric, "mAP": self.mAP, "per_class": self.per_class,
                   "thresholds": self.thresholds, "counts": self.counts}
        payload.update(extra)
        return json.dumps(payload, sort_keys=True)


def evaluate(dets: Sequence[Detection], gts: Sequence[GroundTruth], class_names: Sequence[str],
             thresholds: dict[str, float], metric: str = "3d",
             num_points: int = 11) -> APResult:
    """Per-class AP and their mean over classes that have detections or ground truth."""
    if metric not in IOU_FUNCS:
        raise ValueError(f"metric must be one of {sorted(IOU_FUNCS)}")
    for obj in list(dets) + list(gts):
        if not 0 <= obj.class_id < len(class_names):
            raise ClassError(f"unknown class id {obj.class_id}")
    missing = [c for c in class_names if c not in thresholds]
    if missing:
        raise ClassError(f"no IoU threshold for classes {missing}")
    iou_fn = IOU_FUNCS[metric]
    per_class, counts = {}, {}
    for k, name in enumerate(class_names):
        cd = [d for d in dets if d.class_id == k]
        cg = [g for g in gts if g.class_id == k]
        counts[name] = {"detections": len(cd), "ground_truth": len(cg), "tp": 0}
        if not cd and not cg:
            continue
        res = match_detections(cd, cg, iou_fn, thresholds[name])
        counts[name]["tp"] = int(res.tp.sum())
        per_class[name] = average_precision(res.tp, len(cg), num_points)
    m = float(np.mean(list(per_class.values()))) if per_class else 0.0
    return APResult(per_class, m, {c: thresholds[c] for c in class_names}, counts, metric)
