import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from frustum3d.errors import ClassError
from frustum3d.evaluation import (KITTI_THRESHOLDS, Detection, GroundTruth, average_precision,
                                  evaluate, match_detections, threshold_profile)
from frustum3d.geometry import Box3D, iou_3d

NAMES = ["car", "pedestrian", "cyclist"]


def box(x, **kw):
    return Box3D(x, 0.0, 0.0, 1.5, 1.6, 3.9, **kw)


def test_match_identical_all_tp():
    gts = [GroundTruth(box(i * 10.0), 0) for i in range(4)]
    dets = [Detection(g.box, 1.0, 0) for g in gts]
    res = match_detections(dets, gts, iou_3d, 0.7)
    assert res.tp.all() and not res.fp.any()
    assert sorted(res.pairs) == [(i, i) for i in range(4)]


def test_match_no_detections():
    res = match_detections([], [GroundTruth(box(0.0), 0)], iou_3d, 0.5)
    assert res.tp.size == 0 and res.fp.size == 0


def test_two_detections_one_gt():
    g = [GroundTruth(box(0.0), 0)]
    d = [Detection(box(0.1), 0.4, 0), Detection(box(0.05), 0.9, 0)]
    res = match_detections(d, g, iou_3d, 0.5)
    assert list(res.order) == [1, 0]
    assert list(res.tp) == [True, False]
    assert res.pairs == [(1, 0)]


def test_threshold_is_strict():
    a, b = Box3D(0, 0, 0, 1, 1, 1), Box3D(0.5, 0, 0, 1, 1, 1)  # IoU exactly 1/3
    res = match_detections([Detection(b, 1.0, 0)], [GroundTruth(a, 0)], iou_3d, 1 / 3)
    assert not res.tp.any()


def test_frames_do_not_cross_match():
    res = match_detections([Detection(box(0.0), 1.0, 0, frame=1)], [GroundTruth(box(0.0), 0, frame=0)],
                           iou_3d, 0.5)
    assert not res.tp.any()


def test_ap_trivial_cases():
    assert average_precision([True, True], 2) == 1.0
    assert average_precision([False, False, False], 2) == 0.0
    assert average_precision([], 3) == 0.0


def test_ap_hand_enumerated_staircase():
    # TP, FP, TP over 2 gts: precision 1, 1/2, 2/3 at recall 1/2, 1/2, 1.
    # Interpolated precision is 1 for r <= 0.5 (6 levels) and 2/3 above (5 levels).
    assert average_precision([True, False, True], 2) == pytest.approx((6 + 5 * 2 / 3) / 11, abs=1e-15)
    # 40-point variant: levels 1/40..20/40 give 1, 21/40..40/40 give 2/3
    assert average_precision([True, False, True], 2, 40) == pytest.approx((20 + 20 * 2 / 3) / 40, abs=1e-15)


@given(st.lists(st.booleans(), min_size=1, max_size=30), st.integers(1, 30))
def test_ap_bounded(flags, extra):
    n_gt = sum(flags) + extra - 1
    if n_gt == 0:
        return
    v = average_precision(flags, n_gt)
    assert 0.0 <= v <= 1.0


def test_profiles():
    assert threshold_profile("kitti", NAMES) == {"car": 0.7, "pedestrian": 0.5, "cyclist": 0.5}
    assert KITTI_THRESHOLDS == {"car": 0.7, "pedestrian": 0.5, "cyclist": 0.5}
    assert set(threshold_profile("sunrgbd", ["bed", "chair", "x"]).values()) == {0.25}
    assert threshold_profile("uniform:0.4", NAMES)["cyclist"] == 0.4
    with pytest.raises(ClassError):
        threshold_profile("kitti", ["sofa"])
    with pytest.raises(ValueError):
        threshold_profile("coco", NAMES)


def _dataset(rng, n=30):
    gts = []
    for i in range(n):
        c = i % 3
        b = Box3D(*rng.normal(0, 5, 3), *rng.uniform(0.5, 3, 3), rng.uniform(-3, 3))
        gts.append(GroundTruth(b, c, frame=i))
    return gts


def test_perfect_predictor_map_one(rng):
    gts = _dataset(rng)
    dets = [Detection(g.box, float(rng.random()), g.class_id, g.frame) for g in gts]
    for metric in ("3d", "bev"):
        r = evaluate(dets, gts, NAMES, threshold_profile("kitti", NAMES), metric)
        assert r.mAP == 1.0
        assert set(r.per_class) == set(NAMES)


def test_evaluate_order_invariant(rng):
    gts = _dataset(rng)
    dets = [Detection(g.box.replace(cx=g.box.cx + rng.normal(0, 0.3)), float(rng.random()),
                      g.class_id, g.frame) for g in gts]
    th = threshold_profile("uniform:0.5", NAMES)
    r1 = evaluate(dets, gts, NAMES, th)
    perm = rng.permutation(len(dets))
    r2 = evaluate([dets[i] for i in perm], [gts[i] for i in rng.permutation(len(gts))], NAMES, th)
    assert r1.to_json() == r2.to_json()
    payload = json.loads(r1.to_json(split="eval"))
    assert payload["split"] == "eval" and payload["metric"] == "3d"


def test_evaluate_errors():
    g = [GroundTruth(box(0.0), 5)]
    with pytest.raises(ClassError):
        evaluate([], g, NAMES, threshold_profile("kitti", NAMES))
    with pytest.raises(ClassError):
        evaluate([], [], NAMES, {"car": 0.5})
    with pytest.raises(ValueError):
        Detection(box(0.0), float("nan"), 0)
