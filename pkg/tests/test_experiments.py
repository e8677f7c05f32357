import copy

import numpy as np

from conftest import tiny_net
from frustum3d.config import RunConfig
from frustum3d.experiments import AblationConfig, angle_ablation, desk_experiment, sparse_trend


def tiny_run() -> RunConfig:
    cfg = RunConfig()
    cfg.net = tiny_net()
    cfg.data.train_count, cfg.data.eval_count = 6, 4
    cfg.data.synthetic.num_points = 48
    cfg.train.steps, cfg.train.batch_size = 3, 2
    return cfg


def test_desk_experiment_reports_metrics():
    model = desk_experiment(tiny_run())
    m = model.metrics
    assert m["steps"] == 3
    assert 0.0 <= m["map_3d"] <= 1.0 and 0.0 <= m["map_bev"] <= 1.0
    assert 0.0 <= m["segmentation_accuracy"] <= 1.0
    assert 0.0 <= m["heading_error"] <= np.pi
    assert len(model.eval_samples) == 4
    assert m["seconds"]["total"] >= m["seconds"]["train"]


def test_desk_experiment_is_deterministic():
    a = desk_experiment(tiny_run()).metrics
    b = desk_experiment(tiny_run()).metrics
    assert a["map_3d"] == b["map_3d"] and a["final_total"] == b["final_total"]


def test_sparse_trend_survives_tiny_inputs():
    cfg = tiny_run()
    model = desk_experiment(cfg)
    rows = sparse_trend(cfg, model, (1, 8, 48))
    assert [r["num_points"] for r in rows] == [1, 8, 48]
    assert all(0.0 <= r["map_3d"] <= 1.0 for r in rows)


def test_angle_ablation_arms_share_start_and_differ_in_loss():
    cfg = tiny_run()
    before = copy.deepcopy(cfg)
    ab = AblationConfig(num_points=32, pretrain_count=4, pretrain_steps=2, finetune_count=4,
                        eval_count=3, finetune_steps=2, repetitions=2)
    out = angle_ablation(cfg, ab)
    assert [r["seed"] for r in out["repetitions"]] == [1, 2]
    for r in out["repetitions"]:
        assert 0.0 <= r["naive"] <= np.pi and 0.0 <= r["cosine"] <= np.pi
    assert 0.0 <= out["pretrained_error"] <= np.pi
    # the caller's config is left alone
    assert cfg == before
