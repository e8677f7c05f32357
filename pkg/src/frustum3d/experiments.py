"""End-to-end desk experiments: train-and-evaluate, sparse inputs, angle-loss ablation.

Each function builds its data from seeds, so results are reproducible from the
run configuration alone.  They return plain dictionaries that serialize to
JSON.
"""

from __future__ import annotations

import copy
import time
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import checkpoint
from .config import RunConfig, set_value
from .data import FrustumSample, generate_dataset, resample_points
from .evaluation import threshold_profile
from .networks import ClassTemplates, build_params
from .pipeline import templates_from_samples
from .tensor import ParameterSet
from .training import detect_all, evaluate_samples, mean_heading_error, segmentation_accuracy, train


@dataclass
class TrainedModel:
    params: ParameterSet
    templates: ClassTemplates
    eval_samples: list[FrustumSample]
    metrics: dict = field(default_factory=dict)


def desk_experiment(cfg: RunConfig, profile: str = "uniform:0.5") -> TrainedModel:
    """Generate the train/eval splits, train, and evaluate in one process.

    ``metrics`` holds 3D and BEV mAP, segmentation accuracy, mean heading
    error, and wall-clock seconds for each stage.
    """
    syn, d = cfg.data.synthetic, cfg.data
    t0 = time.perf_counter()
    train_set = generate_dataset(syn, d.train_count, cfg.seed)
    eval_set = generate_dataset(syn, d.eval_count, cfg.seed + d.eval_seed_offset)
    t_gen = time.perf_counter() - t0
    templates = templates_from_samples(train_set, cfg.net)
    params = build_params(cfg.net, cfg.seed)
    t0 = time.perf_counter()
    history = train(params, cfg.net, templates, train_set, cfg.train, cfg.loss, cfg.seed)
    t_train = time.perf_counter() - t0
    t0 = time.perf_counter()
    names = cfg.class_names
    thresholds = threshold_profile(profile, names)
    dets = detect_all(params, cfg.net, templates, eval_set)
    r3d = evaluate_samples(params, cfg.net, templates, eval_set, names, thresholds, "3d",
                           cfg.eval.num_points, dets=dets)
    rbev = evaluate_samples(params, cfg.net, templates, eval_set, names, thresholds, "bev",
                            cfg.eval.num_points, dets=dets)
    seg_acc = segmentation_accuracy(params, cfg.net, templates, eval_set)
    t_eval = time.perf_counter() - t0
    metrics = {"map_3d": r3d.mAP, "map_bev": rbev.mAP, "per_class_3d": r3d.per_class,
               "segmentation_accuracy": seg_acc, "heading_error": mean_heading_error(dets, eval_set),
               "steps": len(history), "final_total": history[-1]["total"] if history else None,
               "seconds": {"generate": t_gen, "train": t_train, "evaluate": t_eval,
                           "total": t_gen + t_train + t_eval}}
    return TrainedModel(params, templates, eval_set, metrics)


def sparse_trend(cfg: RunConfig, model: TrainedModel, sizes: Sequence[int] = (32, 128, 512),
                 profile: str = "uniform:0.5", seed: int = 5) -> list[dict]:
    """mAP of one model on the eval split re-sampled to each point count."""
    names = cfg.class_names
    thresholds = threshold_profile(profile, names)
    rows = []
    for n in sizes:
        rng = np.random.default_rng(seed)
        samples = [resample_points(s, n, rng) for s in model.eval_samples]
        r = evaluate_samples(model.params, cfg.net, model.templates, samples, names, thresholds,
                             "3d", cfg.eval.num_points)
        rows.append({"num_points": int(n), "map_3d": r.mAP, "per_class": r.per_class,
                     "segmentation_accuracy": segmentation_accuracy(model.params, cfg.net,
                                                                    model.templates, samples)})
    return rows


@dataclass
class AblationConfig:
    """Settings for the naive vs cosine heading-loss comparison.

    One heading bin makes the normalised residual target jump from +1 to -1
    across +-pi, which is where the two angle losses differ.  The corner term
    is switched off in both arms: it is minimised over the heading flip, so
    with a large weight it holds a pi-flipped heading in place and masks the
    term under comparison.  Ground-truth masks feed the box branch so that
    segmentation quality does not enter the heading comparison.
    """
    num_heading: int = 1
    num_points: int = 256
    gamma: float = 0.0
    mask_from_labels: bool = True
    pretrain_count: int = 300
    pretrain_steps: int = 600
    finetune_count: int = 300
    eval_count: int = 100
    finetune_steps: int = 150
    finetune_lr: float = 0.001
    repetitions: int = 3
    pretrain_seed: int = 0
    finetune_seed: int = 200000
    eval_seed: int = 300000


def _ablation_config(cfg: RunConfig, ab: AblationConfig) -> RunConfig:
    out = copy.deepcopy(cfg)
    set_value(out, "net.num_heading", ab.num_heading)
    set_value(out, "data.synthetic.num_points", ab.num_points)
    set_value(out, "data.synthetic.heading_mode", "near_pi")
    set_value(out, "loss.gamma", ab.gamma)
    set_value(out, "train.mask_from_labels", ab.mask_from_labels)
    return out


def angle_ablation(cfg: RunConfig, ab: AblationConfig | None = None) -> dict:
    """Pretrain with the naive heading loss on uniform headings, then fine-tune
    copies of that model on headings near +-pi with each angle loss.

    Both arms of a repetition share the data order seed; the result lists the
    mean wrapped heading error on a near-pi eval split for each arm.
    """
    ab = ab or AblationConfig()
    run = _ablation_config(cfg, ab)
    near_pi = run.data.synthetic
    uniform = replace(near_pi, heading_mode="uniform")
    pre_set = generate_dataset(uniform, ab.pretrain_count, ab.pretrain_seed)
    tune_set = generate_dataset(near_pi, ab.finetune_count, ab.finetune_seed)
    eval_set = generate_dataset(near_pi, ab.eval_count, ab.eval_seed)
    templates = templates_from_samples(tune_set, run.net)
    base = build_params(run.net, run.seed)
    train(base, run.net, templates, pre_set,
          replace(run.train, steps=ab.pretrain_steps, decay_steps=ab.pretrain_steps,
                  finetune_steps=0), run.loss, run.seed)
    snapshot = {n: base[n].data.copy() for n in base.names()}
    base_err = mean_heading_error(detect_all(base, run.net, templates, eval_set), eval_set)
    reps = []
    for rep in range(ab.repetitions):
        row = {"seed": rep + 1}
        for mode in ("naive", "cosine"):
            params = build_params(run.net, run.seed)
            checkpoint.load_into(params, snapshot)
            tune = replace(run.train, steps=0, finetune_steps=ab.finetune_steps,
                           finetune_angle_loss=mode, lr=ab.finetune_lr, lr_decay=1.0)
            train(params, run.net, templates, tune_set, tune, run.loss, seed=rep + 1)
            row[mode] = mean_heading_error(detect_all(params, run.net, templates, eval_set),
                                           eval_set)
        reps.append(row)
    return {"pretrained_error": base_err, "repetitions": reps}
