"""``frustum3d`` command line: gen, train, eval, gradcheck, bench.

Exit codes: 0 success, 1 usage or configuration error, 2 data or format
error, 3 numeric failure.  Every command first prints one JSON line with
the resolved configuration and seed.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from . import checkpoint
from . import tensor as T
from .config import RunConfig, dumps, flatten, load_config
from .data import generate_sample, load_split, read_manifest, write_dataset
from .errors import ClassError, ConfigError, DimensionError, FormatError, NumericError
from .evaluation import threshold_profile
from .gradcheck import timed_gradcheck
from .networks import ClassTemplates, build_params, heading_bin_centers
from .pipeline import detect, sample_loss, templates_from_samples
from .training import evaluate_samples, segmentation_accuracy, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file")
    common.add_argument("--seed", type=int, help="unsigned 64-bit seed (overrides the config)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key; repeatable")
    common.add_argument("--out", help="output directory")
    common.add_argument("--dump-defaults", action="store_true",
                        help="print the default config and exit")
    parser = _Parser(prog="frustum3d", description=__doc__.splitlines()[0])
    parser.add_argument("--dump-defaults", dest="dump_top", action="store_true",
                        help="print the default config and exit")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    gen = sub.add_parser("gen", parents=[common], help="write a synthetic dataset")
    gen.add_argument("--count", type=int, help="number of samples (default: split size from config)")
    gen.add_argument("--split", help="split tag (default: data.train_split)")
    tr = sub.add_parser("train", parents=[common], help="train and write a checkpoint")
    tr.add_argument("--checkpoint", help="checkpoint path (default: OUT/model.sifr)")
    ev = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on a split")
    ev.add_argument("--checkpoint", required=False, help="checkpoint path")
    ev.add_argument("--split", help="split tag (default: data.eval_split)")
    ev.add_argument("--metric", choices=["3d", "bev"], help="headline metric")
    gc = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient suite")
    gc.add_argument("--inject-fault", metavar="OP", help=argparse.SUPPRESS)
    sub.add_parser("bench", parents=[common], help="forward / backward throughput")
    return parser


def resolve_config(args) -> RunConfig:
    overrides = list(args.set)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    return load_config(args.config, overrides)


def echo(command: str, cfg: RunConfig) -> None:
    print(json.dumps({"command": command, "seed": cfg.seed, "config": flatten(cfg)},
                     default=list, sort_keys=True), flush=True)


def _split_seed(cfg: RunConfig, split: str) -> int:
    return cfg.seed + (cfg.data.eval_seed_offset if split == cfg.data.eval_split else 0)


def cmd_gen(cfg: RunConfig, count: int | None, out_dir: str | None, split: str | None) -> dict:
    split = split or cfg.data.train_split
    if count is None:
        count = cfg.data.eval_count if split == cfg.data.eval_split else cfg.data.train_count
    if count < 0:
        raise ConfigError("count must be non-negative")
    root = Path(out_dir or cfg.data.root)
    entries = write_dataset(cfg.data.synthetic, count, root, split, _split_seed(cfg, split))
    return {"written": len(entries), "split": split, "root": str(root),
            "manifest_size": len(read_manifest(root)["samples"])}


def _templates_extra(templates: ClassTemplates) -> dict[str, np.ndarray]:
    return {"templates": templates.sizes}


def _templates_from_extra(cfg: RunConfig, extra: dict) -> ClassTemplates:
    if "templates" not in extra:
        raise FormatError("checkpoint carries no size templates", 0)
    sizes = extra["templates"]
    expect = (cfg.net.num_classes, cfg.net.num_size, 3)
    if sizes.shape != expect:
        raise DimensionError(f"size templates {sizes.shape}, config expects {expect}")
    return ClassTemplates(sizes, heading_bin_centers(cfg.net.num_heading))


def _samples(cfg: RunConfig, split: str):
    pairs = load_split(cfg.data.root, split)
    if not pairs:
        raise FormatError(f"split {split!r} under {cfg.data.root} is empty", 0)
    return [s for _, s in pairs]


def cmd_train(cfg: RunConfig, out_dir: str | None, ckpt_path: str | None) -> dict:
    samples = _samples(cfg, cfg.data.train_split)
    out = Path(out_dir or ".")
    out.mkdir(parents=True, exist_ok=True)
    ckpt = Path(ckpt_path) if ckpt_path else out / "model.sifr"
    log_path = out / "train_log.jsonl"
    templates = templates_from_samples(samples, cfg.net)
    params = build_params(cfg.net, cfg.seed)
    t0 = time.perf_counter()
    with log_path.open("w") as log:
        def on_step(entry):
            log.write(json.dumps(entry, sort_keys=True) + "\n")

        history = train(params, cfg.net, templates, samples, cfg.train, cfg.loss, cfg.seed, on_step)
    checkpoint.save(ckpt, params, _templates_extra(templates))
    last = history[-1] if history else {}
    return {"checkpoint": str(ckpt), "log": str(log_path), "steps": len(history),
            "final_total": last.get("total"), "seconds": round(time.perf_counter() - t0, 3)}


def cmd_eval(cfg: RunConfig, ckpt_path: str | None, split: str | None, metric: str | None) -> dict:
    if not ckpt_path:
        raise UsageError("eval needs --checkpoint")
    split = split or cfg.data.eval_split
    params = build_params(cfg.net, cfg.seed)
    extra = checkpoint.load_into(params, checkpoint.load(ckpt_path))
    templates = _templates_from_extra(cfg, extra)
    samples = _samples(cfg, split)
    names = cfg.class_names
    thresholds = threshold_profile(cfg.eval.profile, names)
    dets = [detect(params, cfg.net, templates, s, i) for i, s in enumerate(samples)]
    reports = {}
    for m in ("3d", "bev"):
        r = evaluate_samples(params, cfg.net, templates, samples, names, thresholds, m,
                             cfg.eval.num_points, dets=dets)
        reports[m] = json.loads(r.to_json())
    headline = metric or cfg.eval.metric
    return {"split": split, "samples": len(samples), "metric": headline,
            "mAP": reports[headline]["mAP"], "profile": cfg.eval.profile,
            "segmentation_accuracy": segmentation_accuracy(params, cfg.net, templates, samples),
            "reports": reports}


def cmd_gradcheck(cfg: RunConfig, fault: str | None = None) -> dict:
    g = cfg.gradcheck
    ctx = T.inject_fault(fault) if fault else nullcontext()
    with ctx:
        rep = timed_gradcheck(cfg.net, cfg.data.synthetic, cfg.seed, g.eps, g.tol, g.num_points,
                              g.coords_per_tensor)
    rep["tol"] = g.tol
    rep["eps"] = g.eps
    return rep


def cmd_bench(cfg: RunConfig) -> dict:
    from dataclasses import replace
    params = build_params(cfg.net, cfg.seed)
    rows = []
    for n in cfg.bench.sizes:
        syn = replace(cfg.data.synthetic, num_points=n)
        per_class = [generate_sample(syn, k, np.random.default_rng(cfg.seed + k))
                     for k in range(len(syn.classes))]
        sample = per_class[0]
        templates = templates_from_samples(per_class, cfg.net)
        reps = cfg.bench.repeats
        t0 = time.perf_counter()
        for _ in range(reps):
            detect(params, cfg.net, templates, sample)
        t_fwd = time.perf_counter() - t0
        tensors = params.tensors()
        t0 = time.perf_counter()
        for _ in range(reps):
            with T.Tape() as tape:
                total, _, _ = sample_loss(params, cfg.net, templates, sample, cfg.loss,
                                          cfg.train.angle_loss, cfg.train.mask_from_labels)
            tape.gradient(total, tensors)
        t_bwd = time.perf_counter() - t0
        rows.append({"num_points": n, "repeats": reps,
                     "forward_per_sec": reps / t_fwd, "forward_backward_per_sec": reps / t_bwd})
    return {"schema": "bench/1", "results": rows}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"frustum3d: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        if args.dump_top or getattr(args, "dump_defaults", False):
            sys.stdout.write(dumps(RunConfig()))
            return EXIT_OK
        if args.command is None:
            raise UsageError("a subcommand is required: gen, train, eval, gradcheck, bench")
        cfg = resolve_config(args)
        echo(args.command, cfg)
        if args.command == "gen":
            result = cmd_gen(cfg, args.count, args.out, args.split)
        elif args.command == "train":
            result = cmd_train(cfg, args.out, args.checkpoint)
        elif args.command == "eval":
            result = cmd_eval(cfg, args.checkpoint, args.split, args.metric)
        elif args.command == "gradcheck":
            result = cmd_gradcheck(cfg, args.inject_fault)
        else:
            result = cmd_bench(cfg)
        if args.out and args.command in ("eval", "gradcheck", "bench"):
            Path(args.out).mkdir(parents=True, exist_ok=True)
            (Path(args.out) / f"{args.command}_report.json").write_text(
                json.dumps(result, sort_keys=True, indent=1))
        print(json.dumps(result, sort_keys=True), flush=True)
        if args.command == "gradcheck" and not result["passed"]:
            return EXIT_NUMERIC
        return EXIT_OK
    except (UsageError, ConfigError) as exc:
        print(f"frustum3d: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"frustum3d: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FormatError, DimensionError, ClassError, FileNotFoundError, OSError) as exc:
        print(f"frustum3d: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
