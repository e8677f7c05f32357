"""Run configuration: nested dataclasses read from ``key = value`` text.

Keys are dotted paths into :class:`RunConfig`, for example::

    seed = 7
    train.steps = 2000
    net.sa1.radius = 0.3
    data.synthetic.classes = ["car", "pedestrian"]

Values are Python literals (``ast.literal_eval``); anything that does not
parse as a literal is taken as a bare string.  ``#`` starts a comment.
"""

from __future__ import annotations

import ast
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

from .data import ClassSpec, SyntheticConfig, _default_classes
from .errors import ConfigError
from .losses import LossWeights
from .networks import NetConfig
from .training import TrainConfig


@dataclass
class DataConfig:
    root: str = "data"
    train_split: str = "train"
    eval_split: str = "eval"
    train_count: int = 500
    eval_count: int = 100
    eval_seed_offset: int = 100000
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)


@dataclass
class EvalConfig:
    profile: str = "uniform:0.5"
    num_points: int = 11
    metric: str = "3d"


@dataclass
class GradcheckConfig:
    eps: float = 1e-6
    tol: float = 1e-4
    num_points: int = 32
    coords_per_tensor: int = 3


@dataclass
class BenchConfig:
    sizes: list[int] = field(default_factory=lambda: [32, 512, 2048])
    repeats: int = 3


@dataclass
class RunConfig:
    seed: int = 0
    net: NetConfig = field(default_factory=NetConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    gradcheck: GradcheckConfig = field(default_factory=GradcheckConfig)
    bench: BenchConfig = field(default_factory=BenchConfig)

    @property
    def class_names(self) -> list[str]:
        return self.data.synthetic.class_names

    def validate(self) -> None:
        if self.net.num_classes != len(self.data.synthetic.classes):
            raise ConfigError(f"net.num_classes = {self.net.num_classes} but "
                              f"{len(self.data.synthetic.classes)} synthetic classes are configured")
        if self.seed < 0 or self.seed >= 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if self.train.batch_size < 1:
            raise ConfigError("train.batch_size must be positive")
        if self.train.decay_steps < 1 or self.train.lr_decay <= 0:
            raise ConfigError("train.decay_steps must be >= 1 and train.lr_decay > 0")
        for mode in (self.train.angle_loss, self.train.finetune_angle_loss):
            if mode not in ("naive", "cosine"):
                raise ConfigError(f"unknown angle loss {mode!r}")
        if self.eval.metric not in ("3d", "bev"):
            raise ConfigError("eval.metric must be 3d or bev")
        if self.eval.num_points not in (11, 40):
            raise ConfigError("eval.num_points must be 11 or 40")
        try:
            self.net.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc


CLASS_CATALOGUE = {c.name: c for c in _default_classes()}


def _leaf_repr(value: Any) -> Any:
    if isinstance(value, list) and value and isinstance(value[0], ClassSpec):
        return [c.name for c in value]
    return value


def flatten(obj, prefix: str = "") -> dict[str, Any]:
    """Dotted-key view of every leaf field."""
    out = {}
    for f in dataclasses.fields(obj):
        value = getattr(obj, f.name)
        key = f"{prefix}{f.name}"
        if dataclasses.is_dataclass(value):
            out.update(flatten(value, key + "."))
        else:
            out[key] = _leaf_repr(value)
    return out


def dumps(cfg: RunConfig) -> str:
    return "".join(f"{k} = {v!r}\n" for k, v in flatten(cfg).items())


def parse_value(text: str) -> Any:
    text = text.strip()
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text


def _coerce(key: str, old: Any, new: Any) -> Any:
    if isinstance(old, list) and old and isinstance(old[0], ClassSpec):
        if not isinstance(new, (list, tuple)) or not all(isinstance(n, str) for n in new):
            raise ConfigError(f"{key} takes a list of class names")
        unknown = [n for n in new if n not in CLASS_CATALOGUE]
        if unknown:
            raise ConfigError(f"{key}: unknown classes {unknown}; known: {sorted(CLASS_CATALOGUE)}")
        return [dataclasses.replace(CLASS_CATALOGUE[n]) for n in new]
    if isinstance(old, bool):
        if not isinstance(new, bool):
            raise ConfigError(f"{key} takes True or False, got {new!r}")
        return new
    if isinstance(old, float) and isinstance(new, int) and not isinstance(new, bool):
        return float(new)
    if isinstance(old, tuple) and isinstance(new, list):
        new = tuple(new)
    if isinstance(old, list) and isinstance(new, tuple):
        new = list(new)
    if type(old) is not type(new) and not (isinstance(old, float) and isinstance(new, float)):
        raise ConfigError(f"{key} expects {type(old).__name__}, got {new!r}")
    return new


def set_value(cfg: RunConfig, key: str, value: Any) -> None:
    """Assign one dotted key in place, with type checking against the default."""
    parts = key.split(".")
    obj = cfg
    for p in parts[:-1]:
        if not dataclasses.is_dataclass(obj) or not hasattr(obj, p):
            raise ConfigError(f"unknown config key {key!r}")
        obj = getattr(obj, p)
    leaf = parts[-1]
    names = {f.name for f in dataclasses.fields(obj)} if dataclasses.is_dataclass(obj) else set()
    if leaf not in names:
        raise ConfigError(f"unknown config key {key!r}")
    old = getattr(obj, leaf)
    if dataclasses.is_dataclass(old):
        raise ConfigError(f"{key!r} is a section, set its fields instead")
    object.__setattr__(obj, leaf, _coerce(key, old, value))


def parse_lines(lines: Iterable[str]) -> list[tuple[str, Any]]:
    pairs = []
    for n, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip() if not _in_string_comment(raw) else raw.strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected 'key = value', got {raw.strip()!r}")
        key, value = line.split("=", 1)
        pairs.append((key.strip(), parse_value(value)))
    return pairs


def _in_string_comment(raw: str) -> bool:
    # a '#' inside a quoted value is kept
    hash_at = raw.find("#")
    return hash_at >= 0 and (raw[:hash_at].count('"') % 2 == 1 or raw[:hash_at].count("'") % 2 == 1)


def load_config(path: str | Path | None = None, overrides: Iterable[str] = ()) -> RunConfig:
    """Defaults, then the file at ``path``, then ``key=value`` overrides."""
    cfg = RunConfig()
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file {p} does not exist")
        for key, value in parse_lines(p.read_text().splitlines()):
            set_value(cfg, key, value)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, value = item.split("=", 1)
        set_value(cfg, key.strip(), parse_value(value))
    cfg.validate()
    return cfg
