"""Synthetic frustum samples, augmentation and the ``FRUS`` sample file.

Samples are stored in the sensor frame.  The frustum frame is obtained by
rotating by ``-frustum_angle`` about z, after which the frustum axis is +x
(depth) and y is the lateral coordinate.

``FRUS`` layout (little-endian)::

    b"FRUS"  u16 version=1  u32 N  u16 K
    f32[N*7] points   f32[K] one_hot   f32[64] image_feature   f32[N] seg_labels
    f64[7] box (cx cy cz h w l theta)   f64 frustum_angle
"""

from __future__ import annotations

import json
import os
import shutil
import struct
import tempfile
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import FormatError
from .geometry import (Box3D, FrustumFrame, box_from_frustum_frame, box_to_frustum_frame,
                       from_frustum_frame, points_in_box, rotation_z, to_frustum_frame, wrap_angle)

MAGIC = b"FRUS"
VERSION = 1
IMAGE_DIM = 64
_HEADER = struct.Struct("<4sHIH")
MANIFEST = "manifest.json"


@dataclass
class FrustumSample:
    points: np.ndarray  # N x 7: xyz, rgb, intensity
    one_hot: np.ndarray
    image_feature: np.ndarray
    seg_labels: np.ndarray
    gt_box: Box3D
    frustum_angle: float

    @property
    def class_id(self) -> int:
        return int(np.argmax(self.one_hot))

    @property
    def frame(self) -> FrustumFrame:
        return FrustumFrame(self.frustum_angle)

    def canonical_points(self) -> np.ndarray:
        return to_frustum_frame(self.points, self.frame)

    def canonical_box(self) -> Box3D:
        return box_to_frustum_frame(self.gt_box, self.frame)

    def __len__(self) -> int:
        return len(self.points)


@dataclass
class ClassSpec:
    name: str
    size_mean: tuple[float, float, float]  # h, w, l
    size_std: float
    color: tuple[float, float, float]
    intensity: float


def _default_classes() -> list[ClassSpec]:
    return [
        ClassSpec("car", (1.52, 1.62, 3.88), 0.06, (0.80, 0.15, 0.15), 0.70),
        ClassSpec("pedestrian", (1.76, 0.64, 0.82), 0.04, (0.15, 0.70, 0.25), 0.50),
        ClassSpec("cyclist", (1.72, 0.60, 1.76), 0.04, (0.20, 0.30, 0.85), 0.60),
    ]


@dataclass
class SyntheticConfig:
    classes: list[ClassSpec] = field(default_factory=_default_classes)
    num_points: int = 512
    clutter_fraction: float = 0.4
    depth_range: tuple[float, float] = (5.0, 15.0)
    lateral_range: float = 0.3
    azimuth_range: float = 0.6
    ground_z: float = -1.6
    color_noise: float = 0.08
    intensity_noise: float = 0.08
    front_boost: float = 0.25
    image_noise: float = 0.1
    heading_mode: str = "uniform"  # or "near_pi"
    heading_spread: float = 0.35
    clutter_margin: float = 0.1
    surface_inset: float = 0.002
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.clutter_fraction < 1.0:
            raise ValueError("clutter fraction must lie in [0, 1)")
        if self.num_points < 8:
            raise ValueError("at least 8 points per sample")
        if self.heading_mode not in ("uniform", "near_pi"):
            raise ValueError(f"unknown heading mode {self.heading_mode!r}")

    @property
    def class_names(self) -> list[str]:
        return [c.name for c in self.classes]


def class_embeddings(num_classes: int, dim: int = IMAGE_DIM) -> np.ndarray:
    """Fixed per-class stand-ins for the image appearance vector."""
    return np.random.default_rng(20190101).normal(0.0, 1.0, (num_classes, dim))


def _f32(a: np.ndarray) -> np.ndarray:
    return np.asarray(a, dtype=np.float32).astype(np.float64)


def _surface_points(rng, n: int, h: float, w: float, l: float, inset: float):
    """Points on the front (+x), side, and top faces, just inside the box.

    Returns local coordinates and a front-face flag.
    """
    hx, hy, hz = l / 2 - inset, w / 2 - inset, h / 2 - inset
    areas = np.array([w * h, l * h, l * h, l * w])
    face = rng.choice(4, size=n, p=areas / areas.sum())
    u = rng.uniform(-1.0, 1.0, size=(n, 3)) * np.array([hx, hy, hz])
    u[face == 0, 0] = hx
    u[face == 1, 1] = hy
    u[face == 2, 1] = -hy
    u[face == 3, 2] = hz
    return u, face == 0


def _clutter(rng, cfg: SyntheticConfig, n: int, depth: float, half_angle: float, box_c: Box3D):
    out = np.empty((0, 7))
    margin_box = box_c.replace(h=box_c.h + 2 * cfg.clutter_margin, w=box_c.w + 2 * cfg.clutter_margin,
                               l=box_c.l + 2 * cfg.clutter_margin)
    while len(out) < n:
        m = 2 * n + 16
        x = rng.uniform(max(1.0, depth - 4.0), depth + 8.0, m)
        y = rng.uniform(-1.0, 1.0, m) * x * np.tan(half_angle)
        ground = rng.uniform(size=m) < 0.5
        z = np.where(ground, cfg.ground_z + rng.normal(0.0, 0.02, m),
                     rng.uniform(cfg.ground_z, cfg.ground_z + 2.5, m))
        rgb_ground = np.clip(np.array([0.45, 0.42, 0.38]) + rng.normal(0, 0.05, (m, 3)), 0, 1)
        rgb_bg = rng.uniform(0.0, 1.0, (m, 3))
        rgb = np.where(ground[:, None], rgb_ground, rgb_bg)
        inten = np.clip(rng.uniform(0.0, 0.45, m), 0.0, 1.0)
        pts = np.column_stack([x, y, z, rgb, inten])
        keep = ~points_in_box(pts, margin_box)
        out = np.vstack([out, pts[keep]])
    return out[:n]


def _heading(rng, cfg: SyntheticConfig) -> float:
    if cfg.heading_mode == "uniform":
        return float(rng.uniform(-np.pi, np.pi))
    return wrap_angle(np.pi + rng.normal(0.0, cfg.heading_spread))


def generate_sample(cfg: SyntheticConfig, class_id: int, rng: np.random.Generator) -> FrustumSample:
    """Draw one object frustum: box-surface points plus frustum clutter."""
    spec = cfg.classes[class_id]
    h, w, l = (np.asarray(spec.size_mean) * np.exp(rng.normal(0.0, spec.size_std, 3))).tolist()
    depth = float(rng.uniform(*cfg.depth_range))
    lateral = float(rng.uniform(-cfg.lateral_range, cfg.lateral_range))
    theta = _heading(rng, cfg)
    box_c = Box3D(depth, lateral, cfg.ground_z + h / 2, h, w, l, theta)
    n = cfg.num_points
    n_obj = int(np.ceil((1.0 - cfg.clutter_fraction) * n))
    local, front = _surface_points(rng, n_obj, h, w, l, cfg.surface_inset)
    xyz = local @ rotation_z(theta).T + box_c.center
    rgb = np.clip(np.asarray(spec.color) + rng.normal(0.0, cfg.color_noise, (n_obj, 3)), 0, 1)
    inten = spec.intensity + rng.normal(0.0, cfg.intensity_noise, n_obj) + cfg.front_boost * front
    obj = np.column_stack([xyz, rgb, np.clip(inten, 0.0, 1.0)])
    radius = 0.5 * np.hypot(l, w)
    half_angle = np.arctan((radius + 0.5) / depth)
    pts_c = np.vstack([obj, _clutter(rng, cfg, n - n_obj, depth, half_angle, box_c)])
    pts_c = pts_c[rng.permutation(n)]
    angle = float(rng.uniform(-cfg.azimuth_range, cfg.azimuth_range))
    frame = FrustumFrame(angle)
    points = _f32(from_frustum_frame(pts_c, frame))
    box = box_from_frustum_frame(box_c, frame)
    one_hot = np.zeros(len(cfg.classes))
    one_hot[class_id] = 1.0
    emb = class_embeddings(len(cfg.classes))[class_id]
    image = _f32(emb + rng.normal(0.0, cfg.image_noise, IMAGE_DIM))
    labels = points_in_box(points, box).astype(np.int64)
    return FrustumSample(points, one_hot, image, labels, box, angle)


def sample_seed(base_seed: int, index: int) -> int:
    return base_seed + index


def generate_dataset(cfg: SyntheticConfig, count: int, base_seed: int | None = None):
    """``count`` samples with classes cycling over ``cfg.classes``."""
    base = cfg.seed if base_seed is None else base_seed
    k = len(cfg.classes)
    return [generate_sample(cfg, i % k, np.random.default_rng(sample_seed(base, i)))
            for i in range(count)]


def validate_sample(s: FrustumSample, tol: float = 1e-9) -> None:
    """Raise ``ValueError`` unless ``s`` satisfies the sample invariants."""
    n = len(s.points)
    if s.points.ndim != 2 or s.points.shape[1] != 7:
        raise ValueError(f"points must be N x 7, got {s.points.shape}")
    if s.seg_labels.shape != (n,):
        raise ValueError("one label per point required")
    if s.image_feature.shape != (IMAGE_DIM,):
        raise ValueError(f"image feature must have {IMAGE_DIM} values")
    if np.count_nonzero(s.one_hot) != 1 or s.one_hot.max() != 1.0:
        raise ValueError("class vector must be one-hot")
    if not np.all(np.isfinite(s.points)):
        raise ValueError("non-finite point values")
    attrs = s.points[:, 3:7]
    if attrs.min() < 0.0 or attrs.max() > 1.0:
        raise ValueError("rgb and intensity must lie in [0, 1]")
    inside = points_in_box(s.points, s.gt_box, tol)
    if not np.array_equal(inside, s.seg_labels.astype(bool)):
        raise ValueError(f"{int(np.sum(inside != s.seg_labels.astype(bool)))} labels disagree "
                         "with box containment")


# --------------------------------------------------------------- augmentation

def _recanonicalize(s: FrustumSample, pts_c: np.ndarray, box_c: Box3D) -> FrustumSample:
    points = _f32(from_frustum_frame(pts_c, s.frame))
    return replace(s, points=points, gt_box=box_from_frustum_frame(box_c, s.frame))


def augment_flip(s: FrustumSample) -> FrustumSample:
    """Mirror across the frustum's vertical centre plane (lateral y -> -y)."""
    pts = s.canonical_points()
    pts[:, 1] = -pts[:, 1]
    b = s.canonical_box()
    return _recanonicalize(s, pts, b.replace(cy=-b.cy, theta=-b.theta))


def shift_depth(s: FrustumSample, shift: float) -> FrustumSample:
    """Move points and box together by ``shift`` along the frustum axis."""
    pts = s.canonical_points()
    pts[:, 0] += shift
    b = s.canonical_box()
    return _recanonicalize(s, pts, b.replace(cx=b.cx + shift))


def augment_zshift(s: FrustumSample, max_shift: float, rng: np.random.Generator) -> FrustumSample:
    if max_shift < 0:
        raise ValueError("max_shift must be non-negative")
    if max_shift == 0:
        return s
    return shift_depth(s, float(rng.uniform(-max_shift, max_shift)))


def augment(s: FrustumSample, rng: np.random.Generator, flip: bool = True,
            max_shift: float = 0.0) -> FrustumSample:
    if flip and rng.uniform() < 0.5:
        s = augment_flip(s)
    return augment_zshift(s, max_shift, rng)


def resample_points(s: FrustumSample, n: int, rng: np.random.Generator) -> FrustumSample:
    """Random subset of ``n`` points (with replacement only if ``n`` exceeds N)."""
    idx = rng.choice(len(s.points), size=n, replace=n > len(s.points))
    return replace(s, points=s.points[idx], seg_labels=s.seg_labels[idx])


# ------------------------------------------------------------------ file I/O

def encode_sample(s: FrustumSample) -> bytes:
    n, k = len(s.points), len(s.one_hot)
    parts = [
        _HEADER.pack(MAGIC, VERSION, n, k),
        np.asarray(s.points, dtype="<f4").tobytes(),
        np.asarray(s.one_hot, dtype="<f4").tobytes(),
        np.asarray(s.image_feature, dtype="<f4").tobytes(),
        np.asarray(s.seg_labels, dtype="<f4").tobytes(),
        np.asarray(list(s.gt_box.as_array()) + [s.frustum_angle], dtype="<f8").tobytes(),
    ]
    return b"".join(parts)


def decode_sample(buf: bytes) -> FrustumSample:
    if len(buf) < _HEADER.size:
        raise FormatError("truncated header", len(buf))
    magic, version, n, k = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}", 0)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    off = _HEADER.size

    def take(count: int, dtype: str, what: str) -> np.ndarray:
        nonlocal off
        nbytes = count * np.dtype(dtype).itemsize
        if off + nbytes > len(buf):
            raise FormatError(f"truncated {what}", len(buf))
        arr = np.frombuffer(buf, dtype=dtype, count=count, offset=off).astype(np.float64)
        off += nbytes
        return arr

    points = take(7 * n, "<f4", "points").reshape(n, 7)
    one_hot = take(k, "<f4", "class vector")
    image = take(IMAGE_DIM, "<f4", "image feature")
    label_off = off
    labels = take(n, "<f4", "labels")
    tail = take(8, "<f8", "box")
    if off != len(buf):
        raise FormatError(f"{len(buf) - off} trailing bytes", off)
    if not np.all((labels == 0) | (labels == 1)):
        raise FormatError("labels must be 0 or 1", label_off)
    try:
        box = Box3D.from_array(tail[:7])
    except ValueError as exc:
        raise FormatError(f"invalid box: {exc}", off - 64) from exc
    return FrustumSample(points, one_hot, image, labels.astype(np.int64), box, float(tail[7]))


def write_sample(path, s: FrustumSample) -> None:
    Path(path).write_bytes(encode_sample(s))


def read_sample(path) -> FrustumSample:
    return decode_sample(Path(path).read_bytes())


def read_manifest(root) -> dict:
    p = Path(root) / MANIFEST
    if not p.exists():
        return {"format": "FRUS", "version": VERSION, "samples": []}
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"manifest is not valid JSON: {exc.msg}", exc.pos) from exc


def write_dataset(cfg: SyntheticConfig, count: int, out_dir, split: str = "train",
                  base_seed: int | None = None) -> list[dict]:
    """Generate ``count`` samples into ``out_dir`` and merge them into its manifest.

    Files are written to a staging directory first; nothing under
    ``out_dir`` changes unless every sample was written.
    """
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    manifest = read_manifest(root)
    base = cfg.seed if base_seed is None else base_seed
    k = len(cfg.classes)
    entries = []
    staging = Path(tempfile.mkdtemp(prefix=".staging-", dir=root))
    try:
        for i in range(count):
            cls = i % k
            s = generate_sample(cfg, cls, np.random.default_rng(sample_seed(base, i)))
            name = f"{split}_{i:06d}.frus"
            write_sample(staging / name, s)
            entries.append({"path": name, "class": cfg.classes[cls].name, "split": split,
                            "seed": sample_seed(base, i)})
        new_names = {e["path"] for e in entries}
        kept = [e for e in manifest["samples"] if e["path"] not in new_names]
        manifest["samples"] = kept + entries
        manifest["classes"] = cfg.class_names
        tmp_manifest = staging / MANIFEST
        tmp_manifest.write_text(json.dumps(manifest, indent=1, sort_keys=True))
        for e in entries:
            os.replace(staging / e["path"], root / e["path"])
        os.replace(tmp_manifest, root / MANIFEST)
    finally:
        shutil.rmtree(staging, ignore_errors=True)
    return entries


def load_split(root, split: str) -> list[tuple[str, FrustumSample]]:
    """``(path, sample)`` pairs of one split, sorted by path."""
    manifest = read_manifest(root)
    names = sorted(e["path"] for e in manifest["samples"] if e["split"] == split)
    return [(n, read_sample(Path(root) / n)) for n in names]
