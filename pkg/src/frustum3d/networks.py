"""Segmentation, centre-translation and box-estimation networks.

Parameters live in one :class:`~frustum3d.tensor.ParameterSet` with names
prefixed ``unet.``, ``tnet.`` and ``senet.``.  Every network is a plain
function of (params, config, inputs) so forwards are deterministic and can
be re-run freely by the gradient checker.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import DimensionError, EmptyInputError
from .geometry import Box3D, wrap_angle
from .pointops import (PointSet, SAConfig, apply_mlp, fp_module, mlp_layers,
                       pointsift_module, sa_module)
from .se_block import init_se_params, se_forward, se_params_from
from .tensor import Tensor


@dataclass
class NetConfig:
    num_classes: int = 3
    image_dim: int = 64
    num_size: int = 8
    num_heading: int = 12
    sa1: SAConfig = field(default_factory=lambda: SAConfig(128, 0.2, 32, [32, 32, 64]))
    sa2: SAConfig = field(default_factory=lambda: SAConfig(32, 0.4, 32, [64, 64, 128]))
    pointsift_widths: list[int] = field(default_factory=lambda: [128, 128])
    global_sa: list[int] = field(default_factory=lambda: [128, 256])
    fp_widths: list[int] = field(default_factory=lambda: [256, 128, 128])
    seg_head: list[int] = field(default_factory=lambda: [128, 2])
    tnet_sa: list[int] = field(default_factory=lambda: [64, 128, 256])
    tnet_fc: list[int] = field(default_factory=lambda: [128, 3])
    senet_convs: list[int] = field(default_factory=lambda: [128, 256, 256])
    senet_lift: int = 512
    senet_fc: list[int] = field(default_factory=lambda: [512, 256])
    se_reduction: int = 4

    @property
    def box_dim(self) -> int:
        return 3 + 4 * self.num_size + 2 * self.num_heading

    def validate(self) -> None:
        if self.seg_head[-1] != 2:
            raise DimensionError("segmentation head must end in 2 logits")
        if self.tnet_fc[-1] != 3:
            raise DimensionError("T-Net head must end in 3 outputs")
        if len(self.senet_convs) != 3 or self.senet_convs[1] != self.senet_convs[2]:
            raise DimensionError("the residual SE sum needs conv2 and conv3 of equal width")
        if self.senet_convs[2] % self.se_reduction:
            raise DimensionError("SE reduction must divide the SE channel count")
        if len(self.fp_widths) != 3:
            raise DimensionError("Point-UNet uses exactly three FP layers")


# ----------------------------------------------------------------- parameters

def _dense(params: T.ParameterSet, prefix: str, fan_in: int, widths, rng, gain_last=1.0):
    for i, width in enumerate(widths):
        last = i == len(widths) - 1
        std = np.sqrt(2.0 / fan_in) * (gain_last if last else 1.0)
        params.new(f"{prefix}.{i}.w", rng.normal(0.0, std, (fan_in, width)))
        params.new(f"{prefix}.{i}.b", np.zeros(width))
        fan_in = width
    return fan_in


def build_params(cfg: NetConfig, seed: int = 0) -> T.ParameterSet:
    """He-initialised weights and zero biases for all three networks."""
    cfg.validate()
    rng = np.random.default_rng(seed)
    p = T.ParameterSet()
    # Point-UNet
    c1 = _dense(p, "unet.sa1", 3 + 4, cfg.sa1.mlp_widths, rng)
    c2 = _dense(p, "unet.sa2", 3 + c1, cfg.sa2.mlp_widths, rng)
    c = c2
    for k, width in enumerate(cfg.pointsift_widths):
        prev = c
        for axis in "xyz":
            _dense(p, f"unet.sift{k}.{axis}", 2 * prev, [width], rng)
            prev = width
        c = width
    cg = _dense(p, "unet.global", 3 + c, cfg.global_sa, rng)
    fused = cg + cfg.num_classes + cfg.image_dim
    f1 = _dense(p, "unet.fp1", fused + c, [cfg.fp_widths[0]], rng)
    f2 = _dense(p, "unet.fp2", f1 + c1, [cfg.fp_widths[1]], rng)
    f3 = _dense(p, "unet.fp3", f2 + 4, [cfg.fp_widths[2]], rng)
    _dense(p, "unet.head", f3, cfg.seg_head, rng, gain_last=0.1)
    # T-Net
    ct = _dense(p, "tnet.sa", 3 + 1, cfg.tnet_sa, rng)
    _dense(p, "tnet.fc", ct, cfg.tnet_fc, rng, gain_last=0.1)
    # Point-SENet
    s1, s2, s3 = cfg.senet_convs
    _dense(p, "senet.conv1", 3, [s1], rng)
    _dense(p, "senet.conv2", s1, [s2], rng)
    _dense(p, "senet.conv3", s2, [s3], rng)
    init_se_params(p, "senet.se", s3, cfg.se_reduction, rng)
    lift = _dense(p, "senet.lift", s3, [cfg.senet_lift], rng)
    _dense(p, "senet.fc", lift, cfg.senet_fc + [cfg.box_dim], rng, gain_last=0.1)
    return p


# ----------------------------------------------------------------- Point-UNet

@dataclass
class SegmentationOutput:
    logits: Tensor
    probabilities: np.ndarray


def point_unet_forward(params: T.ParameterSet, cfg: NetConfig, points: np.ndarray,
                       one_hot: np.ndarray, image_feature: np.ndarray) -> SegmentationOutput:
    """Per-point object/background logits for an ``N x 7`` frustum cloud."""
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 7:
        raise DimensionError(f"Point-UNet expects N x 7 points, got {points.shape}")
    if len(points) == 0:
        raise EmptyInputError("Point-UNet on an empty frustum")
    n_sa1, n_sa2 = len(cfg.sa1.mlp_widths), len(cfg.sa2.mlp_widths)
    l0 = PointSet(points[:, :3], Tensor(points[:, 3:7]))
    l1 = sa_module(l0, cfg.sa1, mlp_layers(params, "unet.sa1", n_sa1))
    l2 = sa_module(l1, cfg.sa2, mlp_layers(params, "unet.sa2", n_sa2))
    sift = l2
    for k in range(len(cfg.pointsift_widths)):
        stages = [(params[f"unet.sift{k}.{a}.0.w"], params[f"unet.sift{k}.{a}.0.b"])
                  for a in "xyz"]
        sift = pointsift_module(sift, stages)
    glob_cfg = SAConfig(1, 1.0, 1, cfg.global_sa, is_global=True)
    l3 = sa_module(sift, glob_cfg, mlp_layers(params, "unet.global", len(cfg.global_sa)))
    extra = Tensor(np.concatenate([np.asarray(one_hot, dtype=np.float64),
                                   np.asarray(image_feature, dtype=np.float64)])[None, :])
    l3 = PointSet(l3.coords, T.concat([l3.features, extra], axis=1))
    f1 = fp_module(l3, sift.coords, sift.features, mlp_layers(params, "unet.fp1", 1))
    f2 = fp_module(PointSet(sift.coords, f1), l1.coords, l1.features,
                   mlp_layers(params, "unet.fp2", 1))
    f3 = fp_module(PointSet(l1.coords, f2), l0.coords, l0.features,
                   mlp_layers(params, "unet.fp3", 1))
    logits = apply_mlp(f3, mlp_layers(params, "unet.head", len(cfg.seg_head)), None)
    prob = T.softmax(logits, axis=1)[:, 1]
    return SegmentationOutput(logits, prob)


def mask_select(points: np.ndarray, probabilities: np.ndarray, threshold: float = 0.5):
    """Points of interest (xyz + intensity), their xyz centroid and row indices.

    If no probability exceeds ``threshold`` the single most probable point
    is used.
    """
    points = np.asarray(points, dtype=np.float64)
    probabilities = np.asarray(probabilities, dtype=np.float64)
    idx = np.flatnonzero(probabilities > threshold)
    if idx.size == 0:
        idx = np.array([int(np.argmax(probabilities))])
    interest = points[idx][:, [0, 1, 2, 6]]
    centroid = interest[:, :3].mean(axis=0)
    return interest, centroid, idx


# ---------------------------------------------------------------------- T-Net

def tnet_forward(params: T.ParameterSet, cfg: NetConfig, interest) -> tuple[Tensor, Tensor]:
    """Predict the negative box centre of centred interest points and translate them.

    ``interest`` is ``M x 4`` (xyz relative to the mask centroid, intensity),
    as an array or a tensor.  Returns ``(delta, xyz + delta)``.
    """
    interest = interest if isinstance(interest, Tensor) else Tensor(interest)
    if interest.shape[0] == 0:
        raise EmptyInputError("T-Net on zero points")
    x = apply_mlp(interest, mlp_layers(params, "tnet.sa", len(cfg.tnet_sa)))
    pooled, _ = T.max_over_points(x)
    delta = apply_mlp(pooled, mlp_layers(params, "tnet.fc", len(cfg.tnet_fc)), None)
    xyz = interest[:, 0:3]
    return delta, xyz + delta


# ---------------------------------------------------------------- Point-SENet

@dataclass
class BoxPrediction:
    raw: Tensor
    num_size: int
    num_heading: int

    def __post_init__(self):
        expect = 3 + 4 * self.num_size + 2 * self.num_heading
        if self.raw.shape != (expect,):
            raise DimensionError(f"box head output {self.raw.shape}, expected ({expect},)")

    @property
    def _offsets(self):
        ns, nh = self.num_size, self.num_heading
        return 3, 3 + ns, 3 + 4 * ns, 3 + 4 * ns + nh

    def center(self) -> Tensor:
        return self.raw[0:3]

    def size_scores(self) -> Tensor:
        a, b, _, _ = self._offsets
        return self.raw[a:b]

    def size_residuals(self) -> Tensor:
        _, b, c, _ = self._offsets
        return T.reshape(self.raw[b:c], (self.num_size, 3))

    def heading_scores(self) -> Tensor:
        _, _, c, d = self._offsets
        return self.raw[c:d]

    def heading_residuals(self) -> Tensor:
        _, _, _, d = self._offsets
        return self.raw[d:]


def point_senet_forward(params: T.ParameterSet, cfg: NetConfig, translated) -> BoxPrediction:
    """Box parameters from T-Net-translated interest points (``M x 3``)."""
    x = translated if isinstance(translated, Tensor) else Tensor(translated)
    if x.ndim != 2 or x.shape[1] != 3:
        raise DimensionError(f"Point-SENet expects M x 3 points, got {x.shape}")
    if x.shape[0] == 0:
        raise EmptyInputError("Point-SENet on zero points")
    x = T.shared_mlp(x, params["senet.conv1.0.w"], params["senet.conv1.0.b"], "relu")
    x_star = T.shared_mlp(x, params["senet.conv2.0.w"], params["senet.conv2.0.b"], "relu")
    conv3 = (params["senet.conv3.0.w"], params["senet.conv3.0.b"])
    f_se = se_forward(x_star, conv3, se_params_from(params, "senet.se", cfg.se_reduction))
    lifted = T.shared_mlp(f_se, params["senet.lift.0.w"], params["senet.lift.0.b"], "relu")
    pooled, _ = T.max_over_points(lifted)
    raw = apply_mlp(pooled, mlp_layers(params, "senet.fc", len(cfg.senet_fc) + 1), None)
    return BoxPrediction(raw, cfg.num_size, cfg.num_heading)


# ------------------------------------------------------------ box templates

@dataclass
class ClassTemplates:
    """Per-class size templates ``K x NS x 3`` (h, w, l) and ``NH`` heading-bin centres."""

    sizes: np.ndarray
    heading_centers: np.ndarray

    def __post_init__(self):
        self.sizes = np.asarray(self.sizes, dtype=np.float64)
        self.heading_centers = np.asarray(self.heading_centers, dtype=np.float64)
        if self.sizes.ndim != 3 or self.sizes.shape[2] != 3 or np.any(self.sizes <= 0):
            raise DimensionError(f"size templates must be K x NS x 3 positive, got {self.sizes.shape}")
        if np.any(np.diff(self.heading_centers) <= 0):
            raise ValueError("heading-bin centres must be strictly increasing")

    @property
    def num_size(self) -> int:
        return self.sizes.shape[1]

    @property
    def num_heading(self) -> int:
        return len(self.heading_centers)

    @property
    def half_bin(self) -> float:
        return np.pi / self.num_heading

    def size_bin(self, size, class_id: int) -> int:
        """Template whose extents are closest in relative terms."""
        tmpl = self.sizes[class_id]
        return int(np.argmin(np.abs(np.log(np.asarray(size) / tmpl)).sum(axis=1)))

    def heading_bin(self, theta: float) -> int:
        return int(np.argmin(np.abs(wrap_angle(theta - self.heading_centers))))


def heading_bin_centers(nh: int) -> np.ndarray:
    """``nh`` uniform bins partitioning ``(-pi, pi]``; bin edges include +-pi."""
    return -np.pi + (np.arange(nh) + 0.5) * (2.0 * np.pi / nh)


def size_templates_from_boxes(sizes_by_class: list[np.ndarray], num_size: int) -> np.ndarray:
    """``NS`` templates per class: means of volume-ordered equal chunks of the sizes.

    A class with fewer boxes than templates repeats its chunks cyclically.
    """
    out = []
    for sizes in sizes_by_class:
        sizes = np.asarray(sizes, dtype=np.float64).reshape(-1, 3)
        if len(sizes) == 0:
            raise ValueError("every class needs at least one training box")
        order = np.argsort(np.prod(sizes, axis=1), kind="stable")
        chunks = np.array_split(sizes[order], min(num_size, len(sizes)))
        means = [c.mean(axis=0) for c in chunks]
        out.append([means[i % len(means)] for i in range(num_size)])
    return np.array(out)


# ------------------------------------------------------------ encode / decode

def decode_box(raw, mask_centroid, tnet_delta, templates: ClassTemplates, class_id: int,
               min_size: float = 1e-3) -> Box3D:
    """Box in the frustum frame from the raw head vector.

    centre = mask centroid - T-Net delta + predicted residual; size and
    heading use the highest-scoring template and bin.
    """
    raw = np.asarray(raw.data if isinstance(raw, Tensor) else raw, dtype=np.float64)
    ns, nh = templates.num_size, templates.num_heading
    pred = BoxPrediction(Tensor(raw), ns, nh)
    center = (np.asarray(mask_centroid) - np.asarray(tnet_delta.data if isinstance(tnet_delta, Tensor)
                                                    else tnet_delta) + pred.center().data)
    s = int(np.argmax(pred.size_scores().data))
    size = templates.sizes[class_id, s] * (1.0 + pred.size_residuals().data[s])
    size = np.maximum(size, min_size)
    hb = int(np.argmax(pred.heading_scores().data))
    theta = templates.heading_centers[hb] + pred.heading_residuals().data[hb] * templates.half_bin
    return Box3D(center[0], center[1], center[2], size[0], size[1], size[2], wrap_angle(theta))


@dataclass
class BoxTargets:
    """Regression targets for one ground-truth box."""

    center: np.ndarray
    size_bin: int
    size_residual: np.ndarray  # normalised by the template
    heading_bin: int
    heading_residual: float  # normalised by half the bin width
    theta: float


def box_targets(box: Box3D, templates: ClassTemplates, class_id: int) -> BoxTargets:
    s = templates.size_bin(box.size, class_id)
    tmpl = templates.sizes[class_id, s]
    hb = templates.heading_bin(box.theta)
    res = wrap_angle(box.theta - templates.heading_centers[hb]) / templates.half_bin
    return BoxTargets(box.center, s, box.size / tmpl - 1.0, hb, float(res), box.theta)


def encode_box(box: Box3D, mask_centroid, tnet_delta, templates: ClassTemplates, class_id: int,
               confidence: float = 10.0) -> np.ndarray:
    """Raw head vector that :func:`decode_box` maps back to ``box``."""
    t = box_targets(box, templates, class_id)
    ns, nh = templates.num_size, templates.num_heading
    raw = np.zeros(3 + 4 * ns + 2 * nh)
    raw[0:3] = box.center - (np.asarray(mask_centroid) - np.asarray(tnet_delta))
    raw[3 + t.size_bin] = confidence
    res = np.zeros((ns, 3))
    res[t.size_bin] = t.size_residual
    raw[3 + ns:3 + 4 * ns] = res.reshape(-1)
    raw[3 + 4 * ns + t.heading_bin] = confidence
    raw[3 + 4 * ns + nh + t.heading_bin] = t.heading_residual
    return raw
