"""Sampling, grouping and interpolation for hierarchical point networks.

All neighbour searches are brute force over the full cloud; distance ties
go to the lowest point index.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import CountError, DimensionError, EmptyInputError
from .tensor import Tensor


@dataclass
class PointSet:
    coords: np.ndarray
    features: Tensor | None = None

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(self.coords)):
            raise ValueError("point coordinates must be finite")
        if self.features is not None and self.features.shape[0] != len(self.coords):
            raise DimensionError(
                f"{len(self.coords)} coords but {self.features.shape[0]} feature rows")

    def __len__(self) -> int:
        return len(self.coords)

    @property
    def num_channels(self) -> int:
        return 0 if self.features is None else self.features.shape[1]


@dataclass
class SAConfig:
    num_centroids: int = 128
    radius: float = 0.2
    max_group_size: int = 32
    mlp_widths: list[int] = field(default_factory=lambda: [32, 32, 64])
    is_global: bool = False

    def __post_init__(self):
        if not self.is_global and self.radius <= 0:
            raise ValueError("radius must be positive for a local SA layer")


def _sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = a[:, None, :] - b[None, :, :]
    return np.einsum("ijk,ijk->ij", d, d)


def farthest_point_sample(coords: np.ndarray, k: int, seed: int | None = None) -> np.ndarray:
    """Greedy max-min selection of ``k`` distinct indices.

    The first index is 0 when ``seed`` is None, otherwise drawn from
    ``numpy.random.default_rng(seed)``.
    """
    coords = np.asarray(coords, dtype=np.float64)
    n = len(coords)
    if not 1 <= k <= n:
        raise CountError(f"cannot sample {k} of {n} points")
    start = 0 if seed is None else int(np.random.default_rng(seed).integers(n))
    chosen = np.empty(k, dtype=np.intp)
    chosen[0] = start
    mind = np.sum((coords - coords[start]) ** 2, axis=1)
    mind[start] = -1.0
    for i in range(1, k):
        nxt = int(np.argmax(mind))
        chosen[i] = nxt
        d = np.sum((coords - coords[nxt]) ** 2, axis=1)
        np.minimum(mind, d, out=mind)
        mind[nxt] = -1.0
    return chosen


def ball_query(coords: np.ndarray, centers: np.ndarray, radius: float,
               max_group_size: int) -> np.ndarray:
    """Up to ``max_group_size`` indices within ``radius`` of each centre, nearest first.

    Returns a ``k x max_group_size`` array.  Groups with fewer hits are padded
    by repeating their first (nearest) member; a centre with no point in
    range gets its nearest point.
    """
    coords = np.asarray(coords, dtype=np.float64)
    centers = np.asarray(centers, dtype=np.float64).reshape(-1, 3)
    if len(coords) == 0:
        raise EmptyInputError("ball_query on an empty cloud")
    if radius <= 0:
        raise ValueError("radius must be positive")
    d2 = _sq_dists(centers, coords)
    order = np.argsort(d2, axis=1, kind="stable")[:, :max_group_size]
    sorted_d2 = np.take_along_axis(d2, order, axis=1)
    inside = sorted_d2 <= radius * radius
    inside[:, 0] = True
    groups = np.where(inside, order, order[:, :1])
    if groups.shape[1] < max_group_size:
        pad = np.repeat(groups[:, :1], max_group_size - groups.shape[1], axis=1)
        groups = np.concatenate([groups, pad], axis=1)
    return groups


def group_counts(coords: np.ndarray, centers: np.ndarray, radius: float) -> np.ndarray:
    """Number of points within ``radius`` of each centre."""
    return (_sq_dists(np.asarray(centers).reshape(-1, 3), np.asarray(coords)) <= radius ** 2).sum(1)


def mlp_layers(params: T.ParameterSet, prefix: str, n_layers: int) -> list[tuple[Tensor, Tensor]]:
    return [(params[f"{prefix}.{i}.w"], params[f"{prefix}.{i}.b"]) for i in range(n_layers)]


def apply_mlp(x: Tensor, layers, final_activation: str | None = "relu") -> Tensor:
    for i, (w, b) in enumerate(layers):
        act = "relu" if i < len(layers) - 1 else final_activation
        x = T.shared_mlp(x, w, b, act)
    return x


def sa_module(ps: PointSet, cfg: SAConfig, layers) -> PointSet:
    """Set abstraction: sample, group, encode with a shared MLP, max-pool.

    A global layer pools the whole cloud (coordinates plus features) into a
    single centroid located at the origin.  A local layer uses at most
    ``len(ps)`` centroids.
    """
    n = len(ps)
    if n == 0:
        raise EmptyInputError("sa_module on an empty point set")
    if cfg.is_global:
        x = Tensor(ps.coords)
        if ps.features is not None:
            x = T.concat([x, ps.features], axis=1)
        h = apply_mlp(x, layers)
        pooled, _ = T.max_over_points(h)
        return PointSet(np.zeros((1, 3)), T.reshape(pooled, (1, -1)))
    k = min(cfg.num_centroids, n)
    idx = farthest_point_sample(ps.coords, k)
    centers = ps.coords[idx]
    groups = ball_query(ps.coords, centers, cfg.radius, cfg.max_group_size)
    rel = Tensor(ps.coords[groups] - centers[:, None, :])
    x = rel if ps.features is None else T.concat([rel, T.take(ps.features, groups)], axis=2)
    h = apply_mlp(x, layers)
    pooled, _ = T.reduce_max(h, axis=1)
    return PointSet(centers, pooled)


def three_nn_weights(fine: np.ndarray, coarse: np.ndarray, eps: float = 1e-10):
    """Indices and inverse-distance weights of up to three nearest coarse points."""
    if len(coarse) == 0:
        raise EmptyInputError("interpolation from an empty coarse set")
    d2 = _sq_dists(np.asarray(fine, dtype=np.float64), np.asarray(coarse, dtype=np.float64))
    kk = min(3, len(coarse))
    idx = np.argsort(d2, axis=1, kind="stable")[:, :kk]
    dist = np.sqrt(np.take_along_axis(d2, idx, axis=1))
    exact = dist <= eps
    inv = 1.0 / np.maximum(dist, eps)
    # a coincident coarse point takes all the weight
    inv = np.where(exact.any(axis=1, keepdims=True), exact.astype(np.float64), inv)
    w = inv / inv.sum(axis=1, keepdims=True)
    return idx, w


def fp_module(coarse: PointSet, fine_coords: np.ndarray, skip: Tensor | None, layers) -> Tensor:
    """Feature propagation: interpolate coarse features, concatenate skips, shared MLP."""
    if len(coarse) == 0:
        raise EmptyInputError("fp_module with an empty coarse set")
    fine_coords = np.asarray(fine_coords, dtype=np.float64)
    idx, w = three_nn_weights(fine_coords, coarse.coords)
    gathered = T.take(coarse.features, idx)
    interp = T.tsum(gathered * w[:, :, None], axis=1)
    x = interp if skip is None else T.concat([interp, skip], axis=1)
    return apply_mlp(x, layers)


def octant_select(coords: np.ndarray, center_index: int | None = None) -> np.ndarray:
    """Nearest point strictly inside each of the 8 octants around a centre.

    Octant ``o = 4*[dx>0] + 2*[dy>0] + [dz>0]``; a point on a coordinate
    plane of the centre belongs to no octant.  Empty octants fall back to
    the centre itself.  With ``center_index`` None every point is a centre
    and an ``N x 8`` array is returned.
    """
    coords = np.asarray(coords, dtype=np.float64)
    n = len(coords)
    centers = np.arange(n) if center_index is None else np.array([center_index])
    diff = coords[None, :, :] - coords[centers][:, None, :]
    d2 = np.einsum("ijk,ijk->ij", diff, diff)
    strict = np.all(diff != 0, axis=2)
    code = ((diff[..., 0] > 0) * 4 + (diff[..., 1] > 0) * 2 + (diff[..., 2] > 0)).astype(np.intp)
    out = np.repeat(centers[:, None], 8, axis=1)
    for o in range(8):
        member = strict & (code == o)
        masked = np.where(member, d2, np.inf)
        best = np.argmin(masked, axis=1)
        has = member[np.arange(len(centers)), best]
        out[:, o] = np.where(has, best, centers)
    return out[0] if center_index is not None else out


def pointsift_module(ps: PointSet, stages) -> PointSet:
    """Orientation encoding over the 8 octant neighbours of every point.

    ``stages`` holds three ``(w, b)`` pairs for the x, y and z stages.  Each
    stage concatenates the two neighbours along its axis (negative side
    first), applies the affine map and a ReLU, halving the 2x2x2 grid to a
    single feature per point after the third stage.
    """
    n = len(ps)
    if n == 0:
        raise EmptyInputError("pointsift_module on an empty point set")
    nbr = octant_select(ps.coords)
    g = T.take(ps.features, nbr)  # N x 8 x C, octant index = 4x + 2y + z
    c = g.shape[2]
    g = T.reshape(g, (n, 2, 4 * c))  # x halves
    g = T.transpose(T.reshape(g, (n, 2, 4, c)), (0, 2, 1, 3))  # N x (y,z) x x x C
    g = T.reshape(g, (n, 4, 2 * c))
    (wx, bx), (wy, by), (wz, bz) = stages
    g = T.shared_mlp(g, wx, bx, "relu")  # N x 4 x C1, row = 2y + z
    c1 = g.shape[2]
    g = T.transpose(T.reshape(g, (n, 2, 2, c1)), (0, 2, 1, 3))  # N x z x y x C1
    g = T.shared_mlp(T.reshape(g, (n, 2, 2 * c1)), wy, by, "relu")  # N x 2 x C2, row = z
    c2 = g.shape[2]
    g = T.shared_mlp(T.reshape(g, (n, 2 * c2)), wz, bz, "relu")
    return PointSet(ps.coords, g)
