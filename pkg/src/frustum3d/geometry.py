"""Oriented 3D boxes, rotated IoU and frustum-frame transforms.

Coordinates are z-up.  A box is centred at its geometric centre; ``l`` runs
along the box's local x axis, ``w`` along local y and ``h`` along z.  The
heading ``theta`` rotates local x towards global y about the up axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

CLIP_EPS = 1e-12


def wrap_angle(theta):
    """Wrap angles to ``(-pi, pi]``."""
    t = np.asarray(theta, dtype=np.float64)
    out = np.pi - np.mod(np.pi - t, 2.0 * np.pi)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class Box3D:
    cx: float
    cy: float
    cz: float
    h: float
    w: float
    l: float
    theta: float = 0.0

    def __post_init__(self):
        vals = (self.cx, self.cy, self.cz, self.h, self.w, self.l, self.theta)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite box parameters {vals}")
        if min(self.h, self.w, self.l) <= 0:
            raise ValueError(f"box extents must be positive, got h={self.h} w={self.w} l={self.l}")
        object.__setattr__(self, "theta", wrap_angle(self.theta))

    @property
    def center(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.cz])

    @property
    def size(self) -> np.ndarray:
        """Extents as ``(h, w, l)``."""
        return np.array([self.h, self.w, self.l])

    @property
    def volume(self) -> float:
        return self.h * self.w * self.l

    def as_array(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.cz, self.h, self.w, self.l, self.theta])

    @classmethod
    def from_array(cls, a) -> "Box3D":
        a = [float(v) for v in a]
        return cls(*a)

    def replace(self, **kw) -> "Box3D":
        vals = dict(cx=self.cx, cy=self.cy, cz=self.cz, h=self.h, w=self.w, l=self.l,
                    theta=self.theta)
        vals.update(kw)
        return Box3D(**vals)

    def flipped(self) -> "Box3D":
        """Same box with the heading turned by pi."""
        return self.replace(theta=self.theta + np.pi)


# unit corner signs: top face (z=+1) counter-clockwise from above, then bottom
CORNER_SIGNS = np.array([
    [1, 1, 1], [-1, 1, 1], [-1, -1, 1], [1, -1, 1],
    [1, 1, -1], [-1, 1, -1], [-1, -1, -1], [1, -1, -1],
], dtype=np.float64)


def rotation_z(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def box_corners(b: Box3D) -> np.ndarray:
    """The eight corners of ``b`` as an 8 x 3 array.

    Order: top face counter-clockwise seen from above starting at local
    (+l/2, +w/2), then the bottom face in matching order.
    """
    local = CORNER_SIGNS * (0.5 * np.array([b.l, b.w, b.h]))
    return local @ rotation_z(b.theta).T + b.center


def box_from_corners(corners: np.ndarray) -> Box3D:
    """Invert :func:`box_corners` for corners in its canonical order."""
    c = np.asarray(corners, dtype=np.float64)
    center = c.mean(axis=0)
    l = np.linalg.norm(c[0] - c[1])
    w = np.linalg.norm(c[0] - c[3])
    h = np.linalg.norm(c[0] - c[4])
    ax = c[0] - c[1]
    theta = math.atan2(ax[1], ax[0])
    return Box3D(*center, h, w, l, theta)


def footprint(b: Box3D) -> np.ndarray:
    """BEV rectangle, 4 x 2, counter-clockwise."""
    return box_corners(b)[:4, :2]


def polygon_area(poly: np.ndarray) -> float:
    """Signed shoelace area (positive for counter-clockwise)."""
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def clip_polygon(subject: np.ndarray, clipper: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman clip of ``subject`` by convex counter-clockwise ``clipper``."""
    out = [p for p in subject]
    n = len(clipper)
    for i in range(n):
        if not out:
            break
        a, b = clipper[i], clipper[(i + 1) % n]
        edge = b - a
        inp, out = out, []

        def side(p):
            return edge[0] * (p[1] - a[1]) - edge[1] * (p[0] - a[0])

        for j in range(len(inp)):
            cur, prev = inp[j], inp[j - 1]
            sc, sp = side(cur), side(prev)
            if sc >= -CLIP_EPS:
                if sp < -CLIP_EPS:
                    out.append(_intersect(prev, cur, sp, sc))
                out.append(cur)
            elif sp >= -CLIP_EPS:
                out.append(_intersect(prev, cur, sp, sc))
    return np.array(out).reshape(-1, 2)


def _intersect(p, q, sp, sq):
    t = sp / (sp - sq)
    return p + t * (q - p)


def bev_intersection_area(a: Box3D, b: Box3D) -> float:
    poly = clip_polygon(footprint(a), footprint(b))
    return max(polygon_area(poly), 0.0)


def iou_bev(a: Box3D, b: Box3D) -> float:
    """IoU of the rotated bird's-eye-view footprints."""
    area_a, area_b = a.l * a.w, b.l * b.w
    inter = bev_intersection_area(a, b)
    union = area_a + area_b - inter
    return float(min(max(inter / union, 0.0), 1.0))


def iou_3d(a: Box3D, b: Box3D) -> float:
    """Volume IoU for boxes sharing the z-up axis."""
    top = min(a.cz + a.h / 2, b.cz + b.h / 2)
    bottom = max(a.cz - a.h / 2, b.cz - b.h / 2)
    dz = top - bottom
    if dz <= 0:
        return 0.0
    inter = bev_intersection_area(a, b) * dz
    union = a.volume + b.volume - inter
    return float(min(max(inter / union, 0.0), 1.0))


def corner_distance(a: Box3D, b: Box3D) -> float:
    """Mean distance between order-matched corners, minimised over flipping ``b``."""
    ca = box_corners(a)
    d1 = np.linalg.norm(ca - box_corners(b), axis=1).mean()
    d2 = np.linalg.norm(ca - box_corners(b.flipped()), axis=1).mean()
    return float(min(d1, d2))


def points_in_box(points: np.ndarray, b: Box3D, tol: float = 1e-9) -> np.ndarray:
    """Boolean mask of points inside ``b`` (boundary inclusive, within ``tol``)."""
    p = np.asarray(points, dtype=np.float64)[:, :3] - b.center
    local = p @ rotation_z(b.theta)  # rotate by -theta
    half = 0.5 * np.array([b.l, b.w, b.h]) + tol
    return np.all(np.abs(local) <= half, axis=1)


@dataclass(frozen=True)
class FrustumFrame:
    """Canonical frustum frame: rotate by ``-angle`` about z, then translate."""

    angle: float = 0.0
    translation: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def apply(self, points: np.ndarray) -> np.ndarray:
        return to_frustum_frame(points, self)

    def invert(self, points: np.ndarray) -> np.ndarray:
        return from_frustum_frame(points, self)


def to_frustum_frame(points: np.ndarray, frame: FrustumFrame) -> np.ndarray:
    p = np.asarray(points, dtype=np.float64)
    out = p.copy()
    out[..., :3] = p[..., :3] @ rotation_z(frame.angle) + np.asarray(frame.translation)
    return out


def from_frustum_frame(points: np.ndarray, frame: FrustumFrame) -> np.ndarray:
    p = np.asarray(points, dtype=np.float64)
    out = p.copy()
    out[..., :3] = (p[..., :3] - np.asarray(frame.translation)) @ rotation_z(frame.angle).T
    return out


def box_to_frustum_frame(b: Box3D, frame: FrustumFrame) -> Box3D:
    c = to_frustum_frame(b.center[None], frame)[0]
    return b.replace(cx=c[0], cy=c[1], cz=c[2], theta=b.theta - frame.angle)


def box_from_frustum_frame(b: Box3D, frame: FrustumFrame) -> Box3D:
    c = from_frustum_frame(b.center[None], frame)[0]
    return b.replace(cx=c[0], cy=c[1], cz=c[2], theta=b.theta + frame.angle)
