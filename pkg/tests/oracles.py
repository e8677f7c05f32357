"""Independent reference implementations used as test oracles.

Everything here is written as plain loops or sampling so that it shares no
code path with the package under test.
"""

import math

import numpy as np


def _inside(points, box):
    """Point-in-box by explicit local coordinates (no package helpers)."""
    c, s = math.cos(box.theta), math.sin(box.theta)
    d = points - np.array([box.cx, box.cy, box.cz])
    lx = c * d[:, 0] + s * d[:, 1]
    ly = -s * d[:, 0] + c * d[:, 1]
    return (np.abs(lx) <= box.l / 2) & (np.abs(ly) <= box.w / 2) & (np.abs(d[:, 2]) <= box.h / 2)


def _bounds(boxes):
    lo, hi = np.full(3, np.inf), np.full(3, -np.inf)
    for b in boxes:
        r = 0.5 * math.hypot(b.l, b.w)
        lo = np.minimum(lo, [b.cx - r, b.cy - r, b.cz - b.h / 2])
        hi = np.maximum(hi, [b.cx + r, b.cy + r, b.cz + b.h / 2])
    return lo, hi


def stratified_points(lo, hi, n, rng, dims=3):
    """About ``n`` points, one uniform draw per cell of a regular grid."""
    m = max(1, int(round(n ** (1.0 / dims))))
    grid = np.stack(np.meshgrid(*[np.arange(m)] * dims, indexing="ij"), axis=-1).reshape(-1, dims)
    u = (grid + rng.random(grid.shape)) / m
    return lo[:dims] + u * (hi[:dims] - lo[:dims])


def monte_carlo_iou(a, b, n=10**6, rng=None, bev=False):
    """IoU estimate from stratified uniform samples over the joint bounding box."""
    rng = np.random.default_rng(0) if rng is None else rng
    lo, hi = _bounds([a, b])
    if bev:
        xy = stratified_points(lo, hi, n, rng, dims=2)
        pts = np.column_stack([xy, np.zeros(len(xy))])
        a, b = a.replace(cz=0.0), b.replace(cz=0.0)
    else:
        pts = stratified_points(lo, hi, n, rng)
    ia, ib = _inside(pts, a), _inside(pts, b)
    both = np.count_nonzero(ia & ib)
    union = np.count_nonzero(ia | ib)
    return both / union if union else 0.0


def brute_fps(coords, k, start=0):
    """Greedy farthest-point scan, lowest index wins ties."""
    n = len(coords)
    nearest = [math.inf] * n
    chosen = [start]
    for _ in range(1, k):
        last = coords[chosen[-1]]
        best, best_d = -1, -1.0
        for j in range(n):
            d = float(np.sum((coords[j] - last) ** 2))
            if d < nearest[j]:
                nearest[j] = d
            if j not in chosen and nearest[j] > best_d:
                best, best_d = j, nearest[j]
        chosen.append(best)
    return chosen


def brute_ball_query(coords, centers, radius, size):
    groups = []
    for c in centers:
        hits = [(float(np.sum((p - c) ** 2)), j) for j, p in enumerate(coords)]
        hits.sort()
        inside = [j for d, j in hits if d <= radius * radius][:size]
        if not inside:
            inside = [hits[0][1]]
        groups.append(inside + [inside[0]] * (size - len(inside)))
    return np.array(groups)


def brute_octant(coords, i):
    out = [i] * 8
    best = [math.inf] * 8
    for j, p in enumerate(coords):
        d = p - coords[i]
        if j == i or np.any(d == 0):
            continue
        o = 4 * int(d[0] > 0) + 2 * int(d[1] > 0) + int(d[2] > 0)
        dist = float(np.sum(d * d))
        if dist < best[o]:
            best[o], out[o] = dist, j
    return out


def random_box_pair(rng):
    from frustum3d.geometry import Box3D
    h, w, l = rng.uniform(0.5, 3.0, 3)
    a = Box3D(*rng.normal(0, 1, 3), h, w, l, rng.uniform(-math.pi, math.pi))
    shift = rng.normal(0, 0.4, 3) * np.array([l, w, h])
    b = Box3D(*(a.center + shift), *(np.array([h, w, l]) * rng.uniform(0.6, 1.5, 3)),
              rng.uniform(-math.pi, math.pi))
    return a, b
