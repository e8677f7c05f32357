"""Finite-difference checks of every sub-network and every loss term.

Each check builds a scalar from one component (a fixed random projection
of a network output, or a single loss term) and compares tape gradients
with central differences on a random subset of coordinates of every
parameter tensor the scalar depends on.  Ground-truth masks are used so
that the mask selection, which is not differentiable, stays fixed while
probing.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from . import tensor as T
from .data import SyntheticConfig, generate_sample
from .losses import TERMS
from .networks import NetConfig, build_params, mask_select, point_senet_forward, point_unet_forward, tnet_forward
from .pipeline import forward, loss_terms, templates_from_samples
from .se_block import SEParams, se_forward
from .tensor import Tensor


@dataclass
class CheckResult:
    name: str
    max_rel_error: float
    coordinates: int
    passed: bool

    def as_dict(self) -> dict:
        return {"name": self.name, "max_rel_error": self.max_rel_error,
                "coordinates": self.coordinates, "passed": self.passed}


def _coords(tensors, k: int, rng) -> list[np.ndarray]:
    return [rng.choice(t.data.size, size=min(k, t.data.size), replace=False) for t in tensors]


def _projection(shape, rng) -> np.ndarray:
    return rng.normal(0.0, 1.0, shape)


def _check(name, f, tensors, k, rng, eps, tol) -> CheckResult:
    coords = _coords(tensors, k, rng)
    err = T.grad_check(f, tensors, eps, coords)
    return CheckResult(name, float(err), int(sum(len(c) for c in coords)), bool(err < tol))


def run_gradcheck(net: NetConfig, synthetic: SyntheticConfig, seed: int = 0, eps: float = 1e-6,
                  tol: float = 1e-4, num_points: int = 32, coords_per_tensor: int = 3) -> list[CheckResult]:
    """All component checks on one small synthetic frustum."""
    rng = np.random.default_rng(seed)
    syn = replace(synthetic, num_points=num_points)
    per_class = [generate_sample(syn, k, np.random.default_rng(seed + k))
                 for k in range(len(syn.classes))]
    sample = per_class[0]
    params = build_params(net, seed)
    templates = templates_from_samples(per_class, net)
    pts = sample.canonical_points()
    interest, centroid, _ = mask_select(pts, sample.seg_labels.astype(np.float64))
    centred = interest.copy()
    centred[:, :3] -= centroid

    def group(prefix):
        return [params[n] for n in params.names() if n.startswith(prefix)]

    results = []
    proj = _projection((num_points, 2), rng)
    results.append(_check(
        "point_unet",
        lambda: T.tsum(point_unet_forward(params, net, pts, sample.one_hot,
                                          sample.image_feature).logits * proj),
        group("unet."), coords_per_tensor, rng, eps, tol))
    proj_t = _projection(3, rng)
    results.append(_check(
        "tnet", lambda: T.tsum(tnet_forward(params, net, centred)[0] * proj_t),
        group("tnet."), coords_per_tensor, rng, eps, tol))
    translated = centred[:, :3] + rng.normal(0.0, 0.1, 3)
    proj_b = _projection(net.box_dim, rng)
    results.append(_check(
        "point_senet", lambda: T.tsum(point_senet_forward(params, net, translated).raw * proj_b),
        group("senet."), coords_per_tensor, rng, eps, tol))

    # SE block alone, including its inputs
    c, r, m = 8, 4, 6
    x_star = Tensor(rng.normal(0.0, 1.0, (m, c)))
    w3, b3 = Tensor(rng.normal(0.0, 0.5, (c, c))), Tensor(rng.normal(0.0, 0.1, c))
    se = SEParams(Tensor(rng.normal(0.0, 0.5, (c, c // r))), Tensor(rng.normal(0.0, 0.1, c // r)),
                  Tensor(rng.normal(0.0, 0.5, (c // r, c))), Tensor(rng.normal(0.0, 0.1, c)), r)
    proj_se = _projection((m, c), rng)
    se_inputs = [x_star, w3, b3, se.w1, se.b1, se.w2, se.b2]
    results.append(_check("se_block", lambda: T.tsum(se_forward(x_star, (w3, b3), se) * proj_se),
                          se_inputs, m * c, rng, eps, tol))

    box_tensors = group("tnet.") + group("senet.")
    for mode in ("naive", "cosine"):
        for term in TERMS:
            if term == "seg" and mode == "cosine":
                continue
            if term != "angle_reg" and mode == "cosine":
                continue
            inputs = group("unet.") if term == "seg" else box_tensors

            def f(term=term, mode=mode):
                fr = forward(params, net, templates, sample, mask_from_labels=True)
                return loss_terms(fr, sample, templates, mode)[term]

            label = f"loss.{term}" + (f".{mode}" if term == "angle_reg" else "")
            results.append(_check(label, f, inputs, coords_per_tensor, rng, eps, tol))
    return results


def report(results: list[CheckResult], seconds: float) -> dict:
    return {"passed": all(r.passed for r in results), "seconds": round(seconds, 3),
            "max_rel_error": max(r.max_rel_error for r in results),
            "checks": [r.as_dict() for r in results]}


def timed_gradcheck(*args, **kwargs) -> dict:
    t0 = time.perf_counter()
    results = run_gradcheck(*args, **kwargs)
    return report(results, time.perf_counter() - t0)
