"""Squeeze-and-excitation over point features with a residual bypass.

The squeeze is a per-channel max over the points (not a mean), the gates
come from a two-layer bottleneck ending in a sigmoid, and the gated
features are added back onto the block input.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import DimensionError, EmptyInputError
from .tensor import Tensor


@dataclass
class SEParams:
    """Bottleneck weights.  ``w1`` maps c -> c/r and ``w2`` maps c/r -> c.

    Weights are stored input-major (``x @ w``), i.e. the transposes of the
    usual ``W1 (c/r x c)`` and ``W2 (c x c/r)`` matrices.
    """

    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor
    r: int = 4

    def __post_init__(self):
        c = self.w1.shape[0]
        if c % self.r:
            raise DimensionError(f"reduction {self.r} does not divide {c} channels")
        if self.w1.shape != (c, c // self.r) or self.w2.shape != (c // self.r, c):
            raise DimensionError(
                f"SE weights {self.w1.shape}, {self.w2.shape} inconsistent with c={c}, r={self.r}")

    @property
    def channels(self) -> int:
        return self.w1.shape[0]


@dataclass
class SEIntermediates:
    c_sq: Tensor
    scale: Tensor
    x: Tensor
    x_se: Tensor
    f_se: Tensor


def squeeze(x: Tensor) -> Tensor:
    if x.shape[0] == 0:
        raise EmptyInputError("squeeze over zero points")
    return T.max_over_points(x)[0]


def excite(c_sq: Tensor, params: SEParams) -> Tensor:
    if c_sq.shape != (params.channels,):
        raise DimensionError(f"squeezed vector {c_sq.shape} vs {params.channels} channels")
    hidden = T.shared_mlp(c_sq, params.w1, params.b1, "relu")
    return T.shared_mlp(hidden, params.w2, params.b2, "sigmoid")


def scale_apply(scale: Tensor, c_ex: Tensor) -> Tensor:
    if c_ex.ndim != 2 or scale.shape != (c_ex.shape[1],):
        raise DimensionError(f"scale {scale.shape} vs features {c_ex.shape}")
    return c_ex * scale


def residual_se(x_se: Tensor, x_star: Tensor) -> Tensor:
    if x_se.shape != x_star.shape:
        raise DimensionError(f"residual sum of {x_se.shape} and {x_star.shape}")
    return x_se + x_star


def se_forward(x_star: Tensor, conv3: tuple[Tensor, Tensor], params: SEParams,
               return_intermediates: bool = False):
    """Third point-wise conv, then squeeze, excite, rescale and the residual sum."""
    x = T.shared_mlp(x_star, conv3[0], conv3[1], "relu")
    c_sq = squeeze(x)
    scale = excite(c_sq, params)
    x_se = scale_apply(scale, x)
    f_se = residual_se(x_se, x_star)
    if return_intermediates:
        return f_se, SEIntermediates(c_sq, scale, x, x_se, f_se)
    return f_se


def init_se_params(params: T.ParameterSet, prefix: str, c: int, r: int,
                   rng: np.random.Generator) -> SEParams:
    """Register He-initialised bottleneck weights (zero biases) under ``prefix``."""
    if c % r:
        raise DimensionError(f"reduction {r} does not divide {c} channels")
    h = c // r
    w1 = params.new(f"{prefix}.w1", rng.normal(0.0, np.sqrt(2.0 / c), (c, h)))
    b1 = params.new(f"{prefix}.b1", np.zeros(h))
    w2 = params.new(f"{prefix}.w2", rng.normal(0.0, np.sqrt(1.0 / h), (h, c)))
    b2 = params.new(f"{prefix}.b2", np.zeros(c))
    return SEParams(w1, b1, w2, b2, r)


def se_params_from(params: T.ParameterSet, prefix: str, r: int) -> SEParams:
    return SEParams(params[f"{prefix}.w1"], params[f"{prefix}.b1"],
                    params[f"{prefix}.w2"], params[f"{prefix}.b2"], r)
