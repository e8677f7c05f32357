"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations record themselves on the innermost active :class:`Tape` whenever
one of their inputs requires a gradient.  ``Tape.gradient`` replays the
records in exact reverse order.

    >>> w = Tensor([2.0], requires_grad=True)
    >>> with Tape() as tape:
    ...     y = (w * w).sum()
    >>> tape.gradient(y, [w])[0]
    array([4.])
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DimensionError, EmptyInputError, LabelError, NumericError

_TAPES: list["Tape"] = []
# op name -> multiplier applied to that op's input gradients (fault injection)
_FAULTS: dict[str, float] = {}


class Tensor:
    """A float64 array that can take part in gradient recording."""

    __slots__ = ("data", "requires_grad", "name", "__weakref__")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({np.array2string(self.data, precision=4)}{flag})"

    def __len__(self) -> int:
        return self.data.shape[0]

    # arithmetic sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


@dataclass
class _Record:
    out: Tensor
    inputs: tuple[Tensor, ...]
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]
    op: str


class Tape:
    """Ordered record of differentiable operations.

    Use as a context manager; operations executed inside the ``with`` block
    on tensors that require gradients are appended in order.
    """

    def __init__(self):
        self.records: list[_Record] = []

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.remove(self)

    def gradient(self, target: Tensor, sources: Sequence[Tensor],
                 seed: np.ndarray | None = None) -> list[np.ndarray]:
        """Gradients of ``target`` with respect to each source.

        Sources that are not on any path to the target get zeros.
        """
        if seed is None:
            if target.size != 1:
                raise DimensionError(f"gradient target must be scalar, got shape {target.shape}")
            seed = np.ones_like(target.data)
        grads: dict[int, np.ndarray] = {id(target): np.asarray(seed, dtype=np.float64)}
        keep = {id(s) for s in sources}
        for rec in reversed(self.records):
            key = id(rec.out)
            g = grads.get(key) if key in keep else grads.pop(key, None)
            if g is None:
                continue
            input_grads = rec.backward(g)
            factor = _FAULTS.get(rec.op)
            for inp, gi in zip(rec.inputs, input_grads):
                if gi is None or not inp.requires_grad:
                    continue
                if factor is not None:
                    gi = gi * factor
                key = id(inp)
                prev = grads.get(key)
                grads[key] = gi if prev is None else prev + gi
        return [grads.get(id(s), np.zeros_like(s.data)) for s in sources]


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, inputs: tuple[Tensor, ...], backward, op: str) -> Tensor:
    needs = any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs)
    if needs and _TAPES:
        _TAPES[-1].records.append(_Record(out, inputs, backward, op))
    return out


@contextlib.contextmanager
def inject_fault(op: str, factor: float = 2.0):
    """Corrupt the backward rule of ``op`` by scaling its input gradients.

    Only meant for negative tests of the gradient checker.
    """
    _FAULTS[op] = factor
    try:
        yield
    finally:
        _FAULTS.pop(op, None)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_broadcast(a: np.ndarray, b: np.ndarray, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise DimensionError(f"{op}: cannot broadcast {a.shape} with {b.shape}") from exc


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a.data, b.data, "add")
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a.data, b.data, "sub")
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a.data, b.data, "mul")
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b),
                 lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
                 "mul")


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a.data, b.data, "div")
    ad, bd = a.data, b.data
    out = ad / bd
    return _make(out, (a, b),
                 lambda g: (_unbroadcast(g / bd, ad.shape),
                            _unbroadcast(-g * out / bd, bd.shape)),
                 "div")


def neg(a) -> Tensor:
    a = _as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def relu(x) -> Tensor:
    x = _as_tensor(x)
    mask = x.data > 0
    return _make(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,), "relu")


_SIGMOID_LO = np.finfo(np.float64).tiny
_SIGMOID_HI = np.nextafter(1.0, 0.0)


def sigmoid(x) -> Tensor:
    x = _as_tensor(x)
    d = x.data
    e = np.exp(-np.abs(d))
    out = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    # float64 rounds to exactly 0 or 1 for |x| beyond ~36.7 (and ~745); keep the open interval
    out = np.clip(out, _SIGMOID_LO, _SIGMOID_HI)
    return _make(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def exp(x) -> Tensor:
    x = _as_tensor(x)
    out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,), "exp")


def log(x) -> Tensor:
    x = _as_tensor(x)
    d = x.data
    return _make(np.log(d), (x,), lambda g: (g / d,), "log")


def sqrt(x) -> Tensor:
    """Square root whose derivative at exactly zero is taken as zero."""
    x = _as_tensor(x)
    out = np.sqrt(x.data)
    safe = np.where(out > 0, out, 1.0)

    def backward(g):
        return (np.where(out > 0, g / (2.0 * safe), 0.0),)

    return _make(out, (x,), backward, "sqrt")


def square(x) -> Tensor:
    x = _as_tensor(x)
    d = x.data
    return _make(d * d, (x,), lambda g: (2.0 * g * d,), "square")


def sin(x) -> Tensor:
    x = _as_tensor(x)
    d = x.data
    return _make(np.sin(d), (x,), lambda g: (g * np.cos(d),), "sin")


def cos(x) -> Tensor:
    x = _as_tensor(x)
    d = x.data
    return _make(np.cos(d), (x,), lambda g: (-g * np.sin(d),), "cos")


def absolute(x) -> Tensor:
    x = _as_tensor(x)
    d = x.data
    return _make(np.abs(d), (x,), lambda g: (g * np.sign(d),), "abs")


def minimum(a, b) -> Tensor:
    """Elementwise minimum; ties send the gradient to ``a``."""
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a.data, b.data, "minimum")
    pick_a = a.data <= b.data
    sa, sb = a.shape, b.shape
    return _make(np.where(pick_a, a.data, b.data), (a, b),
                 lambda g: (_unbroadcast(g * pick_a, sa), _unbroadcast(g * ~pick_a, sb)),
                 "minimum")


# ------------------------------------------------------------------- products

def matmul(a, b) -> Tensor:
    """``a[..., k] @ b[k, n]``; leading axes of ``a`` are treated as rows."""
    a, b = _as_tensor(a), _as_tensor(b)
    if b.ndim != 2 or a.ndim < 1 or a.shape[-1] != b.shape[0]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} do not align")
    ad, bd = a.data, b.data

    def backward(g):
        ga = g @ bd.T
        gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        return ga, gb

    return _make(ad @ bd, (a, b), backward, "matmul")


# ----------------------------------------------------------------- reductions

def tsum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    shape = x.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(x.data.sum(axis=axis, keepdims=keepdims), (x,), backward, "sum")


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    n = x.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return tsum(x, axis=axis, keepdims=keepdims) * (1.0 / float(n))


def reduce_max(x, axis: int = 0) -> tuple[Tensor, np.ndarray]:
    """Maximum along ``axis`` and its argmax; ties go to the lowest index."""
    x = _as_tensor(x)
    if x.shape[axis] == 0:
        raise EmptyInputError("max over an empty axis")
    d = x.data
    idx = np.argmax(d, axis=axis)
    values = np.take_along_axis(d, np.expand_dims(idx, axis), axis=axis)
    shape = d.shape

    def backward(g):
        out = np.zeros(shape)
        np.put_along_axis(out, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis)
        return (out,)

    return _make(np.squeeze(values, axis=axis), (x,), backward, "max"), idx


def max_over_points(x) -> tuple[Tensor, np.ndarray]:
    """Per-channel maximum over the rows of an ``N x C`` tensor."""
    x = _as_tensor(x)
    if x.ndim != 2:
        raise DimensionError(f"max_over_points expects N x C, got {x.shape}")
    if x.shape[0] == 0:
        raise EmptyInputError("max_over_points on zero points")
    return reduce_max(x, axis=0)


# ------------------------------------------------------------------- reshaping

def reshape(x, shape) -> Tensor:
    x = _as_tensor(x)
    old = x.shape
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),), "reshape")


def transpose(x, axes=None) -> Tensor:
    x = _as_tensor(x)
    inv = None if axes is None else np.argsort(axes)
    return _make(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),), "transpose")


def broadcast_to(x, shape) -> Tensor:
    x = _as_tensor(x)
    old = x.shape
    return _make(np.broadcast_to(x.data, shape).copy(), (x,),
                 lambda g: (_unbroadcast(g, old),), "broadcast")


def getitem(x, index) -> Tensor:
    x = _as_tensor(x)
    shape = x.shape

    def backward(g):
        out = np.zeros(shape)
        np.add.at(out, index, g)
        return (out,)

    return _make(x.data[index], (x,), backward, "getitem")


def take(x, idx: np.ndarray) -> Tensor:
    """Gather rows: result shape is ``idx.shape + x.shape[1:]``."""
    x = _as_tensor(x)
    idx = np.asarray(idx, dtype=np.intp)
    shape = x.shape
    flat = idx.reshape(-1)

    def backward(g):
        g2 = g.reshape(flat.size, -1)
        out = np.zeros((shape[0], g2.shape[1]))
        np.add.at(out, flat, g2)
        return (out.reshape(shape),)

    return _make(x.data[idx], (x,), backward, "take")


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = tuple(_as_tensor(t) for t in tensors)
    try:
        data = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat: {[t.shape for t in ts]}") from exc
    sizes = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def backward(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _make(data, ts, backward, "concat")


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = tuple(_as_tensor(t) for t in tensors)
    data = np.stack([t.data for t in ts], axis=axis)

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(ts)))

    return _make(data, ts, backward, "stack")


# ---------------------------------------------------------------- nn helpers

_ACTIVATIONS = {"relu": relu, "sigmoid": sigmoid, "linear": None, None: None}


def shared_mlp(points, weights, bias, activation: str | None = "relu") -> Tensor:
    """Apply one affine map to every row (last axis) then an activation."""
    points, weights, bias = _as_tensor(points), _as_tensor(weights), _as_tensor(bias)
    if weights.ndim != 2 or points.shape[-1] != weights.shape[0]:
        raise DimensionError(f"shared_mlp: input {points.shape} vs weights {weights.shape}")
    if bias.shape != (weights.shape[1],):
        raise DimensionError(f"shared_mlp: bias {bias.shape} vs weights {weights.shape}")
    if activation not in _ACTIVATIONS:
        raise ValueError(f"unknown activation {activation!r}")
    out = matmul(points, weights) + bias
    act = _ACTIVATIONS[activation]
    return out if act is None else act(out)


def log_softmax(x, axis: int = -1) -> Tensor:
    x = _as_tensor(x)
    d = x.data
    shifted = d - d.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    soft = np.exp(out)

    def backward(g):
        return (g - soft * g.sum(axis=axis, keepdims=True),)

    return _make(out, (x,), backward, "log_softmax")


def softmax(x, axis: int = -1) -> np.ndarray:
    """Plain (untracked) softmax of an array or tensor."""
    d = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    e = np.exp(d - d.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def softmax_cross_entropy(logits, labels) -> Tensor:
    """Mean cross-entropy of ``logits[..., C]`` against integer labels."""
    logits = _as_tensor(logits)
    labels = np.asarray(labels)
    if logits.ndim == 1:
        logits = reshape(logits, (1, -1))
        labels = labels.reshape(1)
    n_cls = logits.shape[-1]
    if labels.shape != logits.shape[:-1]:
        raise DimensionError(f"labels {labels.shape} vs logits {logits.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= n_cls
                        or not np.all(labels == np.round(labels))):
        raise LabelError(f"labels must be integers in [0, {n_cls})")
    lp = log_softmax(logits, axis=-1)
    onehot = np.zeros(logits.shape)
    np.put_along_axis(onehot, labels.astype(np.intp)[..., None], 1.0, axis=-1)
    return -(tsum(lp * onehot) * (1.0 / max(labels.size, 1)))


def smooth_l1(pred, target, delta: float = 1.0, reduction: str = "mean") -> Tensor:
    """Huber loss: ``0.5 d^2 / delta`` below the knee, ``|d| - 0.5 delta`` above."""
    pred, target = _as_tensor(pred), _as_tensor(target)
    diff = sub(pred, target)
    d = diff.data
    quad = np.abs(d) < delta
    val = np.where(quad, 0.5 * d * d / delta, np.abs(d) - 0.5 * delta)

    def backward(g):
        return (g * np.where(quad, d / delta, np.sign(d)),)

    elem = _make(val, (diff,), backward, "smooth_l1")
    if reduction == "sum":
        return tsum(elem)
    if reduction == "mean":
        return mean(elem)
    if reduction == "none":
        return elem
    raise ValueError(f"unknown reduction {reduction!r}")


# ---------------------------------------------------------------- validation

def grad_check(f: Callable[[], Tensor], inputs: Sequence[Tensor], eps: float = 1e-6,
               coords: Sequence[np.ndarray | None] | None = None) -> float:
    """Max relative error between tape gradients and central differences.

    ``f`` recomputes a scalar from ``inputs`` (mutated in place while
    probing).  The error per coordinate is ``|analytic - numeric| /
    max(1, |analytic|)``.  Inputs are tracked during the analytic pass
    whatever their ``requires_grad`` flag.  ``coords`` optionally restricts
    each input to a set of flat indices; ``None`` means every coordinate.
    """
    if not 1e-7 <= eps <= 1e-4:
        raise ValueError(f"eps must lie in [1e-7, 1e-4], got {eps}")
    flags = [t.requires_grad for t in inputs]
    for t in inputs:
        t.requires_grad = True
    try:
        with Tape() as tape:
            out = f()
        if not np.all(np.isfinite(out.data)):
            raise NumericError("non-finite value in gradient-check forward pass")
        analytic = tape.gradient(out, list(inputs))
    finally:
        for t, flag in zip(inputs, flags):
            t.requires_grad = flag
    worst = 0.0
    for k, (t, ga) in enumerate(zip(inputs, analytic)):
        flat = t.data.reshape(-1)
        chosen = range(flat.size) if coords is None or coords[k] is None else coords[k]
        ga = ga.reshape(-1)
        for i in chosen:
            orig = flat[i]
            flat[i] = orig + eps
            fp = f().item()
            flat[i] = orig - eps
            fm = f().item()
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NumericError(f"non-finite value probing input {k} coordinate {i}")
            num = (fp - fm) / (2.0 * eps)
            err = abs(ga[i] - num) / max(1.0, abs(ga[i]))
            worst = max(worst, err)
    return worst


# ------------------------------------------------------------------ optimizer

@dataclass
class Parameter:
    """A trainable tensor plus its Adam moment buffers."""

    name: str
    tensor: Tensor
    m: np.ndarray = field(default=None)
    v: np.ndarray = field(default=None)
    step: int = 0

    def __post_init__(self):
        self.tensor.requires_grad = True
        self.tensor.name = self.name
        if self.m is None:
            self.m = np.zeros_like(self.tensor.data)
        if self.v is None:
            self.v = np.zeros_like(self.tensor.data)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.tensor.shape


class ParameterSet:
    """Ordered, named collection of parameters."""

    def __init__(self, params: Iterable[Parameter] = ()):
        self._params: dict[str, Parameter] = {}
        for p in params:
            self.add(p)

    def add(self, p: Parameter) -> Parameter:
        if p.name in self._params:
            raise ValueError(f"duplicate parameter {p.name}")
        self._params[p.name] = p
        return p

    def new(self, name: str, data: np.ndarray) -> Tensor:
        return self.add(Parameter(name, Tensor(np.array(data, dtype=np.float64)))).tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name].tensor

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self):
        return iter(self._params.values())

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def tensors(self) -> list[Tensor]:
        return [p.tensor for p in self._params.values()]

    def parameter(self, name: str) -> Parameter:
        return self._params[name]

    def subset(self, prefix: str) -> list[Parameter]:
        return [p for n, p in self._params.items() if n.startswith(prefix)]

    def num_values(self) -> int:
        return sum(p.tensor.size for p in self)


def adam_step(params: Sequence[Parameter], grads: Sequence[np.ndarray], lr: float = 0.001,
              beta1: float = 0.95, beta2: float = 0.999, eps_hat: float = 1e-8) -> None:
    """Bias-corrected Adam update, in place.

    Uses the folded step size ``lr * sqrt(1 - beta2^t) / (1 - beta1^t)`` with
    ``eps_hat`` added to ``sqrt(v)``.
    """
    if len(params) != len(grads):
        raise DimensionError(f"{len(params)} parameters but {len(grads)} gradients")
    for p, g in zip(params, grads):
        g = np.asarray(g, dtype=np.float64)
        if g.shape != p.shape:
            raise DimensionError(f"gradient {g.shape} for parameter {p.name} {p.shape}")
        p.step += 1
        p.m *= beta1
        p.m += (1.0 - beta1) * g
        p.v *= beta2
        p.v += (1.0 - beta2) * g * g
        alpha = lr * np.sqrt(1.0 - beta2 ** p.step) / (1.0 - beta1 ** p.step)
        p.tensor.data -= alpha * p.m / (np.sqrt(p.v) + eps_hat)
