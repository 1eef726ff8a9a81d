"""Dense tensors with reverse-mode automatic differentiation.

Storage is a contiguous row-major numpy array. Every op executed while a
:class:`Tape` is recording and at least one input requires a gradient
registers a node (inputs, backward rule, sequence number). Sequence numbers
are handed out in execution order, so sorting reachable nodes by them gives
a topological order; :func:`backward` walks that order in reverse and visits
each node exactly once.
"""
from __future__ import annotations

import contextlib
import math
import threading
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf

__all__ = [
    "Tensor", "Tape", "NumericError", "ShapeError", "tensor", "parameter",
    "no_grad", "set_default_dtype", "get_default_dtype", "set_check_finite",
    "add", "sub", "mul", "div", "scale", "neg", "matmul", "transpose",
    "reshape", "concat", "stack", "slice_", "embedding_lookup",
    "softmax", "log_softmax", "gelu", "relu", "tanh", "exp", "log", "sum_",
    "mean", "layer_norm", "cross_entropy", "mse_loss", "dropout", "where_mask",
    "backward", "zero_grads", "grad_check", "GradCheckReport", "Adam", "adam_step",
]


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class NumericError(FloatingPointError):
    """A forward op produced NaN or Inf from finite inputs."""


_DEFAULT_DTYPE = np.float64
_CHECK_FINITE = True


def set_default_dtype(dtype) -> None:
    """Global float type for new tensors (float64 for checks, float32 allowed for training)."""
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dtype}")
    _DEFAULT_DTYPE = dtype.type


def get_default_dtype():
    return _DEFAULT_DTYPE


def set_check_finite(enabled: bool) -> None:
    global _CHECK_FINITE
    _CHECK_FINITE = bool(enabled)


class Tape(threading.local):
    """Per-thread operation recorder.

    ``enabled`` toggles recording; ``counter`` is the sequence number of the
    next recorded op.
    """

    def __init__(self) -> None:
        self.enabled = True
        self.counter = 0

    def next_id(self) -> int:
        self.counter += 1
        return self.counter


TAPE = Tape()


@contextlib.contextmanager
def no_grad():
    prev = TAPE.enabled
    TAPE.enabled = False
    try:
        yield
    finally:
        TAPE.enabled = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_seq", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.array(data, dtype=dtype or _DEFAULT_DTYPE, order="C", copy=True)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self._seq = 0
        self.name = name

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        t = cls.__new__(cls)
        t.data = np.asarray(arr, order="C")  # ascontiguousarray would promote 0-d to 1-d
        t.requires_grad = False
        t.grad = None
        t._parents = ()
        t._backward = None
        t._seq = 0
        t.name = None
        return t

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
        return Tensor._wrap(self.data.copy())

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __truediv__(self, other): return div(self, other)
    def __neg__(self): return neg(self)
    def __matmul__(self, other): return matmul(self, other)
    def __getitem__(self, idx): return slice_(self, idx)

    def reshape(self, *shape): return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)
    def transpose(self, *axes): return transpose(self, axes or None)
    def sum(self, axis=None, keepdims=False): return sum_(self, axis, keepdims)
    def mean(self, axis=None, keepdims=False): return mean(self, axis, keepdims)


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor._wrap(np.asarray(x, dtype=_DEFAULT_DTYPE))


def _make(out: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    if _CHECK_FINITE and out.dtype.kind == "f" and not np.isfinite(out).all():
        raise NumericError("non-finite values produced by forward op")
    t = Tensor._wrap(out)
    if TAPE.enabled and any(p.requires_grad for p in parents):
        t.requires_grad = True
        t._parents = parents
        t._backward = backward_fn
        t._seq = TAPE.next_id()
    return t


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = a.data + b.data
    except ValueError as exc:
        raise ShapeError(f"add: {a.shape} vs {b.shape}") from exc
    return _make(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = a.data - b.data
    except ValueError as exc:
        raise ShapeError(f"sub: {a.shape} vs {b.shape}") from exc
    return _make(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = a.data * b.data
    except ValueError as exc:
        raise ShapeError(f"mul: {a.shape} vs {b.shape}") from exc

    def bw(g):
        return (_unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                _unbroadcast(g * a.data, b.shape) if b.requires_grad else None)
    return _make(out, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data / b.data

    def bw(g):
        return (_unbroadcast(g / b.data, a.shape) if a.requires_grad else None,
                _unbroadcast(-g * a.data / (b.data * b.data), b.shape) if b.requires_grad else None)
    return _make(out, (a, b), bw)


def scale(x: Tensor, factor: float) -> Tensor:
    x = _as_tensor(x)
    return _make(x.data * factor, (x,), lambda g: (g * factor,))


def neg(x: Tensor) -> Tensor:
    return scale(x, -1.0)


def exp(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(x.data)
    return _make(out, (x,), lambda g: (g / x.data,))


def tanh(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    out = np.tanh(x.data)
    return _make(out, (x,), lambda g: (g * (1.0 - out * out),))


def relu(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    pos = x.data > 0
    return _make(np.where(pos, x.data, 0.0), (x,), lambda g: (g * pos,))


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x: Tensor) -> Tensor:
    """Exact erf form: 0.5 x (1 + erf(x / sqrt 2))."""
    x = _as_tensor(x)
    cdf = 0.5 * (1.0 + erf(x.data * _INV_SQRT2))
    out = x.data * cdf

    def bw(g):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * x.data * x.data)
        return (g * (cdf + x.data * pdf),)
    return _make(out, (x,), bw)


def where_mask(mask: np.ndarray, x: Tensor, fill: float) -> Tensor:
    """Replace entries where ``mask`` is true by the constant ``fill``."""
    x = _as_tensor(x)
    mask = np.asarray(mask, dtype=bool)
    out = np.where(mask, fill, x.data)
    return _make(out, (x,), lambda g: (np.where(mask, 0.0, g),))


# ------------------------------------------------------------------ structure

def matmul(a, b) -> Tensor:
    """(..., m, k) @ (..., k, n) with batch broadcasting."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)

    def bw(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb
    return _make(out, (a, b), bw)


def transpose(x: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    """Permute axes; the default swaps the last two."""
    x = _as_tensor(x)
    if axes is None:
        axes = list(range(x.ndim))
        axes[-2], axes[-1] = axes[-1], axes[-2]
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = np.ascontiguousarray(np.transpose(x.data, axes))
    return _make(out, (x,), lambda g: (np.transpose(g, inv),))


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    x = _as_tensor(x)
    try:
        out = x.data.reshape(tuple(shape))
    except ValueError as exc:
        raise ShapeError(f"reshape: {x.shape} -> {tuple(shape)}") from exc
    return _make(out, (x,), lambda g: (g.reshape(x.shape),))


def concat(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = tuple(_as_tensor(x) for x in xs)
    try:
        out = np.concatenate([x.data for x in xs], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: {[x.shape for x in xs]} on axis {axis}") from exc
    bounds = np.cumsum([x.shape[axis] for x in xs])[:-1]
    return _make(out, xs, lambda g: tuple(np.split(g, bounds, axis=axis)))


def stack(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = tuple(_as_tensor(x) for x in xs)
    out = np.stack([x.data for x in xs], axis=axis)
    return _make(out, xs, lambda g: tuple(np.take(g, i, axis=axis) for i in range(len(xs))))


def slice_(x: Tensor, idx) -> Tensor:
    """Basic or advanced indexing; gradients scatter-add back."""
    x = _as_tensor(x)
    out = np.array(x.data[idx])

    parts = idx if isinstance(idx, tuple) else (idx,)
    basic = all(isinstance(i, (int, slice, type(None), type(Ellipsis))) for i in parts)

    def bw(g):
        full = np.zeros_like(x.data)
        if basic:
            full[idx] += g
        else:
            np.add.at(full, idx, g)
        return (full,)
    return _make(out, (x,), bw)


def embedding_lookup(weight: Tensor, ids) -> Tensor:
    """Rows of ``weight`` selected by integer ``ids`` of any shape."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= weight.shape[0]):
        raise IndexError(f"embedding id out of range [0, {weight.shape[0]})")
    out = weight.data[ids]

    def bw(g):
        full = np.zeros_like(weight.data)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, weight.shape[1]))
        return (full,)
    return _make(out, (weight,), bw)


# ------------------------------------------------------------------ reductions

def sum_(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    out = np.sum(x.data, axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)
    return _make(np.asarray(out), (x,), bw)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    n = x.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return scale(sum_(x, axis, keepdims), 1.0 / n)


def softmax(x: Tensor, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """Max-subtracted softmax. Entries where ``mask`` is False get exactly 0."""
    x = _as_tensor(x)
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"softmax axis {axis} invalid for shape {x.shape}")
    z = x.data if mask is None else np.where(mask, x.data, -np.inf)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)
    return _make(out, (x,), bw)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    x = _as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))

    def bw(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)
    return _make(out, (x,), bw)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis with population variance, then affine."""
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer_norm: gamma {gamma.shape} / beta {beta.shape} vs last dim {d}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def bw(g):
        gx = gg = gb = None
        if gamma.requires_grad:
            gg = (g * xhat).reshape(-1, d).sum(axis=0)
        if beta.requires_grad:
            gb = g.reshape(-1, d).sum(axis=0)
        if x.requires_grad:
            gh = g * gamma.data
            gx = inv * (gh - gh.mean(axis=-1, keepdims=True)
                        - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        return gx, gg, gb
    return _make(out, (x, gamma, beta), bw)


def cross_entropy(logits: Tensor, targets, ignore_id: int | None = None) -> Tensor:
    """Mean negative log-likelihood of ``targets`` over non-ignored positions.

    ``logits`` has shape (..., vocab) and ``targets`` the leading shape.
    """
    logits = _as_tensor(logits)
    v = logits.shape[-1]
    t = np.asarray(targets, dtype=np.int64).reshape(-1)
    flat = logits.data.reshape(-1, v)
    if t.shape[0] != flat.shape[0]:
        raise ShapeError(f"cross_entropy: {t.shape[0]} targets for {flat.shape[0]} positions")
    keep = np.ones_like(t, dtype=bool) if ignore_id is None else t != ignore_id
    bad = keep & ((t < 0) | (t >= v))
    if bad.any():
        raise IndexError(f"target id {int(t[bad][0])} outside vocabulary of size {v}")
    n = int(keep.sum())
    if n == 0:
        raise ValueError("cross_entropy: every position is ignored")
    z = flat - flat.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    rows = np.nonzero(keep)[0]
    loss = -logp[rows, t[rows]].sum() / n

    def bw(g):
        p = np.exp(logp)
        p[rows, t[rows]] -= 1.0
        p[~keep] = 0.0
        return ((g / n) * p.reshape(logits.shape),)
    return _make(np.asarray(loss), (logits,), bw)


def mse_loss(pred: Tensor, target) -> Tensor:
    pred = _as_tensor(pred)
    target = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=pred.data.dtype)
    if target.shape != pred.shape:
        raise ShapeError(f"mse_loss: {pred.shape} vs {target.shape}")
    diff = pred.data - target
    return _make(np.asarray(np.mean(diff * diff)), (pred,), lambda g: (g * 2.0 * diff / diff.size,))


def dropout(x: Tensor, p: float, train_mode: bool, seed=None) -> Tensor:
    """Inverted dropout. Identity when not training or p == 0.

    ``seed`` is an int or a ``numpy.random.Generator``.
    """
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability {p} not in [0, 1)")
    x = _as_tensor(x)
    if not train_mode or p == 0.0:
        return x
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return _make(x.data * keep, (x,), lambda g: (g * keep,))


# ------------------------------------------------------------------- backward

def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every reachable leaf.

    Gradients add onto existing ``grad`` arrays; call :func:`zero_grads`
    between steps.
    """
    if loss.size != 1 or loss.ndim != 0:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("loss is not on the tape (no input requires grad)")
    nodes: list[Tensor] = []
    seen: set[int] = set()
    stack_ = [loss]
    while stack_:
        t = stack_.pop()
        if id(t) in seen:
            continue
        seen.add(id(t))
        if t._backward is not None:
            nodes.append(t)
            stack_.extend(p for p in t._parents if p.requires_grad)
    nodes.sort(key=lambda t: t._seq)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            if parent._backward is None:
                if parent.grad is None:
                    parent.grad = np.array(pg, dtype=parent.data.dtype)
                else:
                    parent.grad += pg
            else:
                key = id(parent)
                grads[key] = grads[key] + pg if key in grads else pg


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


# ------------------------------------------------------------------ gradcheck

@dataclass
class GradCheckReport:
    max_rel_error: float
    max_abs_error: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tol


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, step: float = 1e-5, tol: float = 1e-4,
               floor: float = 1e-6, indices: Sequence[int] | None = None) -> GradCheckReport:
    """Compare the analytic gradient of scalar ``f`` at ``x`` with central differences.

    Relative error per entry is ``|a - n| / max(|a|, |n|, floor)``. ``indices``
    (flat) restricts the comparison to those entries; default is all of them.
    """
    x.grad = None
    x.requires_grad = True
    out = f(x)
    backward(out)
    analytic = np.zeros(x.size) if x.grad is None else x.grad.reshape(-1).copy()
    x.grad = None
    flat = x.data.reshape(-1)
    idx = np.arange(flat.size) if indices is None else np.asarray(indices, dtype=np.int64)
    numeric = np.zeros(idx.size)
    with no_grad():
        for j, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + step
            fp = f(x).item()
            flat[i] = orig - step
            fm = f(x).item()
            flat[i] = orig
            numeric[j] = (fp - fm) / (2.0 * step)
    a = analytic[idx]
    abs_err = np.abs(a - numeric)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), floor)
    return GradCheckReport(float((abs_err / denom).max(initial=0.0)), float(abs_err.max(initial=0.0)), tol)


# ------------------------------------------------------------------ optimizer

class Adam:
    """Adam with bias correction. State is keyed by parameter name for checkpointing."""

    def __init__(self, params: dict[str, Tensor], lr: float = 3e-4, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.0, clip_norm: float | None = None):
        self.params = params
        self.lr = lr
        self.betas = tuple(betas)
        self.eps = eps
        self.weight_decay = weight_decay
        self.clip_norm = clip_norm
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def zero_grad(self) -> None:
        zero_grads(self.params.values())

    def step(self) -> float:
        """Apply one update; returns the pre-clip global gradient norm."""
        grads = {k: p.grad for k, p in self.params.items() if p.grad is not None}
        norm = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
        factor = 1.0
        if self.clip_norm is not None and norm > self.clip_norm:
            factor = self.clip_norm / (norm + 1e-12)
        self.t += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for k, g in grads.items():
            p = self.params[k]
            g = g * factor
            m, v = self.m[k], self.v[k]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            if self.weight_decay and p.data.ndim > 1:
                update = update + self.weight_decay * p.data
            p.data -= (self.lr * update).astype(p.data.dtype)
        return norm

    def state_arrays(self, prefix: str = "opt.") -> dict[str, np.ndarray]:
        out = {f"{prefix}t": np.array(self.t, dtype=np.int64)}
        for k in self.params:
            out[f"{prefix}m.{k}"] = self.m[k]
            out[f"{prefix}v.{k}"] = self.v[k]
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray], prefix: str = "opt.") -> None:
        self.t = int(arrays[f"{prefix}t"])
        for k in self.params:
            self.m[k] = np.array(arrays[f"{prefix}m.{k}"], dtype=self.params[k].data.dtype)
            self.v[k] = np.array(arrays[f"{prefix}v.{k}"], dtype=self.params[k].data.dtype)


def adam_step(params: dict[str, Tensor], lr: float = 3e-4, betas=(0.9, 0.999), eps: float = 1e-8,
              state: Adam | None = None) -> Adam:
    """Functional form: one Adam update, creating optimizer state on first use."""
    if state is None:
        state = Adam(params, lr=lr, betas=betas, eps=eps)
    state.lr, state.betas, state.eps = lr, tuple(betas), eps
    state.step()
    return state
