"""Functional transformer layers over a flat ``{name: Tensor}`` parameter dict."""
from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .tensor import Tensor

Params = dict[str, Tensor]


def init_linear(params: Params, name: str, d_in: int, d_out: int, rng: np.random.Generator,
                std: float | None = None, bias: bool = True) -> None:
    if std is None:
        lim = math.sqrt(6.0 / (d_in + d_out))
        w = rng.uniform(-lim, lim, size=(d_in, d_out))
    else:
        w = rng.normal(0.0, std, size=(d_in, d_out))
    params[f"{name}.w"] = T.parameter(w, name=f"{name}.w")
    if bias:
        params[f"{name}.b"] = T.parameter(np.zeros(d_out), name=f"{name}.b")


def init_norm(params: Params, name: str, dim: int) -> None:
    params[f"{name}.g"] = T.parameter(np.ones(dim), name=f"{name}.g")
    params[f"{name}.b"] = T.parameter(np.zeros(dim), name=f"{name}.b")


def linear(x: Tensor, params: Params, name: str) -> Tensor:
    y = T.matmul(x, params[f"{name}.w"])
    b = params.get(f"{name}.b")
    return y if b is None else T.add(y, b)


def norm(x: Tensor, params: Params, name: str) -> Tensor:
    return T.layer_norm(x, params[f"{name}.g"], params[f"{name}.b"])


def split_heads(x: Tensor, heads: int) -> Tensor:
    b, t, d = x.shape
    return T.transpose(T.reshape(x, (b, t, heads, d // heads)), (0, 2, 1, 3))


def merge_heads(x: Tensor) -> Tensor:
    b, h, t, dh = x.shape
    return T.reshape(T.transpose(x, (0, 2, 1, 3)), (b, t, h * dh))


def key_values(src: Tensor, params: Params, name: str, heads: int) -> tuple[Tensor, Tensor]:
    return (split_heads(linear(src, params, f"{name}.k"), heads),
            split_heads(linear(src, params, f"{name}.v"), heads))


def attention(xq: Tensor, params: Params, name: str, heads: int, kv: tuple[Tensor, Tensor] | None = None,
              xkv: Tensor | None = None, mask: np.ndarray | None = None, dropout: float = 0.0,
              train: bool = False, rng: np.random.Generator | None = None) -> Tensor:
    """Multi-head scaled dot-product attention.

    Keys/values come from ``kv`` (precomputed) or are projected from ``xkv``
    (defaults to ``xq``). ``mask`` is boolean, True where attention is allowed,
    broadcastable to (batch, heads, queries, keys).
    """
    q = split_heads(linear(xq, params, f"{name}.q"), heads)
    if kv is None:
        kv = key_values(xq if xkv is None else xkv, params, name, heads)
    k, v = kv
    dh = q.shape[-1]
    scores = T.scale(T.matmul(q, T.transpose(k)), 1.0 / math.sqrt(dh))
    probs = T.softmax(scores, axis=-1, mask=mask)
    probs = T.dropout(probs, dropout, train, rng)
    return linear(merge_heads(T.matmul(probs, v)), params, f"{name}.o")


def init_attention(params: Params, name: str, dim: int, rng: np.random.Generator) -> None:
    for part in ("q", "k", "v", "o"):
        init_linear(params, f"{name}.{part}", dim, dim, rng)


def init_block(params: Params, name: str, dim: int, hidden: int, rng: np.random.Generator,
               cross: bool = False) -> None:
    init_norm(params, f"{name}.ln1", dim)
    init_attention(params, f"{name}.attn", dim, rng)
    if cross:
        init_norm(params, f"{name}.ln2", dim)
        init_attention(params, f"{name}.xattn", dim, rng)
    init_norm(params, f"{name}.ln3", dim)
    init_linear(params, f"{name}.fc1", dim, hidden, rng)
    init_linear(params, f"{name}.fc2", hidden, dim, rng)


def block(x: Tensor, params: Params, name: str, heads: int, mask: np.ndarray | None = None,
          memory: tuple[Tensor, Tensor] | None = None, dropout: float = 0.0, train: bool = False,
          rng: np.random.Generator | None = None) -> Tensor:
    """Pre-norm transformer block: self-attention, optional cross-attention, GELU MLP."""
    h = norm(x, params, f"{name}.ln1")
    h = attention(h, params, f"{name}.attn", heads, mask=mask, dropout=dropout, train=train, rng=rng)
    x = T.add(x, T.dropout(h, dropout, train, rng))
    if memory is not None:
        h = norm(x, params, f"{name}.ln2")
        h = attention(h, params, f"{name}.xattn", heads, kv=memory, dropout=dropout, train=train, rng=rng)
        x = T.add(x, T.dropout(h, dropout, train, rng))
    h = norm(x, params, f"{name}.ln3")
    h = linear(T.gelu(linear(h, params, f"{name}.fc1")), params, f"{name}.fc2")
    return T.add(x, T.dropout(h, dropout, train, rng))


def sincos_1d(length: int, dim: int) -> np.ndarray:
    pos = np.arange(length)[:, None]
    freq = np.exp(-math.log(10000.0) * np.arange(0, dim, 2) / dim)
    out = np.zeros((length, dim))
    out[:, 0::2] = np.sin(pos * freq)
    out[:, 1::2] = np.cos(pos * freq[: dim // 2])
    return out


def sincos_2d(rows: int, cols: int, dim: int) -> np.ndarray:
    """Half the channels encode the row, half the column."""
    half = dim // 2
    r = sincos_1d(rows, half)
    c = sincos_1d(cols, dim - half)
    return np.concatenate([np.repeat(r, cols, axis=0), np.tile(c, (rows, 1))], axis=1)


def count_parameters(params: Params) -> int:
    return int(sum(p.size for p in params.values()))
