"""Primitive-op gradcheck cases shared by the unit and acceptance suites.

Each case maps an input tensor to a scalar through the op under test and a
fixed random projection, so every output entry contributes to the gradient.
"""
from __future__ import annotations

import numpy as np

from parahtr import tensor as T

_rng = np.random.default_rng(1234)
A = _rng.normal(size=(3, 4))
B = _rng.normal(size=(4, 5))
B3 = _rng.normal(size=(2, 4, 3))
C = _rng.normal(size=(3, 2))
V = _rng.normal(size=(4,))
G, BETA = _rng.normal(size=(4,)) + 1.0, _rng.normal(size=(4,))
EMB_IDS = np.array([[0, 2, 2], [4, 1, 0]])
TARGETS = np.array([1, 0, 3])
MASK = np.array([[True, False, True, True]] * 3)


def proj(y: T.Tensor) -> T.Tensor:
    w = np.random.default_rng(y.size).normal(size=y.shape)
    return T.sum_(T.mul(y, w))


def _pos(x):
    # keep log/div away from zero and numerical kinks
    return T.add(T.mul(x, x), 0.5)


# name -> (input shape, function of the input tensor returning a scalar)
CASES = {
    "add": ((3, 4), lambda x: proj(T.add(x, V))),
    "sub": ((3, 4), lambda x: proj(T.sub(A, x))),
    "mul": ((3, 4), lambda x: proj(T.mul(x, x))),
    "div": ((3, 4), lambda x: proj(T.div(A, _pos(x)))),
    "scale": ((3, 4), lambda x: proj(T.scale(x, -2.5))),
    "neg": ((3, 4), lambda x: proj(T.neg(x))),
    "exp": ((3, 4), lambda x: proj(T.exp(x))),
    "log": ((3, 4), lambda x: proj(T.log(_pos(x)))),
    "tanh": ((3, 4), lambda x: proj(T.tanh(x))),
    "relu": ((3, 4), lambda x: proj(T.relu(T.add(x, 0.05)))),
    "gelu": ((3, 4), lambda x: proj(T.gelu(x))),
    "where_mask": ((3, 4), lambda x: proj(T.where_mask(MASK, x, -1.0))),
    "matmul": ((3, 4), lambda x: proj(T.matmul(x, B))),
    "matmul_batched": ((3, 2), lambda x: proj(T.matmul(B3, x))),
    "matmul_batched_lhs": ((2, 4, 3), lambda x: proj(T.matmul(x, C))),
    "transpose": ((3, 4), lambda x: proj(T.transpose(x))),
    "reshape": ((3, 4), lambda x: proj(T.reshape(x, (2, 6)))),
    "concat": ((3, 4), lambda x: proj(T.concat([x, T.mul(x, x)], axis=1))),
    "stack": ((3, 4), lambda x: proj(T.stack([x, T.exp(x)], axis=0))),
    "slice": ((3, 4), lambda x: proj(x[1:, ::2])),
    "slice_fancy": ((3, 4), lambda x: proj(x[np.array([0, 2, 0])])),
    "embedding_lookup": ((5, 3), lambda x: proj(T.embedding_lookup(x, EMB_IDS))),
    "sum": ((3, 4), lambda x: proj(T.sum_(T.mul(x, x), axis=0))),
    "mean": ((3, 4), lambda x: proj(T.mean(T.mul(x, x), axis=1, keepdims=True))),
    "softmax": ((3, 4), lambda x: proj(T.softmax(x, -1))),
    "softmax_masked": ((3, 4), lambda x: proj(T.softmax(x, -1, mask=MASK))),
    "log_softmax": ((3, 4), lambda x: proj(T.log_softmax(x, -1))),
    "layer_norm_x": ((3, 4), lambda x: proj(T.layer_norm(x, T.Tensor(G), T.Tensor(BETA)))),
    "layer_norm_gamma": ((4,), lambda g: proj(T.layer_norm(T.Tensor(A), g, T.Tensor(BETA)))),
    "cross_entropy": ((3, 4), lambda x: T.cross_entropy(x, TARGETS)),
    "cross_entropy_ignore": ((3, 4), lambda x: T.cross_entropy(x, TARGETS, ignore_id=0)),
    "mse_loss": ((3, 4), lambda x: T.mse_loss(x, A)),
    "dropout": ((3, 4), lambda x: proj(T.dropout(x, 0.3, True, 7))),
}


def start(shape, seed: int = 0) -> T.Tensor:
    return T.Tensor(np.random.default_rng(seed).normal(size=shape) * 0.8)
