"""Gradchecks for whole desk-scale transformer blocks (encoder, decoder, LM)."""
from __future__ import annotations

import numpy as np

from parahtr import nn
from parahtr import tensor as T
from parahtr.decoder import DecoderConfig, init_decoder
from parahtr.encoder import EncoderConfig, init_encoder
from parahtr.lm import LmConfig, init_lm


def _case(kind: str, seed: int = 0):
    """(inputs dict, scalar function of that dict) for one block."""
    rng = np.random.default_rng(seed)
    if kind == "encoder":
        cfg = EncoderConfig()
        params = init_encoder(cfg, seed)
        name, heads, t = "enc.block0", cfg.num_heads, 6
        inputs = {"x": rng.normal(size=(1, t, cfg.hidden_size))}

        def f(v):
            return nn.block(v["x"], params, name, heads)
    elif kind == "decoder":
        cfg = DecoderConfig()
        params = init_decoder(cfg, 12, seed)
        name, heads, t = "dec.block0", cfg.num_heads, 5
        inputs = {"x": rng.normal(size=(1, t, cfg.hidden_size)), "memory": rng.normal(size=(1, 7, cfg.hidden_size))}
        causal = np.tril(np.ones((t, t), dtype=bool))

        def f(v):
            mem = nn.key_values(v["memory"], params, f"{name}.xattn", heads)
            return nn.block(v["x"], params, name, heads, mask=causal, memory=mem)
    elif kind == "lm":
        cfg = LmConfig(vocab_size=12)
        params = init_lm(cfg, seed)
        name, heads, t = "lm.block0", cfg.num_heads, 6
        inputs = {"x": rng.normal(size=(1, t, cfg.hidden_size))}
        keys = np.array([True] * (t - 1) + [False])[None, None, None, :]  # last position is padding

        def f(v):
            return nn.block(v["x"], params, name, heads, mask=keys)
    else:
        raise ValueError(kind)
    w = rng.normal(size=(1, t, params[f"{name}.fc2.w"].shape[1]))
    targets = {k: T.tensor(a) for k, a in inputs.items()}
    targets.update({k: p for k, p in params.items() if k.startswith(name + ".")})
    return targets, lambda: T.sum_(T.mul(f(targets), w))


def block_gradcheck(kind: str, tol: float = 1e-3, step: float = 1e-5, per_tensor: int = 96,
                    floor: float = 1e-5) -> dict[str, T.GradCheckReport]:
    """Gradcheck every input and parameter tensor of one block; returns the report per tensor.

    Tensors with more than ``per_tensor`` entries are checked on a seeded random
    sample of that many entries. ``floor`` sits above the central-difference
    rounding noise (about 1e-9 on these outputs), so entries with near-zero
    gradients are judged by absolute error.
    """
    targets, loss = _case(kind)
    rng = np.random.default_rng(7)
    out = {}
    for key, tensor in targets.items():
        for other in targets.values():
            other.requires_grad = other is tensor
        n = tensor.size
        idx = None if n <= per_tensor else np.sort(rng.choice(n, per_tensor, replace=False))
        out[key] = T.grad_check(lambda _x: loss(), tensor, step=step, tol=tol, floor=floor, indices=idx)
    return out
