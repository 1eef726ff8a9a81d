"""Encoder-only masked language model used to refine decoder output.

Refinement substitutes characters only: low-confidence positions are masked
and re-predicted from their bidirectional context, one text line at a time.
Newlines and characters at or above the confidence threshold are never
touched, so the output has the same length and line structure as the input.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from . import nn
from . import tensor as T
from .tensor import Tensor
from .vocab import LmTokenizer

PREFIX = "lm."


@dataclass(frozen=True)
class LmConfig:
    num_layers: int = 2
    hidden_size: int = 64
    num_heads: int = 4
    intermediate_size: int = 256
    max_seq_length: int = 64
    dropout: float = 0.1
    vocab_size: int = 0
    position_embedding: str = "absolute"

    def __post_init__(self) -> None:
        if self.hidden_size % self.num_heads:
            raise ValueError(f"hidden_size {self.hidden_size} not divisible by num_heads {self.num_heads}")
        if self.position_embedding != "absolute":
            raise ValueError("only absolute position embeddings are supported")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.max_seq_length < 3:
            raise ValueError("max_seq_length must leave room for BOS/EOS")

    @classmethod
    def paper(cls) -> "LmConfig":
        return cls(num_layers=6, hidden_size=768, num_heads=12, intermediate_size=3072, max_seq_length=512,
                   dropout=0.10, vocab_size=50_026)

    def for_tokenizer(self, tok: LmTokenizer) -> "LmConfig":
        return replace(self, vocab_size=len(tok))


def init_lm(config: LmConfig, seed: int = 0) -> nn.Params:
    if config.vocab_size <= 0:
        raise ValueError("LmConfig.vocab_size must be set (see LmConfig.for_tokenizer)")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 303]))
    d = config.hidden_size
    params: nn.Params = {
        "lm.tok_embed": T.parameter(rng.normal(0.0, 0.3, (config.vocab_size, d)), name="lm.tok_embed"),
        "lm.pos_embed": T.parameter(0.3 * nn.sincos_1d(config.max_seq_length, d), name="lm.pos_embed"),
    }
    for i in range(config.num_layers):
        nn.init_block(params, f"lm.block{i}", d, config.intermediate_size, rng)
    nn.init_norm(params, "lm.norm", d)
    nn.init_linear(params, "lm.head", d, config.vocab_size, rng, std=0.02)
    return params


def lm_logits(ids: np.ndarray, config: LmConfig, params: nn.Params, mode: str = "eval",
              rng: np.random.Generator | None = None, pad_id: int | None = None) -> Tensor:
    """Bidirectional logits (B, t, V); keys equal to ``pad_id`` are not attended."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim == 1:
        ids = ids[None]
    b, t = ids.shape
    if t > config.max_seq_length:
        raise ValueError(f"sequence length {t} exceeds max_seq_length {config.max_seq_length}")
    train = mode == "train"
    if train and rng is None:
        rng = np.random.default_rng(0)
    mask = None if pad_id is None else (ids != pad_id)[:, None, None, :]
    x = T.add(T.embedding_lookup(params["lm.tok_embed"], ids), params["lm.pos_embed"][:t])
    x = T.dropout(x, config.dropout, train, rng)
    for i in range(config.num_layers):
        x = nn.block(x, params, f"lm.block{i}", config.num_heads, mask=mask, dropout=config.dropout,
                     train=train, rng=rng)
    return nn.linear(nn.norm(x, params, "lm.norm"), params, "lm.head")


# ---------------------------------------------------------------------- MLM

@dataclass
class MlmCorruption:
    ids: np.ndarray
    positions: np.ndarray
    empty: bool = False


def mlm_corrupt(ids: Sequence[int], mask_prob: float, seed, tokenizer: LmTokenizer) -> MlmCorruption:
    """Select non-special positions with prob ``mask_prob``; 80% -> MASK, 10% random, 10% kept."""
    if not 0.0 < mask_prob < 1.0:
        raise ValueError(f"mask_prob must be in (0, 1), got {mask_prob}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    ids = np.array(ids, dtype=np.int64)
    eligible = ~np.isin(ids, list(tokenizer.special_ids))
    chosen = eligible & (rng.random(ids.shape) < mask_prob)
    if not chosen.any():
        chosen = eligible & (rng.random(ids.shape) < mask_prob)
    positions = np.nonzero(chosen)[0]
    out = ids.copy()
    u = rng.random(positions.size)
    n_special = len(tokenizer.specials)
    randoms = rng.integers(n_special, len(tokenizer), size=positions.size)
    out[positions[u < 0.8]] = tokenizer.mask_id
    swap = (u >= 0.8) & (u < 0.9)
    out[positions[swap]] = randoms[swap]
    return MlmCorruption(out, positions, empty=positions.size == 0)


@dataclass
class MlmLoss:
    value: Tensor | None
    num_targets: int

    @property
    def skipped(self) -> bool:
        return self.value is None


def mlm_batch_loss(lines: Sequence[str], config: LmConfig, params: nn.Params, tokenizer: LmTokenizer,
                   mask_prob: float = 0.15, seed=0, mode: str = "train") -> MlmLoss:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    encoded = [tokenizer.encode_text(line) for line in lines]
    t = max(len(e) for e in encoded)
    if t > config.max_seq_length:
        raise ValueError(f"tokenised length {t} exceeds max_seq_length {config.max_seq_length}")
    inp = np.full((len(encoded), t), tokenizer.pad_id, dtype=np.int64)
    tgt = np.full((len(encoded), t), tokenizer.pad_id, dtype=np.int64)
    n = 0
    for i, e in enumerate(encoded):
        c = mlm_corrupt(e, mask_prob, rng, tokenizer)
        inp[i, :len(e)] = c.ids
        tgt[i, c.positions] = np.asarray(e)[c.positions]
        n += c.positions.size
    if n == 0:
        return MlmLoss(None, 0)
    logits = lm_logits(inp, config, params, mode, rng, pad_id=tokenizer.pad_id)
    return MlmLoss(T.cross_entropy(logits, tgt, ignore_id=tokenizer.pad_id), n)


def mlm_loss(text: str, config: LmConfig, params: nn.Params, tokenizer: LmTokenizer, mask_prob: float = 0.15,
             seed=0, mode: str = "train") -> MlmLoss:
    """Cross-entropy over the corrupted positions of one line; skipped (value None) if none were selected."""
    return mlm_batch_loss([text], config, params, tokenizer, mask_prob, seed, mode)


def masked_probabilities(ids: Sequence[int], config: LmConfig, params: nn.Params) -> np.ndarray:
    """Softmax over the vocabulary at every position (eval mode)."""
    with T.no_grad():
        logits = lm_logits(np.asarray(ids)[None], config, params, "eval").data[0]
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


# ------------------------------------------------------------------- refine

@dataclass
class RefineResult:
    text: str
    confidences: list[float]
    lm_calls: int


def _refine_line(chars: list[str], conf: list[float], threshold: float, max_rounds: int, config: LmConfig,
                 params: nn.Params, tok: LmTokenizer) -> int:
    """Refine one line in place; returns the number of LM forward passes."""
    low = [i for i, c in enumerate(conf) if c < threshold]
    if not low or max_rounds <= 0:
        return 0
    window = config.max_seq_length - 2
    banned = np.array(sorted(tok.special_ids))
    settled: set[int] = set()
    calls = 0
    for rnd in range(max_rounds):
        pending = [i for i in low if i not in settled]
        if not pending:
            break
        ids = [tok.index.get(c, tok.unk_id) for c in chars]
        for i in pending:
            ids[i] = tok.mask_id
        # round 0 never compares against the input: masked characters must not steer the result
        changed = rnd == 0
        for start in range(0, len(chars), window):
            span = [i for i in pending if start <= i < start + window]
            if not span:
                continue
            probs = masked_probabilities([tok.bos_id] + ids[start:start + window] + [tok.eos_id], config, params)
            calls += 1
            for i in span:
                p = probs[i - start + 1].copy()
                p[banned] = -1.0
                best = int(np.argmax(p))
                sym = tok.symbols[best]
                if sym != chars[i]:
                    changed = True
                chars[i] = sym
                conf[i] = float(p[best])
                if p[best] >= threshold:
                    settled.add(i)
        if not changed:
            break
    return calls


def refine(text: str, confidences: Sequence[float], threshold: float = 0.5, max_rounds: int = 2,
           config: LmConfig | None = None, params: nn.Params | None = None,
           tokenizer: LmTokenizer | None = None) -> RefineResult:
    """Mask-and-repredict every character whose decoder confidence is below ``threshold``.

    ``confidences`` has one entry per character of ``text`` (newlines included).
    Each round re-masks positions the LM is still unsure about, with already
    settled predictions as context; stops after ``max_rounds`` or at a fixed point.
    """
    if len(confidences) != len(text):
        raise ValueError(f"{len(confidences)} confidences for {len(text)} decoder tokens")
    lines = text.split("\n")
    out_conf = list(map(float, confidences))
    if max_rounds <= 0 or all(c >= threshold for c, ch in zip(out_conf, text) if ch != "\n"):
        return RefineResult(text, out_conf, 0)
    if config is None or params is None or tokenizer is None:
        raise ValueError("refinement with low-confidence tokens needs an LM config, params and tokenizer")
    calls = 0
    pos = 0
    out_lines = []
    for line in lines:
        chars = list(line)
        conf = out_conf[pos:pos + len(line)]
        calls += _refine_line(chars, conf, threshold, max_rounds, config, params, tokenizer)
        out_conf[pos:pos + len(line)] = conf
        out_lines.append("".join(chars))
        pos += len(line) + 1
    return RefineResult("\n".join(out_lines), out_conf, calls)
