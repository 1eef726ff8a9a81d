"""Autoregressive transformer decoder over visual features.

Character-level output with ``<nl>`` tokens carrying line structure. Each
block is pre-norm: causal self-attention, cross-attention over every
visual token, GELU MLP.

The search routines (:func:`greedy_search`, :func:`beam_search`,
:func:`nucleus_search`) only need a ``step_fn`` mapping a batch of equal
length prefixes (A, t) to next-token logits (A, V), so they run equally on
the network and on hand-built toy models.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import nn
from . import tensor as T
from .encoder import VisualFeatures
from .tensor import ShapeError, Tensor
from .vocab import DECODER_SPECIALS

PAD_ID, BOS_ID, EOS_ID, NEWLINE_ID = range(len(DECODER_SPECIALS))
PREFIX = "dec."

StepFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class DecoderConfig:
    num_layers: int = 2
    hidden_size: int = 64
    num_heads: int = 4
    intermediate_size: int = 128
    max_output_length: int = 48
    dropout: float = 0.0

    def __post_init__(self) -> None:
        if self.hidden_size % self.num_heads:
            raise ValueError(f"hidden_size {self.hidden_size} not divisible by num_heads {self.num_heads}")
        if self.max_output_length < 1:
            raise ValueError("max_output_length must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")

    def check_encoder(self, encoder_hidden: int) -> None:
        if encoder_hidden != self.hidden_size:
            raise ValueError(f"decoder hidden_size {self.hidden_size} != encoder hidden_size {encoder_hidden}")


@dataclass
class TokenSequence:
    ids: list[int]
    confidences: list[float] = field(default_factory=list)
    truncated: bool = False
    log_prob: float = 0.0

    def score(self, alpha: float = 0.0) -> float:
        return length_normalized(self.log_prob, len(self.ids), alpha)


def length_normalized(log_prob: float, length: int, alpha: float) -> float:
    return log_prob / (max(length, 1) ** alpha)


# ------------------------------------------------------------------ params

def init_decoder(config: DecoderConfig, vocab_size: int, seed: int = 0) -> nn.Params:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 202]))
    d = config.hidden_size
    params: nn.Params = {
        "dec.tok_embed": T.parameter(rng.normal(0.0, 0.3, (vocab_size, d)), name="dec.tok_embed"),
        "dec.pos_embed": T.parameter(0.3 * nn.sincos_1d(config.max_output_length, d), name="dec.pos_embed"),
    }
    for i in range(config.num_layers):
        nn.init_block(params, f"dec.block{i}", d, config.intermediate_size, rng, cross=True)
    nn.init_norm(params, "dec.norm", d)
    nn.init_linear(params, "dec.out", d, vocab_size, rng, std=0.02)
    return params


def vocab_size_of(params: nn.Params) -> int:
    return params["dec.tok_embed"].shape[0]


# ----------------------------------------------------------------- forward

def prepare_memory(features: VisualFeatures, config: DecoderConfig, params: nn.Params) -> list[tuple[Tensor, Tensor]]:
    """Per-layer cross-attention keys/values, computed once per image batch."""
    mem = features.as_batch()
    config.check_encoder(mem.shape[-1])
    return [nn.key_values(mem, params, f"dec.block{i}.xattn", config.num_heads) for i in range(config.num_layers)]


def decoder_logits(ids: np.ndarray, memory: list[tuple[Tensor, Tensor]], config: DecoderConfig,
                   params: nn.Params, mode: str = "eval", rng: np.random.Generator | None = None) -> Tensor:
    """Logits (B, t, V) for input ids (B, t) under a causal mask."""
    ids = np.asarray(ids, dtype=np.int64)
    b, t = ids.shape
    if t > config.max_output_length:
        raise ValueError(f"input length {t} exceeds max_output_length {config.max_output_length}")
    train = mode == "train"
    if train and rng is None:
        rng = np.random.default_rng(0)
    x = T.add(T.embedding_lookup(params["dec.tok_embed"], ids), params["dec.pos_embed"][:t])
    x = T.dropout(x, config.dropout, train, rng)
    causal = np.tril(np.ones((t, t), dtype=bool))
    for i in range(config.num_layers):
        x = nn.block(x, params, f"dec.block{i}", config.num_heads, mask=causal, memory=memory[i],
                     dropout=config.dropout, train=train, rng=rng)
    return nn.linear(nn.norm(x, params, "dec.norm"), params, "dec.out")


def _as_id_batch(target) -> tuple[np.ndarray, bool]:
    arr = np.asarray(target, dtype=np.int64)
    if arr.ndim == 1:
        return arr[None], True
    if arr.ndim != 2:
        raise ShapeError(f"target ids must be 1-D or 2-D, got shape {arr.shape}")
    return arr, False


def forward_teacher_forced(features: VisualFeatures, target, config: DecoderConfig, params: nn.Params,
                           mode: str = "train", rng: np.random.Generator | None = None) -> Tensor:
    """Logits for each input position of ``target`` (which starts with BOS).

    Returns (t, V) for a single sequence, (B, t, V) for a batch.
    """
    ids, single = _as_id_batch(target)
    if ids.shape[1] == 0 or not (ids[:, 0] == BOS_ID).all():
        raise ValueError("target must begin with BOS")
    if ids.shape[1] > config.max_output_length:
        raise ValueError(f"target length {ids.shape[1]} exceeds max_output_length {config.max_output_length}")
    logits = decoder_logits(ids, prepare_memory(features, config, params), config, params, mode, rng)
    return T.reshape(logits, logits.shape[1:]) if single else logits


def make_batch(sequences: Sequence[Sequence[int]]) -> tuple[np.ndarray, np.ndarray]:
    """Teacher-forcing inputs ``[BOS] + ids`` and targets ``ids + [EOS]``, PAD-filled."""
    t = max(len(s) for s in sequences) + 1
    inp = np.full((len(sequences), t), PAD_ID, dtype=np.int64)
    tgt = np.full((len(sequences), t), PAD_ID, dtype=np.int64)
    for i, s in enumerate(sequences):
        inp[i, 0] = BOS_ID
        inp[i, 1:len(s) + 1] = s
        tgt[i, :len(s)] = s
        tgt[i, len(s)] = EOS_ID
    return inp, tgt


def sequence_loss(features: VisualFeatures, sequences: Sequence[Sequence[int]], config: DecoderConfig,
                  params: nn.Params, mode: str = "train", rng: np.random.Generator | None = None,
                  inputs: np.ndarray | None = None) -> Tensor:
    """Teacher-forced cross-entropy; ``inputs`` overrides the decoder inputs (scheduled sampling)."""
    inp, tgt = make_batch(sequences)
    if inputs is not None:
        inp = inputs
    logits = decoder_logits(inp, prepare_memory(features, config, params), config, params, mode, rng)
    return T.cross_entropy(logits, tgt, ignore_id=PAD_ID)


# ------------------------------------------------------- scheduled sampling

def scheduled_inputs(features: VisualFeatures, target, epsilon: float, seed, config: DecoderConfig,
                     params: nn.Params) -> tuple[np.ndarray, np.ndarray]:
    """Mix ground truth and model predictions into decoder inputs.

    Position t > 0 keeps the ground-truth token with probability ``epsilon``;
    otherwise it takes the argmax prediction made at position t - 1 by an
    eval-mode teacher-forced pass. Returns (inputs, used_truth) where
    ``used_truth`` is False at BOS and PAD positions.
    """
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon must be in [0, 1], got {epsilon}")
    ids, single = _as_id_batch(target)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    draw = rng.random(ids.shape) < epsilon
    real = ids != PAD_ID
    real[:, 0] = False
    if epsilon == 1.0:
        return (ids[0].copy(), real[0]) if single else (ids.copy(), real)
    with T.no_grad():
        logits = decoder_logits(ids, prepare_memory(features, config, params), config, params, "eval")
    pred = np.argmax(logits.data, axis=-1)
    mixed = ids.copy()
    swap = real & ~draw
    mixed[:, 1:][swap[:, 1:]] = pred[:, :-1][swap[:, 1:]]
    used = real & draw
    return (mixed[0], used[0]) if single else (mixed, used)


def scheduled_sampling_forward(features: VisualFeatures, target, epsilon: float, seed, config: DecoderConfig,
                               params: nn.Params, mode: str = "train",
                               rng: np.random.Generator | None = None) -> tuple[Tensor, np.ndarray]:
    """Logits on scheduled-sampling inputs, plus the ground-truth usage mask."""
    mixed, used = scheduled_inputs(features, target, epsilon, seed, config, params)
    ids, single = _as_id_batch(mixed)
    logits = decoder_logits(ids, prepare_memory(features, config, params), config, params, mode, rng)
    if single:
        return T.reshape(logits, logits.shape[1:]), used
    return logits, used


def epsilon_schedule(epoch: int, total_epochs: int, schedule: str = "linear", floor: float = 0.5,
                     k: float = 5.0) -> float:
    """Probability of feeding ground truth at ``epoch``: 1.0 at epoch 0, non-increasing, >= floor."""
    if not 0 <= epoch < total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {total_epochs})")
    if total_epochs == 1:
        return 1.0
    if schedule == "linear":
        return 1.0 - (1.0 - floor) * epoch / (total_epochs - 1)
    if schedule == "inverse_sigmoid":
        g = k / (k + math.exp(epoch / k))
        return floor + (1.0 - floor) * g / (k / (k + 1.0))
    raise ValueError(f"unknown schedule {schedule!r}")


# ------------------------------------------------------------------ search

def _log_softmax(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def greedy_search(step_fn: StepFn, max_len: int) -> TokenSequence:
    ids = [BOS_ID]
    out = TokenSequence(ids=[], truncated=True)
    for _ in range(max_len):
        logp = _log_softmax(step_fn(np.array([ids]))[0])
        tok = int(np.argmax(logp))  # first maximum == lowest id
        out.ids.append(tok)
        out.confidences.append(float(np.exp(logp[tok])))
        out.log_prob += float(logp[tok])
        ids.append(tok)
        if tok == EOS_ID:
            out.truncated = False
            break
    return out


def beam_search(step_fn: StepFn, width: int, alpha: float, max_len: int) -> TokenSequence:
    """Shrinking-beam search ranked by ``log P / len**alpha``.

    At each step the best ``width - finished`` expansions survive; those
    ending in EOS are frozen. Candidates are ordered by cumulative log
    probability; ties (including ones created by rounding the running sum)
    go to the larger step log probability, then the earlier hypothesis,
    then the lower id.
    """
    if width < 1:
        raise ValueError("beam width must be >= 1")
    active = [TokenSequence(ids=[])]
    finished: list[TokenSequence] = []
    for _ in range(max_len):
        k = width - len(finished)
        if k <= 0 or not active:
            break
        prefixes = np.array([[BOS_ID] + h.ids for h in active])
        logp = _log_softmax(step_fn(prefixes))
        v = logp.shape[1]
        totals = np.array([h.log_prob for h in active])[:, None] + logp
        flat_idx = np.arange(totals.size)
        order = np.lexsort((flat_idx, -logp.reshape(-1), -totals.reshape(-1)))[:k]
        nxt = []
        for flat in order:
            a, tok = divmod(int(flat), v)
            h = active[a]
            cand = TokenSequence(ids=h.ids + [tok], confidences=h.confidences + [float(np.exp(logp[a, tok]))],
                                 log_prob=float(totals[a, tok]))
            (finished if tok == EOS_ID else nxt).append(cand)
        active = nxt
    for h in active:
        h.truncated = True
    pool = finished or active
    best = pool[0]
    for h in pool[1:]:
        if h.score(alpha) > best.score(alpha):
            best = h
    return best


def nucleus_filter(probs: np.ndarray, top_p: float) -> np.ndarray:
    """Renormalised distribution over the smallest prefix (by descending prob) with mass >= top_p."""
    order = np.argsort(-probs, kind="stable")
    cum = np.cumsum(probs[order])
    cut = min(int(np.searchsorted(cum, top_p)), len(probs) - 1)
    keep = order[:cut + 1]
    out = np.zeros_like(probs)
    out[keep] = probs[keep]
    return out / out.sum()


def nucleus_search(step_fn: StepFn, top_p: float, temperature: float, rng: np.random.Generator,
                   max_len: int) -> TokenSequence:
    if not 0.0 < top_p <= 1.0:
        raise ValueError(f"top_p must be in (0, 1], got {top_p}")
    if temperature <= 0.0:
        raise ValueError(f"temperature must be > 0, got {temperature}")
    ids = [BOS_ID]
    out = TokenSequence(ids=[], truncated=True)
    for _ in range(max_len):
        logits = step_fn(np.array([ids]))[0]
        base = np.exp(_log_softmax(logits))
        dist = nucleus_filter(np.exp(_log_softmax(logits / temperature)), top_p)
        tok = int(np.searchsorted(np.cumsum(dist), rng.random(), side="right"))
        tok = min(tok, len(dist) - 1)
        while dist[tok] == 0.0:  # guard against cumsum round-off landing on a dropped entry
            tok -= 1
        out.ids.append(tok)
        out.confidences.append(float(base[tok]))
        out.log_prob += float(np.log(base[tok]))
        ids.append(tok)
        if tok == EOS_ID:
            out.truncated = False
            break
    return out


# -------------------------------------------------------- network wrappers

def step_function(features: VisualFeatures, config: DecoderConfig, params: nn.Params) -> StepFn:
    memory = prepare_memory(features, config, params)

    def step(prefixes: np.ndarray) -> np.ndarray:
        with T.no_grad():
            return decoder_logits(prefixes, memory, config, params, "eval").data[:, -1]
    return step


def _single(features: VisualFeatures) -> VisualFeatures:
    if features.batched and features.tokens.shape[0] != 1:
        raise ShapeError("generation expects features of a single image")
    return features


def generate_greedy(features: VisualFeatures, config: DecoderConfig, params: nn.Params,
                    max_len: int | None = None) -> TokenSequence:
    with T.no_grad():
        return greedy_search(step_function(_single(features), config, params), max_len or config.max_output_length)


def generate_beam(features: VisualFeatures, config: DecoderConfig, params: nn.Params, width: int = 4,
                  length_norm_alpha: float = 0.7, max_len: int | None = None) -> TokenSequence:
    """Beam search; the greedy hypothesis is also scored so the result never ranks below it."""
    with T.no_grad():
        step = step_function(_single(features), config, params)
        max_len = max_len or config.max_output_length
        best = beam_search(step, width, length_norm_alpha, max_len)
        if width > 1:
            greedy = greedy_search(step, max_len)
            if (greedy.truncated, -greedy.score(length_norm_alpha)) < (best.truncated, -best.score(length_norm_alpha)):
                best = greedy
        return best


def generate_nucleus(features: VisualFeatures, config: DecoderConfig, params: nn.Params, top_p: float = 0.9,
                     temperature: float = 1.0, seed=0, max_len: int | None = None) -> TokenSequence:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    with T.no_grad():
        return nucleus_search(step_function(_single(features), config, params), top_p, temperature, rng,
                              max_len or config.max_output_length)


def generate_greedy_batch(features: VisualFeatures, config: DecoderConfig, params: nn.Params,
                          max_len: int | None = None) -> list[TokenSequence]:
    """Greedy decoding for a batch of images at once (same argmax rule as :func:`generate_greedy`)."""
    max_len = max_len or config.max_output_length
    with T.no_grad():
        memory = prepare_memory(features, config, params)
        b = memory[0][0].shape[0]
        ids = np.full((b, 1), BOS_ID, dtype=np.int64)
        outs = [TokenSequence(ids=[], truncated=True) for _ in range(b)]
        live = np.ones(b, dtype=bool)
        for _ in range(max_len):
            logp = _log_softmax(decoder_logits(ids, memory, config, params, "eval").data[:, -1])
            tok = np.argmax(logp, axis=-1)
            for i in np.nonzero(live)[0]:
                t = int(tok[i])
                outs[i].ids.append(t)
                outs[i].confidences.append(float(np.exp(logp[i, t])))
                outs[i].log_prob += float(logp[i, t])
                if t == EOS_ID:
                    outs[i].truncated = False
                    live[i] = False
            if not live.any():
                break
            ids = np.concatenate([ids, tok[:, None]], axis=1)
        return outs


def strip_eos(seq: TokenSequence) -> tuple[list[int], list[float]]:
    """Ids and confidences of the text tokens only (EOS removed)."""
    if seq.ids and seq.ids[-1] == EOS_ID:
        return seq.ids[:-1], seq.confidences[:-1]
    return list(seq.ids), list(seq.confidences)


def with_max_length(config: DecoderConfig, n: int) -> DecoderConfig:
    return replace(config, max_output_length=n)
