"""DeiT-style vision transformer encoder.

Token layout is fixed: ``[class, distill, patch_1 ... patch_N]`` with patches
in row-major order. Pixels enter the model as ink intensity ``1 - image``
(background 0, ink near 1); masked-image-modeling targets use the same
normalisation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Protocol

import numpy as np

from . import nn
from . import tensor as T
from .data.preprocess import bilinear_resize
from .tensor import ShapeError, Tensor

PREFIX = "enc."


@dataclass(frozen=True)
class EncoderConfig:
    image_size: int = 128
    patch_size: int = 16
    hidden_size: int = 64
    num_layers: int = 2
    num_heads: int = 4
    intermediate_size: int = 128
    encoder_stride: int = 16
    dropout: float = 0.0
    channels: int = 1
    num_classes: int = 10
    mask_ratio: float = 0.4
    desk_scale: bool = True

    def __post_init__(self) -> None:
        if self.image_size % self.patch_size:
            raise ValueError(f"image_size {self.image_size} not divisible by patch_size {self.patch_size}")
        if self.hidden_size % self.num_heads:
            raise ValueError(f"hidden_size {self.hidden_size} not divisible by num_heads {self.num_heads}")
        if self.encoder_stride != self.patch_size:
            raise ValueError("encoder_stride must equal patch_size (non-overlapping patches)")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if not 0.0 < self.mask_ratio < 1.0:
            raise ValueError("mask_ratio must be in (0, 1)")

    @classmethod
    def paper(cls, image_size: int = 224) -> "EncoderConfig":
        return cls(image_size=image_size, patch_size=16, hidden_size=768, num_layers=12, num_heads=12,
                   intermediate_size=3072, encoder_stride=16, desk_scale=False)

    @classmethod
    def desk(cls, **overrides) -> "EncoderConfig":
        return replace(cls(), **overrides)

    @property
    def grid(self) -> int:
        return self.image_size // self.patch_size

    @property
    def num_patches(self) -> int:
        return self.grid ** 2

    @property
    def patch_dim(self) -> int:
        return self.patch_size ** 2 * self.channels


@dataclass
class VisualFeatures:
    tokens: Tensor  # (2 + N, D) or (B, 2 + N, D)
    patch_grid: tuple[int, int]

    @property
    def batched(self) -> bool:
        return self.tokens.ndim == 3

    def as_batch(self) -> Tensor:
        return self.tokens if self.batched else T.reshape(self.tokens, (1,) + self.tokens.shape)


# ------------------------------------------------------------------ patches

def patchify(image: np.ndarray, config: EncoderConfig) -> np.ndarray:
    """(..., S, S) -> (..., N, p*p) in row-major patch order; lossless."""
    img = np.asarray(image)
    s, p = config.image_size, config.patch_size
    if img.shape[-2:] != (s, s):
        raise ShapeError(f"expected {s}x{s} image, got {img.shape[-2:]}")
    g = s // p
    lead = img.shape[:-2]
    x = img.reshape(lead + (g, p, g, p))
    x = np.swapaxes(x, -3, -2)
    return x.reshape(lead + (g * g, p * p))


def unpatchify(patches: np.ndarray, config: EncoderConfig) -> np.ndarray:
    x = np.asarray(patches)
    p, g = config.patch_size, config.grid
    lead = x.shape[:-2]
    x = x.reshape(lead + (g, g, p, p))
    x = np.swapaxes(x, -3, -2)
    return x.reshape(lead + (g * p, g * p))


def normalize_pixels(image: np.ndarray) -> np.ndarray:
    return 1.0 - np.asarray(image, dtype=T.get_default_dtype())


# ------------------------------------------------------------------- params

def init_encoder(config: EncoderConfig, seed: int = 0) -> nn.Params:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 101]))
    d = config.hidden_size
    params: nn.Params = {}
    nn.init_linear(params, "enc.patch", config.patch_dim, d, rng)
    for tok in ("cls_token", "distill_token", "mask_token"):
        params[f"enc.{tok}"] = T.parameter(rng.normal(0.0, 0.02, d), name=f"enc.{tok}")
    pos = np.zeros((2 + config.num_patches, d))
    pos[2:] = nn.sincos_2d(config.grid, config.grid, d)
    pos[:2] = rng.normal(0.0, 0.02, (2, d))
    params["enc.pos_embed"] = T.parameter(pos, name="enc.pos_embed")
    for i in range(config.num_layers):
        nn.init_block(params, f"enc.block{i}", d, config.intermediate_size, rng)
    nn.init_norm(params, "enc.norm", d)
    nn.init_linear(params, "enc.mim_head", d, config.patch_dim, rng, std=0.02)
    nn.init_linear(params, "enc.cls_head", d, config.num_classes, rng, std=0.02)
    nn.init_linear(params, "enc.distill_head", d, config.num_classes, rng, std=0.02)
    return params


def encoder_params(params: nn.Params) -> nn.Params:
    return {k: v for k, v in params.items() if k.startswith(PREFIX)}


# ------------------------------------------------------------------ forward

def encode(image: np.ndarray, config: EncoderConfig, params: nn.Params, mode: str = "eval",
           mask: np.ndarray | None = None, rng: np.random.Generator | None = None) -> VisualFeatures:
    """Encode one (S, S) image or a batch (B, S, S).

    ``mask`` (boolean, (N,) or (B, N)) marks patches replaced by the mask token.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    img = np.asarray(image)
    single = img.ndim == 2
    if single:
        img = img[None]
    patches = patchify(normalize_pixels(img), config)  # (B, N, P)
    b, n, _ = patches.shape
    d = config.hidden_size
    train = mode == "train"
    if train and rng is None:
        rng = np.random.default_rng(0)
    x = nn.linear(T.Tensor._wrap(patches), params, "enc.patch")  # (B, N, D)
    if mask is not None:
        m = np.asarray(mask, dtype=x.data.dtype).reshape(b, n, 1)
        x = T.add(T.mul(x, 1.0 - m), T.mul(T.reshape(params["enc.mask_token"], (1, 1, d)), m))
    zeros = np.zeros((b, 1, d), dtype=x.data.dtype)
    cls = T.add(T.reshape(params["enc.cls_token"], (1, 1, d)), zeros)
    dist = T.add(T.reshape(params["enc.distill_token"], (1, 1, d)), zeros)
    x = T.concat([cls, dist, x], axis=1)
    x = T.add(x, params["enc.pos_embed"])
    x = T.dropout(x, config.dropout, train, rng)
    for i in range(config.num_layers):
        x = nn.block(x, params, f"enc.block{i}", config.num_heads, dropout=config.dropout, train=train, rng=rng)
    x = nn.norm(x, params, "enc.norm")
    if single:
        x = T.reshape(x, x.shape[1:])
    return VisualFeatures(tokens=x, patch_grid=(config.grid, config.grid))


# ---------------------------------------------------------------------- MIM

def sample_mim_mask(config: EncoderConfig, mask_ratio: float, seed, batch: int = 1) -> np.ndarray:
    """Boolean (batch, N) with exactly ceil(mask_ratio * N) true entries per row."""
    if not 0.0 < mask_ratio < 1.0:
        raise ValueError(f"mask_ratio must be in (0, 1), got {mask_ratio}")
    n = config.num_patches
    k = math.ceil(mask_ratio * n)
    if k == 0 or k >= n:
        raise ValueError(f"mask_ratio {mask_ratio} masks {k} of {n} patches")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    out = np.zeros((batch, n), dtype=bool)
    for i in range(batch):
        out[i, rng.choice(n, size=k, replace=False)] = True
    return out


def mim_loss(image: np.ndarray, mask_ratio: float, config: EncoderConfig, params: nn.Params, seed=0,
             mode: str = "train", mask: np.ndarray | None = None, return_mask: bool = False):
    """Mean squared reconstruction error over masked patches only."""
    img = np.asarray(image)
    batch = 1 if img.ndim == 2 else img.shape[0]
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if mask is None:
        mask = sample_mim_mask(config, mask_ratio, rng, batch)
    mask = np.asarray(mask, dtype=bool).reshape(batch, config.num_patches)
    if not mask.any():
        raise ValueError("MIM mask selects no patches")
    feats = encode(img, config, params, mode=mode, mask=mask, rng=rng).as_batch()
    pred = nn.linear(feats[:, 2:], params, "enc.mim_head")  # (B, N, P)
    target = patchify(normalize_pixels(img.reshape(batch, config.image_size, config.image_size)), config)
    w = mask[..., None].astype(pred.data.dtype)
    diff = T.sub(pred, target)
    loss = T.scale(T.sum_(T.mul(T.mul(diff, diff), w)), 1.0 / (w.sum() * config.patch_dim))
    return (loss, mask) if return_mask else loss


# ------------------------------------------------------------- distillation

def head_logits(features: VisualFeatures, params: nn.Params) -> tuple[Tensor, Tensor]:
    """(class-head logits from token 0, distill-head logits from token 1), each (B, C)."""
    x = features.as_batch()
    return nn.linear(x[:, 0], params, "enc.cls_head"), nn.linear(x[:, 1], params, "enc.distill_head")


def distill_loss(class_logits: Tensor, distill_logits: Tensor, true_label, teacher_label) -> Tensor:
    """0.5 * CE(class head, true label) + 0.5 * CE(distill head, teacher's hard label)."""
    if class_logits.shape != distill_logits.shape:
        raise ShapeError(f"logit heads disagree: {class_logits.shape} vs {distill_logits.shape}")
    ce_true = T.cross_entropy(class_logits, np.atleast_1d(true_label))
    ce_teacher = T.cross_entropy(distill_logits, np.atleast_1d(teacher_label))
    return T.add(T.scale(ce_true, 0.5), T.scale(ce_teacher, 0.5))


def predict_labels(features: VisualFeatures, params: nn.Params) -> np.ndarray:
    """Argmax of the averaged class/distill head probabilities."""
    with T.no_grad():
        c, d = head_logits(features, params)
        p = T.softmax(c, -1).data + T.softmax(d, -1).data
    return np.argmax(p, axis=-1)


class Teacher(Protocol):
    def classify(self, image: np.ndarray) -> int: ...


class LinearProbeTeacher:
    """Ridge-regression probe on downsampled pixels; a fixed, separately fitted teacher."""

    def __init__(self, weights: np.ndarray, bias: np.ndarray, side: int):
        self.weights, self.bias, self.side = weights, bias, side

    @staticmethod
    def features(image: np.ndarray, side: int) -> np.ndarray:
        return normalize_pixels(bilinear_resize(np.asarray(image, dtype=np.float64), side, side)).reshape(-1)

    @classmethod
    def fit(cls, images, labels, num_classes: int, side: int = 16, ridge: float = 1.0) -> "LinearProbeTeacher":
        x = np.stack([cls.features(im, side) for im in images])
        y = np.eye(num_classes)[np.asarray(labels)]
        mu = x.mean(axis=0)
        xc = x - mu
        w = np.linalg.solve(xc.T @ xc + ridge * np.eye(x.shape[1]), xc.T @ (y - y.mean(axis=0)))
        return cls(w, y.mean(axis=0) - mu @ w, side)

    def classify(self, image: np.ndarray) -> int:
        return int(np.argmax(self.features(image, self.side) @ self.weights + self.bias))


# -------------------------------------------------------- resolution change

def interpolate_pos_embed(params: nn.Params, config: EncoderConfig, image_size: int) -> tuple[nn.Params, EncoderConfig]:
    """Resample patch positional embeddings to a new image size (bilinear over the patch grid)."""
    new_cfg = replace(config, image_size=image_size)
    pos = params["enc.pos_embed"].data
    grid = pos[2:].reshape(config.grid, config.grid, -1)
    new = bilinear_resize(grid, new_cfg.grid, new_cfg.grid).reshape(new_cfg.num_patches, -1)
    out = dict(params)
    out["enc.pos_embed"] = T.parameter(np.concatenate([pos[:2], new]), name="enc.pos_embed")
    return out, new_cfg
