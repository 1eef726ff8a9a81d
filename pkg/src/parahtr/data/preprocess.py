"""Resolution halving and square resizing.

Images are float arrays in [0, 1] with white (1.0) background. Bilinear
sampling uses half-pixel centres with edge clamping, so every output value
is a convex combination of input values.
"""
from __future__ import annotations

import math

import numpy as np

BACKGROUND = 1.0


def _axis_weights(n_in: int, n_out: int):
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, src - i0


def bilinear_resize(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resample the first two axes of ``image``; trailing axes are carried along."""
    a = np.asarray(image, dtype=np.float64)
    if out_h < 1 or out_w < 1:
        raise ValueError(f"invalid output size {out_h}x{out_w}")
    r0, r1, wr = _axis_weights(a.shape[0], out_h)
    c0, c1, wc = _axis_weights(a.shape[1], out_w)
    extra = (1,) * (a.ndim - 2)
    wr = wr.reshape((-1, 1) + extra)
    wc = wc.reshape((1, -1) + extra)
    rows = a[r0] * (1.0 - wr) + a[r1] * wr
    return rows[:, c0] * (1.0 - wc) + rows[:, c1] * wc


def downsample_halve(image: np.ndarray) -> np.ndarray:
    """Halve both dimensions (ceil) with bilinear interpolation, e.g. 300 dpi -> 150 dpi."""
    a = np.asarray(image, dtype=np.float64)
    if a.ndim < 2 or a.shape[0] < 2 or a.shape[1] < 2:
        raise ValueError(f"cannot halve image of shape {a.shape}")
    return bilinear_resize(a, math.ceil(a.shape[0] / 2), math.ceil(a.shape[1] / 2))


def pad_to_square(image: np.ndarray, fill: float = BACKGROUND) -> np.ndarray:
    a = np.asarray(image, dtype=np.float64)
    h, w = a.shape[:2]
    side = max(h, w)
    top, left = (side - h) // 2, (side - w) // 2
    out = np.full((side, side) + a.shape[2:], fill, dtype=np.float64)
    out[top:top + h, left:left + w] = a
    return out


def resize(image: np.ndarray, target: int, fill: float = BACKGROUND) -> np.ndarray:
    """Pad to a centred square with ``fill`` then resize to ``target`` x ``target``."""
    if target < 8:
        raise ValueError(f"target size {target} below minimum of 8")
    sq = pad_to_square(image, fill)
    if sq.shape[0] == target:
        return sq
    return bilinear_resize(sq, target, target)


def resize_mask(mask: np.ndarray, target: int) -> np.ndarray:
    return resize(np.asarray(mask, dtype=np.float64), target, fill=0.0) >= 0.5


def halve_mask(mask: np.ndarray) -> np.ndarray:
    return downsample_halve(np.asarray(mask, dtype=np.float64)) >= 0.5


def needs_halving(dpi: int) -> bool:
    """Only sources above 200 dpi are halved toward 150 dpi."""
    return dpi > 200


def preprocess(image: np.ndarray, dpi: int, target: int) -> np.ndarray:
    img = downsample_halve(image) if needs_halving(dpi) else np.asarray(image, dtype=np.float64)
    return resize(img, target)


def preprocess_mask(mask: np.ndarray, dpi: int, target: int) -> np.ndarray:
    m = halve_mask(mask) if needs_halving(dpi) else np.asarray(mask, dtype=bool)
    return resize_mask(m, target)
