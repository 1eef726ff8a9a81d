"""Training-time augmentation.

Five transforms, each applied independently with its own probability
(0.2 by default), in this fixed order: resolution change, perspective,
elastic distortion, brightness, contrast. The three geometric transforms
warp ``text_mask`` with the same sampled parameters as the image.

Randomness for sample ``i`` comes only from ``SeedSequence([seed, i])``:
the five coin flips are drawn first, then transform parameters, so the
flip statistics do not depend on which transforms fired.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .preprocess import BACKGROUND, bilinear_resize
from .sample import PageSample

TRANSFORMS = ("resolution", "perspective", "elastic", "brightness", "contrast")


@dataclass(frozen=True)
class AugmentationPolicy:
    probabilities: dict[str, float] = field(default_factory=lambda: {t: 0.2 for t in TRANSFORMS})
    resolution_range: tuple[float, float] = (1.2, 2.0)
    perspective_max_shift: float = 0.08
    elastic_alpha: tuple[float, float] = (1.0, 3.0)
    elastic_sigma: tuple[float, float] = (3.0, 5.0)
    brightness_delta: float = 0.2
    contrast_range: tuple[float, float] = (0.8, 1.2)
    seed: int = 0

    def __post_init__(self) -> None:
        if set(self.probabilities) != set(TRANSFORMS):
            raise ValueError(f"probabilities must cover exactly {TRANSFORMS}")
        for name, p in self.probabilities.items():
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"probability for {name} out of [0, 1]: {p}")
        for name, (lo, hi) in (("resolution_range", self.resolution_range), ("elastic_alpha", self.elastic_alpha),
                               ("elastic_sigma", self.elastic_sigma), ("contrast_range", self.contrast_range)):
            if not lo < hi:
                raise ValueError(f"{name} must satisfy low < high, got {(lo, hi)}")
        if self.resolution_range[0] < 1.0 or self.elastic_sigma[0] <= 0:
            raise ValueError("resolution factors must be >= 1 and elastic sigma > 0")
        if not 0 < self.perspective_max_shift < 0.5 or not 0 < self.brightness_delta < 1:
            raise ValueError("perspective shift and brightness delta must be positive and small")

    @classmethod
    def disabled(cls, seed: int = 0) -> "AugmentationPolicy":
        return cls(probabilities={t: 0.0 for t in TRANSFORMS}, seed=seed)


def sample_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


# ---------------------------------------------------------------- primitives

def _sample(image: np.ndarray, rows: np.ndarray, cols: np.ndarray, fill: float) -> np.ndarray:
    return ndimage.map_coordinates(image, [rows, cols], order=1, mode="constant", cval=fill)


def change_resolution(image: np.ndarray, factor: float) -> np.ndarray:
    """Downsample by ``factor`` and upsample back to the original size."""
    h, w = image.shape
    small = bilinear_resize(image, max(1, round(h / factor)), max(1, round(w / factor)))
    return bilinear_resize(small, h, w)


def perspective_matrix(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Homography H with H @ [x, y, 1] ~ dst for the four (x, y) points in src."""
    a, b = [], []
    for (x, y), (u, v) in zip(src, dst):
        a.append([x, y, 1, 0, 0, 0, -u * x, -u * y])
        a.append([0, 0, 0, x, y, 1, -v * x, -v * y])
        b.extend([u, v])
    h = np.linalg.solve(np.array(a, dtype=np.float64), np.array(b, dtype=np.float64))
    return np.append(h, 1.0).reshape(3, 3)


def perspective_warp(image: np.ndarray, shifts: np.ndarray, fill: float) -> np.ndarray:
    """Move the four corners by ``shifts`` (4x2, pixels, (dx, dy)) and resample."""
    h, w = image.shape
    corners = np.array([[0, 0], [w - 1, 0], [w - 1, h - 1], [0, h - 1]], dtype=np.float64)
    inv = perspective_matrix(corners + shifts, corners)
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    pts = inv @ np.stack([xs.ravel(), ys.ravel(), np.ones(xs.size)])
    src_x = (pts[0] / pts[2]).reshape(h, w)
    src_y = (pts[1] / pts[2]).reshape(h, w)
    return _sample(image, src_y, src_x, fill)


def displacement_field(shape: tuple[int, int], alpha: float, sigma: float, seed) -> tuple[np.ndarray, np.ndarray]:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    dx = ndimage.gaussian_filter(rng.uniform(-1, 1, shape), sigma, mode="constant")
    dy = ndimage.gaussian_filter(rng.uniform(-1, 1, shape), sigma, mode="constant")
    # normalise so alpha is the RMS displacement in pixels
    rms = np.sqrt((dx * dx + dy * dy).mean()) + 1e-12
    return alpha * dx / rms, alpha * dy / rms


def apply_displacement(image: np.ndarray, dx: np.ndarray, dy: np.ndarray) -> np.ndarray:
    h, w = image.shape
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    return ndimage.map_coordinates(image, [ys + dy, xs + dx], order=1, mode="nearest")


def elastic_distort(image: np.ndarray, alpha: float, sigma: float, seed) -> np.ndarray:
    """Gaussian-smoothed random displacement (RMS ``alpha`` px) applied with bilinear sampling."""
    if alpha < 0 or sigma <= 0:
        raise ValueError("elastic_distort needs alpha >= 0 and sigma > 0")
    image = np.asarray(image, dtype=np.float64)
    if alpha == 0:
        return image.copy()
    dx, dy = displacement_field(image.shape, alpha, sigma, seed)
    return apply_displacement(image, dx, dy)


def photometric(image: np.ndarray, brightness: float = 0.0, contrast: float = 1.0) -> np.ndarray:
    return np.clip(contrast * (image - 0.5) + 0.5 + brightness, 0.0, 1.0)


# --------------------------------------------------------------------- policy

@dataclass
class AugmentRecord:
    applied: dict[str, bool]
    params: dict[str, object]


def sample_params(policy: AugmentationPolicy, index: int, shape: tuple[int, int]) -> AugmentRecord:
    rng = sample_rng(policy.seed, index)
    flips = rng.random(len(TRANSFORMS))
    applied = {t: bool(u < policy.probabilities[t]) for t, u in zip(TRANSFORMS, flips)}
    h, w = shape
    params: dict[str, object] = {
        "resolution": float(rng.uniform(*policy.resolution_range)),
        "perspective": rng.uniform(-1, 1, size=(4, 2)) * policy.perspective_max_shift * np.array([w, h]),
        "elastic_alpha": float(rng.uniform(*policy.elastic_alpha)),
        "elastic_sigma": float(rng.uniform(*policy.elastic_sigma)),
        "elastic_seed": int(rng.integers(2**63)),
        "brightness": float(rng.uniform(-policy.brightness_delta, policy.brightness_delta)),
        "contrast": float(rng.uniform(*policy.contrast_range)),
    }
    return AugmentRecord(applied, params)


def geometric(image: np.ndarray, record: AugmentRecord, fill: float) -> np.ndarray:
    """Apply the sampled geometric transforms to one channel (image or mask)."""
    out = np.asarray(image, dtype=np.float64)
    p = record.params
    if record.applied["resolution"]:
        out = change_resolution(out, p["resolution"])
    if record.applied["perspective"]:
        out = perspective_warp(out, p["perspective"], fill)
    if record.applied["elastic"]:
        dx, dy = displacement_field(out.shape, p["elastic_alpha"], p["elastic_sigma"], p["elastic_seed"])
        out = apply_displacement(out, dx, dy)
    return out


def augment(sample: PageSample, policy: AugmentationPolicy, sample_index: int, train_mode: bool = True,
            return_record: bool = False):
    if not train_mode:
        raise RuntimeError("augmentation is only applied during training")
    record = sample_params(policy, sample_index, sample.image.shape)
    image = geometric(sample.image, record, BACKGROUND)
    image = photometric(image,
                        record.params["brightness"] if record.applied["brightness"] else 0.0,
                        record.params["contrast"] if record.applied["contrast"] else 1.0)
    mask = sample.text_mask
    if mask is not None:
        mask = geometric(mask.astype(np.float64), record, 0.0) >= 0.5
    out = sample.with_(image=image, text_mask=mask)
    return (out, record) if return_record else out
