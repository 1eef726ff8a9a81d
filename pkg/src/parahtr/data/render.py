"""Synthetic handwriting-like paragraph renderer.

Glyphs come from an abstract geometric alphabet: every code point maps to a
fixed set of four strokes drawn between the nine points of a 3x3 grid.
The mapping is a bijection for code points below 4845, which covers Latin,
Arabic/Urdu and Devanagari blocks, so the renderer is script-agnostic. Any
object with a ``strokes(char)`` method returning unit-box segments can be
passed instead (e.g. a vectorised font outline).

Writing styles perturb glyph size, slant, stroke width, spacing, baseline
wobble and stroke jitter. Rendering is deterministic given (text, style,
canvas, seed), and the ink mask is exact: it is the thresholded coverage of
the strokes actually drawn.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .sample import PageSample

Segment = tuple[tuple[float, float], tuple[float, float]]

_GRID = [(x, y) for y in (0.0, 0.5, 1.0) for x in (0.0, 0.5, 1.0)]


def _grid_segments() -> list[Segment]:
    segs = []
    for (i, a), (j, b) in itertools.combinations(enumerate(_GRID), 2):
        if abs(a[0] - b[0]) <= 0.5 and abs(a[1] - b[1]) <= 0.5:
            segs.append((a, b))
    return segs


SEGMENTS = _grid_segments()  # 20 segments
_COMBOS = list(itertools.combinations(range(len(SEGMENTS)), 4))
_MULT = 766  # coprime with len(_COMBOS) == 4845


class GlyphSet(Protocol):
    def strokes(self, char: str) -> list[Segment]: ...


class GeometricGlyphs:
    """Four grid strokes per code point; whitespace draws nothing."""

    def strokes(self, char: str) -> list[Segment]:
        if char.isspace():
            return []
        idx = (ord(char) * _MULT) % len(_COMBOS)
        return [SEGMENTS[k] for k in _COMBOS[idx]]


@dataclass(frozen=True)
class WritingStyle:
    style_id: int
    glyph_width: float
    glyph_height: float
    char_gap: float
    word_gap: float
    line_gap: float
    stroke_width: float
    slant: float
    wobble: float
    jitter: float
    darkness: float

    @classmethod
    def from_id(cls, style_id: int, scale: float = 1.0) -> "WritingStyle":
        """Deterministic style for ``style_id``; lengths scale with ``scale`` (1.0 == 128 px canvas)."""
        rng = np.random.default_rng([7919, style_id])
        return cls(
            style_id=style_id,
            glyph_width=scale * rng.uniform(9.0, 11.0),
            glyph_height=scale * rng.uniform(19.0, 23.0),
            char_gap=scale * rng.uniform(3.0, 4.5),
            word_gap=scale * rng.uniform(6.0, 8.0),
            line_gap=scale * rng.uniform(10.0, 14.0),
            stroke_width=scale * rng.uniform(2.2, 3.0),
            slant=rng.uniform(-0.25, 0.25),
            wobble=scale * rng.uniform(0.0, 1.5),
            jitter=scale * rng.uniform(0.2, 0.7),
            darkness=rng.uniform(0.0, 0.25),
        )

    @property
    def advance(self) -> float:
        return self.glyph_width + self.char_gap

    @property
    def line_pitch(self) -> float:
        return self.glyph_height + self.line_gap

    def line_width(self, line: str) -> float:
        if not line:
            return 0.0
        width = 0.0
        for ch in line:
            width += self.word_gap if ch == " " else self.advance
        return width - self.char_gap + abs(self.slant) * self.glyph_height


class RenderOverflowError(ValueError):
    pass


def margin_for(canvas: int) -> float:
    return canvas * 0.05


def fits(text: str, style: WritingStyle, canvas: int) -> int | None:
    """Index of the first line that does not fit, or None."""
    m = margin_for(canvas)
    for i, line in enumerate(text.split("\n")):
        if style.line_width(line) > canvas - 2 * m:
            return i
        if m + i * style.line_pitch + style.glyph_height + 2 * style.wobble > canvas - m:
            return i
    return None


def _draw_segment(ink: np.ndarray, p0, p1, width: float) -> None:
    h, w = ink.shape
    r = width / 2.0 + 1.0
    x0, x1 = int(max(0, np.floor(min(p0[0], p1[0]) - r))), int(min(w, np.ceil(max(p0[0], p1[0]) + r) + 1))
    y0, y1 = int(max(0, np.floor(min(p0[1], p1[1]) - r))), int(min(h, np.ceil(max(p0[1], p1[1]) + r) + 1))
    if x0 >= x1 or y0 >= y1:
        return
    ys, xs = np.mgrid[y0:y1, x0:x1]
    px, py = xs + 0.5, ys + 0.5
    dx, dy = p1[0] - p0[0], p1[1] - p0[1]
    ll = dx * dx + dy * dy
    t = np.zeros_like(px) if ll == 0 else np.clip(((px - p0[0]) * dx + (py - p0[1]) * dy) / ll, 0.0, 1.0)
    dist = np.hypot(px - (p0[0] + t * dx), py - (p0[1] + t * dy))
    cov = np.clip(width / 2.0 + 0.5 - dist, 0.0, 1.0)
    np.maximum(ink[y0:y1, x0:x1], cov, out=ink[y0:y1, x0:x1])


def render_ink(text: str, style: WritingStyle, canvas: int, seed: int,
               glyphs: GlyphSet | None = None) -> np.ndarray:
    """Ink coverage in [0, 1] for ``text`` laid out top-left aligned."""
    glyphs = glyphs or GeometricGlyphs()
    bad = fits(text, style, canvas)
    if bad is not None:
        line = text.split("\n")[bad]
        raise RenderOverflowError(f"line {bad} ({line!r}) does not fit a {canvas}px canvas for style {style.style_id}")
    rng = np.random.default_rng([int(seed), style.style_id])
    ink = np.zeros((canvas, canvas))
    m = margin_for(canvas)
    gw, gh = style.glyph_width, style.glyph_height
    for li, line in enumerate(text.split("\n")):
        top = m + style.wobble + li * style.line_pitch
        phase = rng.uniform(0, 2 * np.pi)
        x = m + max(-style.slant, 0.0) * gh
        for ch in line:
            if ch == " ":
                x += style.word_gap
                continue
            y_off = style.wobble * np.sin(phase + x / (3.0 * gw))
            x_off = rng.normal(0.0, style.jitter)
            width = style.stroke_width * rng.uniform(0.85, 1.15)
            for a, b in glyphs.strokes(ch):
                pts = []
                for (ux, uy) in (a, b):
                    py = top + y_off + uy * gh + rng.normal(0.0, style.jitter)
                    px = x + x_off + ux * gw - style.slant * (py - top - gh) + rng.normal(0.0, style.jitter)
                    pts.append((px, py))
                _draw_segment(ink, pts[0], pts[1], width)
            x += style.advance
    return ink


def render_paragraph(text: str, style: WritingStyle | int, canvas: int = 128, seed: int = 0,
                     dpi: int = 300, glyphs: GlyphSet | None = None) -> PageSample:
    if isinstance(style, int):
        style = WritingStyle.from_id(style, scale=canvas / 128.0)
    if not text or not text.strip():
        raise ValueError("cannot render empty text")
    ink = render_ink(text, style, canvas, seed, glyphs)
    image = 1.0 - ink * (1.0 - style.darkness)
    return PageSample(image=image, transcript=text, text_mask=ink >= 0.5, style_id=style.style_id, dpi=dpi)


def compose_paragraph(words: list[str], style: WritingStyle, canvas: int, rng: np.random.Generator,
                      max_lines: int = 3, min_lines: int = 1, max_chars: int | None = None) -> str:
    """Greedy line filling with words drawn from ``words`` so the result fits ``canvas``."""
    m = margin_for(canvas)
    avail = canvas - 2 * m
    n_lines = int(rng.integers(min_lines, max_lines + 1))
    while n_lines > 1 and m + (n_lines - 1) * style.line_pitch + style.glyph_height + 2 * style.wobble > canvas - m:
        n_lines -= 1
    lines = []
    for _ in range(n_lines):
        line = ""
        for _attempt in range(8):
            w = words[int(rng.integers(len(words)))]
            cand = f"{line} {w}" if line else w
            if max_chars is not None and len(cand) > max_chars:
                continue
            if style.line_width(cand) <= avail:
                line = cand
            elif line:
                break
        if not line:
            # fall back to a truncated word so every line carries ink
            w = words[int(rng.integers(len(words)))]
            while w and style.line_width(w) > avail:
                w = w[:-1]
            line = w or "a"
        lines.append(line)
    return "\n".join(lines)
