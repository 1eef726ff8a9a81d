"""Dataset splitting, synthetic dataset construction and the on-disk layout.

Layout written by :func:`write_dataset`::

    root/
      manifest.jsonl          one JSON object per sample
      train/ test/ validation/
        <id>.pgm              8-bit greyscale image
        <id>.txt              UTF-8 transcript, newlines preserved
        <id>.mask.pgm         ink mask (0 / 255)

Manifest records: ``{"id", "split", "path", "transcript_path", "mask_path",
"style_id", "dpi", "sha256"}`` where ``sha256`` hashes the image file bytes
and paths are relative to ``root``.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Sequence, TypeVar

import numpy as np

from .render import WritingStyle, compose_paragraph, render_paragraph
from .sample import PageSample

SPLITS = ("train", "test", "validation")
DEFAULT_RATIOS = (0.70, 0.20, 0.10)

T_ = TypeVar("T_")


class DataError(RuntimeError):
    """Dataset missing, malformed or inconsistent."""


def split_sizes(n: int, ratios: Sequence[float]) -> list[int]:
    """Floor each share, then hand the remainder out by largest fraction (ties to the earlier split)."""
    raw = [n * r for r in ratios]
    sizes = [math.floor(x + 1e-9) for x in raw]
    rest = n - sum(sizes)
    order = sorted(range(len(ratios)), key=lambda i: (-(raw[i] - sizes[i]), i))
    for i in order[:rest]:
        sizes[i] += 1
    return sizes


def split_dataset(samples: Sequence[T_], ratios: Sequence[float] = DEFAULT_RATIOS,
                  seed: int = 0) -> tuple[list[T_], list[T_], list[T_]]:
    """Seeded shuffle into (train, test, validation)."""
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must be three non-negative numbers summing to 1, got {tuple(ratios)}")
    if not samples:
        raise ValueError("cannot split an empty dataset")
    order = np.random.default_rng(seed).permutation(len(samples))
    n_train, n_test, _ = split_sizes(len(samples), ratios)
    pick = [samples[i] for i in order]
    return pick[:n_train], pick[n_train:n_train + n_test], pick[n_train + n_test:]


# ------------------------------------------------------------------- corpus

def bundled_corpus() -> list[str]:
    text = resources.files("parahtr.data").joinpath("corpus.txt").read_text(encoding="utf-8")
    return [line for line in text.splitlines() if line.strip()]


def read_corpus(path: str | Path) -> list[str]:
    lines = [ln.rstrip("\r") for ln in Path(path).read_text(encoding="utf-8").split("\n")]
    lines = [ln for ln in lines if ln.strip()]
    if not lines:
        raise DataError(f"corpus {path} is empty")
    return lines


def corpus_words(lines: Sequence[str]) -> list[str]:
    return [w for line in lines for w in line.split()]


# ----------------------------------------------------------------- synthesis

@dataclass(frozen=True)
class SynthSpec:
    pages: int = 500
    styles: int = 10
    canvas: int = 128
    max_lines: int = 3
    min_lines: int = 1
    max_chars: int | None = None
    dpi: int = 300
    seed: int = 0


def synthesize(spec: SynthSpec, words: Sequence[str] | None = None) -> list[PageSample]:
    """Render ``spec.pages`` pages, cycling style ids so each style gets an equal share."""
    if spec.pages <= 0:
        raise ValueError("number of pages must be positive")
    if spec.styles <= 0:
        raise ValueError("number of styles must be positive")
    words = list(words) if words is not None else corpus_words(bundled_corpus())
    scale = spec.canvas / 128.0
    out = []
    for i in range(spec.pages):
        style = WritingStyle.from_id(i % spec.styles, scale=scale)
        rng = np.random.default_rng(np.random.SeedSequence([spec.seed, i, 1]))
        text = compose_paragraph(words, style, spec.canvas, rng, max_lines=spec.max_lines,
                                 min_lines=spec.min_lines, max_chars=spec.max_chars)
        sample = render_paragraph(text, style, spec.canvas, seed=spec.seed * 1_000_003 + i, dpi=spec.dpi)
        sample.sample_id = f"p{i:05d}"
        out.append(sample)
    return out


# --------------------------------------------------------------------- disk

def write_pgm(path: Path, image: np.ndarray) -> bytes:
    arr = np.clip(np.rint(np.asarray(image, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    h, w = arr.shape
    data = f"P5\n{w} {h}\n255\n".encode("ascii") + arr.tobytes()
    path.write_bytes(data)
    return data


def read_pgm(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    fields: list[bytes] = []
    pos = 0
    while len(fields) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        end = pos
        while end < len(raw) and not raw[end:end + 1].isspace():
            end += 1
        fields.append(raw[pos:end])
        pos = end
    if fields[0] != b"P5":
        raise DataError(f"{path}: not a binary PGM")
    w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    pos += 1
    arr = np.frombuffer(raw, dtype=np.uint8, count=w * h, offset=pos).reshape(h, w)
    return arr.astype(np.float64) / maxval


def write_dataset(root: str | Path, splits: dict[str, Sequence[PageSample]]) -> Path:
    root = Path(root)
    records = []
    for split in SPLITS:
        d = root / split
        d.mkdir(parents=True, exist_ok=True)
        for s in splits.get(split, []):
            sid = s.sample_id
            img_bytes = write_pgm(d / f"{sid}.pgm", s.image)
            (d / f"{sid}.txt").write_bytes(s.transcript.encode("utf-8"))
            rec = {"id": sid, "split": split, "path": f"{split}/{sid}.pgm", "transcript_path": f"{split}/{sid}.txt",
                   "mask_path": None, "style_id": int(s.style_id), "dpi": int(s.dpi),
                   "sha256": hashlib.sha256(img_bytes).hexdigest()}
            if s.text_mask is not None:
                write_pgm(d / f"{sid}.mask.pgm", s.text_mask.astype(np.float64))
                rec["mask_path"] = f"{split}/{sid}.mask.pgm"
            records.append(rec)
    manifest = root / "manifest.jsonl"
    manifest.write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in records), encoding="utf-8")
    return manifest


def read_manifest(root: str | Path) -> list[dict]:
    path = Path(root) / "manifest.jsonl"
    if not path.is_file():
        raise DataError(f"no manifest at {path}")
    return [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]


def load_split(root: str | Path, split: str, verify: bool = False) -> list[PageSample]:
    root = Path(root)
    out = []
    for rec in read_manifest(root):
        if rec["split"] != split:
            continue
        img_path = root / rec["path"]
        if verify and hashlib.sha256(img_path.read_bytes()).hexdigest() != rec["sha256"]:
            raise DataError(f"checksum mismatch for {rec['id']}")
        mask = read_pgm(root / rec["mask_path"]) >= 0.5 if rec.get("mask_path") else None
        out.append(PageSample(image=read_pgm(img_path),
                              transcript=(root / rec["transcript_path"]).read_bytes().decode("utf-8"),
                              text_mask=mask, style_id=rec["style_id"], dpi=rec["dpi"], sample_id=rec["id"]))
    return out


def manifest_hash(root: str | Path) -> str:
    return hashlib.sha256((Path(root) / "manifest.jsonl").read_bytes()).hexdigest()
