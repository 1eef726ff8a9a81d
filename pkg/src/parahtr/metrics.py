"""Recognition and segmentation metrics.

Error rates divide summed edit distance by summed ground-truth length
(characters for CER, word tokens for WER). Line error rate pairs lines by
position, padding the shorter side with empty lines; the normalised mode
divides each line's distance by ``max(1, len(ground-truth line))`` and is
what feeds LRR, the literal mode averages raw distances.

Word tokens: whitespace-separated chunks, with every punctuation character
split out as its own token. Punctuation means Unicode categories Po, Ps,
Pe, Pd, Pc, Pi and Pf, which already include the Devanagari danda and
double danda (U+0964, U+0965) and the Arabic/Urdu comma, semicolon,
question mark and full stop (U+060C, U+061B, U+061F, U+06D4).
"""
from __future__ import annotations

import unicodedata
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

PUNCT_CATEGORIES = frozenset({"Po", "Ps", "Pe", "Pd", "Pc", "Pi", "Pf"})
THRESHOLDS = tuple(round(0.50 + 0.05 * i, 2) for i in range(10))


def levenshtein(a: Sequence, b: Sequence) -> int:
    """Minimum insertions + deletions + substitutions turning ``a`` into ``b``."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i]
        for j, y in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y)))
        prev = cur
    return prev[-1]


def normalize_newlines(text: str) -> str:
    return text.replace("\r\n", "\n").replace("\r", "\n")


def is_punct(ch: str) -> bool:
    return unicodedata.category(ch) in PUNCT_CATEGORIES


def word_tokens(text: str) -> list[str]:
    out: list[str] = []
    for chunk in text.split():
        word = ""
        for ch in chunk:
            if is_punct(ch):
                if word:
                    out.append(word)
                    word = ""
                out.append(ch)
            else:
                word += ch
        if word:
            out.append(word)
    return out


def _pairs(pairs: Iterable) -> list[tuple[str, str]]:
    """Accept (ground_truth, prediction) tuples or objects with those attributes."""
    out = []
    for p in pairs:
        gt, pred = (p.ground_truth, p.prediction) if hasattr(p, "ground_truth") else p
        out.append((normalize_newlines(gt), normalize_newlines(pred)))
    return out


@dataclass(frozen=True)
class EvalPair:
    ground_truth: str
    prediction: str


def cer(pairs) -> float:
    ps = _pairs(pairs)
    total = sum(len(gt) for gt, _ in ps)
    if total == 0:
        raise ValueError("CER undefined: ground truth has no characters")
    return sum(levenshtein(pred, gt) for gt, pred in ps) / total


def wer(pairs) -> float:
    ps = _pairs(pairs)
    toks = [(word_tokens(gt), word_tokens(pred)) for gt, pred in ps]
    total = sum(len(g) for g, _ in toks)
    if total == 0:
        raise ValueError("WER undefined: ground truth has no words")
    return sum(levenshtein(p, g) for g, p in toks) / total


def aligned_lines(gt: str, pred: str) -> list[tuple[str, str]]:
    g, p = gt.split("\n"), pred.split("\n")
    n = max(len(g), len(p))
    g += [""] * (n - len(g))
    p += [""] * (n - len(p))
    return list(zip(g, p))


def ler(pairs, mode: str = "normalized") -> float:
    if mode not in ("normalized", "literal"):
        raise ValueError(f"unknown LER mode {mode!r}")
    lines = [lp for gt, pred in _pairs(pairs) for lp in aligned_lines(gt, pred)]
    if not lines:
        raise ValueError("LER undefined: no lines")
    if mode == "literal":
        return sum(levenshtein(p, g) for g, p in lines) / len(lines)
    return sum(levenshtein(p, g) / max(1, len(g)) for g, p in lines) / len(lines)


def error_to_recognition(rate: float) -> float:
    if rate < 0:
        raise ValueError("error rate must be non-negative")
    return max(0.0, 100.0 - 100.0 * rate)


# ------------------------------------------------------------- segmentation

def iou(pred_mask: np.ndarray, gt_mask: np.ndarray) -> float:
    a, b = np.asarray(pred_mask, dtype=bool), np.asarray(gt_mask, dtype=bool)
    if a.shape != b.shape:
        raise ValueError(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(a, b).sum() / union)


def map_over_thresholds(mask_pairs: Sequence[tuple[np.ndarray, np.ndarray]]) -> float:
    """Mean over IoU thresholds 0.50..0.95 of the ink-weighted fraction of samples passing.

    Pairs are (predicted, ground truth); weights are ground-truth ink pixel
    counts (uniform if every ground-truth mask is empty).
    """
    if not mask_pairs:
        raise ValueError("mAP needs at least one mask pair")
    ious = np.array([iou(p, g) for p, g in mask_pairs])
    weights = np.array([np.asarray(g, dtype=bool).sum() for _, g in mask_pairs], dtype=np.float64)
    if weights.sum() == 0:
        weights = np.ones_like(weights)
    weights /= weights.sum()
    precisions = [float(weights[ious >= t - 1e-12].sum()) for t in THRESHOLDS]
    return float(np.mean(precisions))


# ------------------------------------------------------------------ reports

@dataclass
class EvalReport:
    cer: float
    wer: float
    ler: float
    ler_literal: float
    crr: float
    wrr: float
    lrr: float
    K: int
    N: int
    iou: float | None = None
    map: float | None = None
    per_sample: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def has_nan(self) -> bool:
        vals = [self.cer, self.wer, self.ler, self.ler_literal, self.crr, self.wrr, self.lrr]
        vals += [v for v in (self.iou, self.map) if v is not None]
        return any(v != v for v in vals)


def evaluate(pairs, ids: Sequence[str] | None = None, mask_pairs=None) -> EvalReport:
    ps = _pairs(pairs)
    if not ps:
        raise ValueError("no pairs to evaluate")
    ids = list(ids) if ids is not None else [str(i) for i in range(len(ps))]
    per = []
    for sid, (gt, pred) in zip(ids, ps):
        per.append({"id": sid, "cer": cer([(gt, pred)]), "wer": wer([(gt, pred)]) if word_tokens(gt) else None,
                    "ler": ler([(gt, pred)]), "prediction": pred, "ground_truth": gt})
    c, w, l_ = cer(ps), wer(ps), ler(ps)
    rep = EvalReport(cer=c, wer=w, ler=l_, ler_literal=ler(ps, "literal"), crr=error_to_recognition(c),
                     wrr=error_to_recognition(w), lrr=error_to_recognition(l_), K=len(ps),
                     N=sum(len(aligned_lines(gt, pred)) for gt, pred in ps), per_sample=per)
    if mask_pairs:
        rep.iou = float(np.mean([iou(p, g) for p, g in mask_pairs]))
        rep.map = map_over_thresholds(mask_pairs)
    return rep


def format_table(reports: dict[str, EvalReport], model_name: str = "Proposed HWR") -> str:
    """Recognition rates (%) as a Val/Test x CRR/WRR/LRR table."""
    cols = [("CRR", "crr"), ("WRR", "wrr"), ("LRR", "lrr")]
    splits = [("Val", reports.get("validation") or reports.get("val")), ("Test", reports.get("test"))]
    name_w = max(len("Models"), len(model_name))
    top = f"| {'':<{name_w}} |" + "".join(f" {name:^15} |" for name, _ in cols)
    sub = f"| {'Models':<{name_w}} |" + "".join(f" {'Val':>6} | {'Test':>6} |" for _ in cols)
    cells = []
    for _, key in cols:
        for _, rep in splits:
            cells.append(f"{getattr(rep, key):6.2f}" if rep is not None else f"{'-':>6}")
    row = f"| {model_name:<{name_w}} |" + "".join(f" {c} |" for c in cells)
    rule = "+" + "-" * (len(sub) - 2) + "+"
    return "\n".join([rule, top, sub, rule, row, rule])
