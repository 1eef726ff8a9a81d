"""Experiment configuration: a flat ``key = value`` text file.

Keys are dotted (``section.field``), one per line; ``#`` starts a comment.
Unknown keys are rejected so a typo never silently falls back to a
default. Example::

    scale = desk
    seed = 0
    paths.data = runs/data
    encoder.num_layers = 2
    train.lr = 0.001

Sections: ``paths``, ``render``, ``encoder``, ``decoder``, ``lm``,
``pretrain``, ``lmtrain``, ``train``, ``decode``. ``scale = paper`` swaps the
encoder/LM architecture for the full-size constants and is checked against
them on construction.
"""
from __future__ import annotations

import dataclasses
import hashlib
import typing
from dataclasses import dataclass, field, replace
from pathlib import Path

from .decoder import DecoderConfig
from .encoder import EncoderConfig
from .lm import LmConfig

SCALES = ("desk", "paper")

# full-size architecture, asserted whenever scale == "paper"
PAPER_ENCODER = {"num_layers": 12, "hidden_size": 768, "num_heads": 12, "intermediate_size": 3072,
                 "patch_size": 16, "encoder_stride": 16}
PAPER_LM = {"num_layers": 6, "hidden_size": 768, "num_heads": 12, "max_seq_length": 512, "dropout": 0.10,
            "vocab_size": 50_026}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Paths:
    data: str = "runs/data"
    checkpoints: str = "runs/checkpoints"
    reports: str = "runs/reports"
    corpus: str = ""  # empty: bundled corpus


@dataclass(frozen=True)
class RenderSettings:
    pages: int = 500
    styles: int = 10
    canvas: int = 256  # halved at 300 dpi, then fitted to encoder.image_size
    max_lines: int = 3
    min_lines: int = 1
    dpi: int = 300
    train_ratio: float = 0.70
    test_ratio: float = 0.20
    validation_ratio: float = 0.10


@dataclass(frozen=True)
class PretrainSettings:
    """Encoder pre-training: masked image modelling plus distillation."""
    steps: int = 200
    batch_size: int = 8
    lr: float = 1e-3
    mask_ratio: float = 0.4
    distill_weight: float = 1.0
    max_images: int = 300
    extra_pages: int = 0  # unlabelled pages rendered just for pre-training (separate seed stream)
    log_every: int = 10


@dataclass(frozen=True)
class LmTrainSettings:
    steps: int = 300
    batch_size: int = 16
    lr: float = 1e-3
    mask_prob: float = 0.15
    log_every: int = 10


@dataclass(frozen=True)
class TrainSettings:
    epochs: int = 12
    steps_per_epoch: int = 250  # 0: one pass over the training split
    batch_size: int = 16
    lr: float = 1e-3
    lr_schedule: str = "cosine"  # decays to 0 after warmup; or "constant"
    warmup_steps: int = 200
    weight_decay: float = 0.0
    clip_norm: float = 1.0
    max_train_pages: int = 0  # 0: whole training split
    augment_probability: float = 0.2
    input_noise: float = 0.3  # chance of replacing each decoder input character with a random one
    ss_schedule: str = "linear"
    ss_floor: float = 0.5
    ss_k: float = 5.0
    unfreeze_lm: bool = False
    cold_start: bool = False
    eval_every_epoch: bool = True


@dataclass(frozen=True)
class DecodeSettings:
    strategy: str = "greedy"
    beam_width: int = 4
    length_alpha: float = 0.7
    top_p: float = 0.9
    temperature: float = 1.0
    refine: bool = False
    refine_threshold: float = 0.5
    refine_rounds: int = 2


@dataclass(frozen=True)
class ExperimentConfig:
    scale: str = "desk"
    seed: int = 0
    dtype: str = "float32"
    paths: Paths = field(default_factory=Paths)
    render: RenderSettings = field(default_factory=RenderSettings)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    lm: LmConfig = field(default_factory=LmConfig)
    pretrain: PretrainSettings = field(default_factory=PretrainSettings)
    lmtrain: LmTrainSettings = field(default_factory=LmTrainSettings)
    train: TrainSettings = field(default_factory=TrainSettings)
    decode: DecodeSettings = field(default_factory=DecodeSettings)

    def __post_init__(self) -> None:
        if self.scale not in SCALES:
            raise ConfigError(f"scale must be one of {SCALES}, got {self.scale!r}")
        if self.dtype not in ("float64", "float32"):
            raise ConfigError(f"dtype must be float64 or float32, got {self.dtype!r}")
        if self.decode.strategy not in ("greedy", "beam", "nucleus"):
            raise ConfigError(f"unknown decode strategy {self.decode.strategy!r}")
        if self.train.lr_schedule not in ("constant", "cosine"):
            raise ConfigError(f"unknown learning-rate schedule {self.train.lr_schedule!r}")
        if self.train.ss_schedule not in ("linear", "inverse_sigmoid"):
            raise ConfigError(f"unknown scheduled-sampling schedule {self.train.ss_schedule!r}")
        if self.render.pages <= 0:
            raise ConfigError("render.pages must be positive")
        if self.scale == "paper":
            assert_paper_constants(self)

    # presets
    @classmethod
    def desk(cls, **overrides) -> "ExperimentConfig":
        return cls(**overrides)

    @classmethod
    def paper(cls, **overrides) -> "ExperimentConfig":
        enc = EncoderConfig.paper()
        return cls(scale="paper", encoder=enc,
                   decoder=DecoderConfig(num_layers=6, hidden_size=enc.hidden_size, num_heads=12,
                                         intermediate_size=3072, max_output_length=512, dropout=0.1),
                   lm=LmConfig.paper(), **overrides)

    def with_scale(self, scale: str) -> "ExperimentConfig":
        if scale == self.scale:
            return self
        base = ExperimentConfig.paper() if scale == "paper" else ExperimentConfig()
        return replace(self, scale=scale, encoder=base.encoder, decoder=base.decoder, lm=base.lm)

    # flat form
    def to_flat(self) -> dict[str, object]:
        out: dict[str, object] = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if dataclasses.is_dataclass(v):
                for g in dataclasses.fields(v):
                    out[f"{f.name}.{g.name}"] = getattr(v, g.name)
            else:
                out[f.name] = v
        return out

    def dumps(self) -> str:
        return "".join(f"{k} = {_format(v)}\n" for k, v in self.to_flat().items())

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    def digest(self) -> str:
        return hashlib.sha256(self.dumps().encode("utf-8")).hexdigest()

    @classmethod
    def loads(cls, text: str, base: "ExperimentConfig | None" = None) -> "ExperimentConfig":
        values = parse_flat(text)
        scale = values.get("scale", (base.scale if base else "desk"))
        if base is None:
            base = cls.paper() if scale == "paper" else cls()
        return apply_overrides(base, values)

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.loads(text)


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


def parse_flat(text: str) -> dict[str, str]:
    values: dict[str, str] = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in values:
            raise ConfigError(f"line {n}: duplicate key {key!r}")
        values[key] = value
    return values


def _coerce(kind, raw: str, key: str):
    try:
        if kind is bool:
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind.__name__}") from None


def apply_overrides(cfg: ExperimentConfig, values: dict[str, str]) -> ExperimentConfig:
    top_hints = typing.get_type_hints(ExperimentConfig)
    top: dict[str, object] = {}
    sections: dict[str, dict[str, object]] = {}
    for key, raw in values.items():
        head, _, tail = key.partition(".")
        if head not in top_hints:
            raise ConfigError(f"unknown config key {key!r}")
        kind = top_hints[head]
        if dataclasses.is_dataclass(kind):
            hints = typing.get_type_hints(kind)
            if tail not in hints:
                raise ConfigError(f"unknown config key {key!r}")
            sections.setdefault(head, {})[tail] = _coerce(hints[tail], raw, key)
        elif tail:
            raise ConfigError(f"unknown config key {key!r}")
        else:
            top[head] = _coerce(kind, raw, key)
    try:
        updated = {name: replace(getattr(cfg, name), **changes) for name, changes in sections.items()}
        return replace(cfg, **top, **updated)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc


def assert_paper_constants(cfg: ExperimentConfig) -> None:
    for name, expected in PAPER_ENCODER.items():
        got = getattr(cfg.encoder, name)
        if got != expected:
            raise ConfigError(f"paper preset: encoder.{name} = {got}, expected {expected}")
    for name, expected in PAPER_LM.items():
        got = getattr(cfg.lm, name)
        if got != expected:
            raise ConfigError(f"paper preset: lm.{name} = {got}, expected {expected}")
