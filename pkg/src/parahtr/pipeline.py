"""End-to-end lifecycle: render, pre-train, fine-tune, infer, evaluate, report.

Each stage is a plain function taking an :class:`ExperimentConfig`; the CLI
is a thin wrapper. Randomness for training step ``k`` comes only from
``SeedSequence([seed, stream, k])``, so a run resumed from a checkpoint is
byte-identical to one that never stopped.

Checkpoint entries beyond the model tensors (``enc.``, ``dec.``, ``lm.``):

- ``opt.*``           Adam state (see :meth:`parahtr.tensor.Adam.state_arrays`)
- ``meta.kind``       ``encoder``, ``lm`` or ``pipeline`` (UTF-8 blob)
- ``meta.step``       optimizer steps taken (int64)
- ``meta.epoch``      completed epochs, pipeline checkpoints only (int64)
- ``meta.config``     the flat config text the run used
- ``meta.vocab``      decoder vocabulary file, pipeline checkpoints
- ``meta.lm_vocab``   LM tokenizer file, LM and pipeline checkpoints
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
import time
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

import numpy as np

from . import checkpoint as ckpt
from . import decoder as dec
from . import tensor as T
from .config import ExperimentConfig
from .data.augment import TRANSFORMS, AugmentationPolicy, augment
from .data.dataset import (SPLITS, DataError, SynthSpec, bundled_corpus, load_split, read_corpus, read_manifest,
                           read_pgm, split_dataset, synthesize, write_dataset)
from .data.preprocess import preprocess
from .data.sample import PageSample
from .encoder import LinearProbeTeacher, distill_loss, encode, head_logits, init_encoder, mim_loss
from .lm import init_lm, mlm_batch_loss, refine
from .metrics import EvalReport, evaluate, format_table
from .tensor import NumericError
from .vocab import LmTokenizer, Vocabulary

# per-purpose seed streams
_PRETRAIN, _LMTRAIN, _TRAIN, _EPOCH, _NUCLEUS = range(1, 6)


def step_rng(seed: int, stream: int, step: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), stream, int(step)]))


def _finite(loss: T.Tensor, what: str, step: int) -> float:
    v = loss.item()
    if not math.isfinite(v):
        raise NumericError(f"{what} loss is {v} at step {step}")
    return v


# ------------------------------------------------------------------ hashing

def file_hash(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def content_hash(path: str | Path) -> str:
    """sha256 of a file, or of the sorted (relative path, file hash) listing of a directory."""
    p = Path(path)
    if p.is_file():
        return file_hash(p)
    h = hashlib.sha256()
    for f in sorted(q for q in p.rglob("*") if q.is_file()):
        h.update(f"{f.relative_to(p).as_posix()}\0{file_hash(f)}\n".encode("utf-8"))
    return h.hexdigest()


@dataclass
class RunManifest:
    """One line of the append-only ``runs.jsonl`` log."""
    command: str
    config_hash: str
    seed: int
    scale: str
    started: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat(timespec="seconds"))
    inputs: dict[str, str] = field(default_factory=dict)
    outputs: dict[str, str] = field(default_factory=dict)
    metrics: dict[str, object] = field(default_factory=dict)
    timings: dict[str, float] = field(default_factory=dict)

    @classmethod
    def begin(cls, command: str, cfg: ExperimentConfig) -> "RunManifest":
        m = cls(command, cfg.digest(), cfg.seed, cfg.scale)
        m._t0 = time.perf_counter()
        return m

    def add_input(self, path: str | Path) -> None:
        if Path(path).exists():
            self.inputs[str(path)] = content_hash(path)

    def add_output(self, path: str | Path) -> None:
        self.outputs[str(path)] = content_hash(path)

    def finish(self, log_path: str | Path) -> dict:
        self.timings.setdefault("wall_seconds", round(time.perf_counter() - getattr(self, "_t0", time.perf_counter()), 3))
        rec = {k: getattr(self, k) for k in ("command", "started", "config_hash", "seed", "scale", "inputs", "outputs",
                                             "metrics", "timings")}
        log_path = Path(log_path)
        log_path.parent.mkdir(parents=True, exist_ok=True)
        with log_path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
        return rec


def read_runs(log_path: str | Path) -> list[dict]:
    p = Path(log_path)
    if not p.is_file():
        return []
    return [json.loads(line) for line in p.read_text(encoding="utf-8").splitlines() if line.strip()]


# ------------------------------------------------------------------- render

def render(cfg: ExperimentConfig, out_dir: str | Path) -> Path:
    """Synthesise pages, split them 70/20/10 (by default) and write the dataset layout."""
    r = cfg.render
    out = Path(out_dir)
    if (out / "manifest.jsonl").exists():
        raise DataError(f"{out} already holds a dataset; choose a fresh directory")
    if r.styles > cfg.encoder.num_classes:
        raise ValueError(f"render.styles {r.styles} exceeds encoder.num_classes {cfg.encoder.num_classes}")
    spec = SynthSpec(pages=r.pages, styles=r.styles, canvas=r.canvas, max_lines=r.max_lines, min_lines=r.min_lines,
                     dpi=r.dpi, seed=cfg.seed)
    words = None
    if cfg.paths.corpus:
        words = [w for line in read_corpus(cfg.paths.corpus) for w in line.split()]
    pages = synthesize(spec, words)
    train, test, val = split_dataset(pages, (r.train_ratio, r.test_ratio, r.validation_ratio), seed=cfg.seed)
    try:
        return write_dataset(out, {"train": train, "test": test, "validation": val})
    except OSError as exc:
        raise DataError(f"cannot write dataset to {out}: {exc}") from exc


def split_counts(data_dir: str | Path) -> dict[str, int]:
    counts = {s: 0 for s in SPLITS}
    for rec in read_manifest(data_dir):
        counts[rec["split"]] += 1
    return counts


# ---------------------------------------------------------------- helpers

def _dtype(cfg: ExperimentConfig):
    return np.float32 if cfg.dtype == "float32" else np.float64


def _images(samples: Sequence[PageSample], size: int, dtype) -> np.ndarray:
    return np.stack([preprocess(s.image, s.dpi, size) for s in samples]).astype(dtype)


def _load_params(params: dict[str, T.Tensor], entries: dict[str, np.ndarray], prefix: str, source: str) -> None:
    """Copy ``prefix`` tensors from a checkpoint, naming the first tensor that does not fit."""
    for name, p in params.items():
        if not name.startswith(prefix):
            continue
        if name not in entries:
            raise ckpt.CheckpointError(f"{source}: tensor {name} missing from checkpoint")
        arr = entries[name]
        if arr.shape != p.data.shape:
            raise ckpt.CheckpointError(f"{source}: tensor {name} has shape {arr.shape}, config expects {p.data.shape}")
        p.data = np.array(arr, dtype=p.data.dtype)


def _read_checkpoint(path: str | Path, kind: str) -> dict[str, np.ndarray]:
    try:
        entries = ckpt.load(path)
    except FileNotFoundError:
        raise DataError(f"checkpoint {path} not found") from None
    got = ckpt.entry_text(entries["meta.kind"]) if "meta.kind" in entries else "?"
    if got != kind:
        raise ckpt.CheckpointError(f"{path} is a {got!r} checkpoint, expected {kind!r}")
    return entries


def _meta(kind: str, cfg: ExperimentConfig, step: int, **texts: str) -> dict[str, np.ndarray]:
    out = {"meta.kind": ckpt.text_entry(kind), "meta.step": np.array(step, dtype=np.int64),
           "meta.config": ckpt.text_entry(cfg.dumps())}
    for k, v in texts.items():
        out[f"meta.{k}"] = ckpt.text_entry(v)
    return out


def _write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _read_csv(path: Path) -> list[list[str]]:
    if not path.is_file():
        return []
    with path.open(newline="", encoding="utf-8") as fh:
        return list(csv.reader(fh))[1:]


def _fmt(x: float) -> str:
    return f"{x:.6f}"


@dataclass
class StageResult:
    checkpoint: Path
    log: Path
    steps: int
    first_loss: float | None
    last_loss: float | None
    metrics: dict = field(default_factory=dict)


# ----------------------------------------------------- encoder pre-training

def pretrain_encoder(cfg: ExperimentConfig, data_dir: str | Path, out_path: str | Path,
                     resume: bool = False, log=print) -> StageResult:
    """Masked image modelling plus class/distillation heads on the training split.

    Class labels are writer style ids; the teacher is a ridge probe fit on
    the same images, whose hard predictions supervise the distillation token.
    """
    T.set_default_dtype(_dtype(cfg))
    ec, pc = cfg.encoder, cfg.pretrain
    samples = load_split(data_dir, "train")
    if not samples:
        raise DataError(f"no training images in {data_dir}")
    samples = samples[:pc.max_images]
    if pc.extra_pages:
        samples = samples + pretraining_pages(cfg)
    if max(s.style_id for s in samples) >= ec.num_classes:
        raise DataError(f"style ids exceed encoder.num_classes={ec.num_classes}")
    X = _images(samples, ec.image_size, _dtype(cfg))
    labels = np.array([s.style_id for s in samples])
    teacher = LinearProbeTeacher.fit(X, labels, ec.num_classes)
    teacher_labels = np.array([teacher.classify(x) for x in X])

    params = init_encoder(ec, cfg.seed)
    opt = T.Adam(params, lr=pc.lr, clip_norm=cfg.train.clip_norm)
    out_path = Path(out_path)
    log_path = out_path.with_suffix(".loss.csv")
    start, rows = 0, []
    if resume and out_path.exists():
        entries = _read_checkpoint(out_path, "encoder")
        _load_params(params, entries, "enc.", str(out_path))
        opt.load_state_arrays(entries)
        start = int(entries["meta.step"])
        rows = [r for r in _read_csv(log_path) if int(r[0]) <= start]
        log(f"resuming encoder pre-training at step {start}")
    for step in range(start + 1, pc.steps + 1):
        rng = step_rng(cfg.seed, _PRETRAIN, step)
        idx = rng.choice(len(X), pc.batch_size, replace=len(X) < pc.batch_size)
        mim = mim_loss(X[idx], pc.mask_ratio, ec, params, seed=rng)
        loss = mim
        dist = None
        if pc.distill_weight > 0:
            c, d = head_logits(encode(X[idx], ec, params, "train", rng=rng), params)
            dist = distill_loss(c, d, labels[idx], teacher_labels[idx])
            loss = T.add(mim, T.scale(dist, pc.distill_weight))
        value = _finite(loss, "encoder pre-training", step)
        opt.zero_grad()
        T.backward(loss)
        opt.step()
        rows.append([step, _fmt(value), _fmt(mim.item()), _fmt(dist.item() if dist is not None else 0.0)])
        if step % pc.log_every == 0 or step == pc.steps:
            log(f"pretrain-encoder step {step}/{pc.steps} loss {value:.4f} mim {mim.item():.4f}")
    _write_csv(log_path, ["step", "loss", "mim", "distill"], rows)
    step = max(start, pc.steps)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    entries = {k: p.data for k, p in params.items()}
    entries.update(opt.state_arrays())
    entries.update(_meta("encoder", cfg, step))
    ckpt.save(out_path, entries)
    mims = [float(r[2]) for r in rows]
    return StageResult(out_path, log_path, step, mims[0] if mims else None, mims[-1] if mims else None,
                       {"teacher_accuracy": float((teacher_labels == labels).mean())})


def pretraining_pages(cfg: ExperimentConfig) -> list[PageSample]:
    """``pretrain.extra_pages`` freshly rendered pages, disjoint in seed from the dataset."""
    r = cfg.render
    spec = SynthSpec(pages=cfg.pretrain.extra_pages, styles=r.styles, canvas=r.canvas, max_lines=r.max_lines,
                     min_lines=r.min_lines, dpi=r.dpi, seed=cfg.seed + 7919)
    words = [w for line in read_corpus(cfg.paths.corpus) for w in line.split()] if cfg.paths.corpus else None
    return synthesize(spec, words)


# ----------------------------------------------------------- LM pre-training

def lm_lines(lines: Sequence[str], max_chars: int) -> list[str]:
    """Split corpus lines into chunks the LM can take (at most ``max_chars`` characters)."""
    out = []
    for line in lines:
        line = line.strip()
        while line:
            if len(line) <= max_chars:
                out.append(line)
                break
            cut = line.rfind(" ", 0, max_chars + 1)
            cut = cut if cut > 0 else max_chars
            out.append(line[:cut].strip())
            line = line[cut:].strip()
    return [ln for ln in out if ln]


def pretrain_lm(cfg: ExperimentConfig, out_path: str | Path, corpus: str | Path | None = None,
                resume: bool = False, log=print) -> StageResult:
    T.set_default_dtype(_dtype(cfg))
    lc = cfg.lmtrain
    source = corpus or cfg.paths.corpus
    raw = read_corpus(source) if source else bundled_corpus()
    lines = lm_lines(raw, cfg.lm.max_seq_length - 2)
    if not lines:
        raise DataError("LM corpus is empty")
    out_path = Path(out_path)
    log_path = out_path.with_suffix(".loss.csv")
    start, rows = 0, []
    tok = LmTokenizer(sorted({c for line in lines for c in line}))
    entries = None
    if resume and out_path.exists():
        entries = _read_checkpoint(out_path, "lm")
        tok = LmTokenizer.loads(ckpt.entry_text(entries["meta.lm_vocab"]))
    lcfg = cfg.lm.for_tokenizer(tok)
    params = init_lm(lcfg, cfg.seed)
    opt = T.Adam(params, lr=lc.lr, clip_norm=cfg.train.clip_norm)
    if entries is not None:
        _load_params(params, entries, "lm.", str(out_path))
        opt.load_state_arrays(entries)
        start = int(entries["meta.step"])
        rows = [r for r in _read_csv(log_path) if int(r[0]) <= start]
        log(f"resuming LM pre-training at step {start}")
    for step in range(start + 1, lc.steps + 1):
        rng = step_rng(cfg.seed, _LMTRAIN, step)
        batch = [lines[i] for i in rng.integers(0, len(lines), lc.batch_size)]
        out = mlm_batch_loss(batch, lcfg, params, tok, lc.mask_prob, rng)
        if out.skipped:
            continue
        value = _finite(out.value, "LM pre-training", step)
        opt.zero_grad()
        T.backward(out.value)
        opt.step()
        rows.append([step, _fmt(value), out.num_targets])
        if step % lc.log_every == 0 or step == lc.steps:
            log(f"pretrain-lm step {step}/{lc.steps} loss {value:.4f}")
    _write_csv(log_path, ["step", "loss", "targets"], rows)
    step = max(start, lc.steps)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    entries = {k: p.data for k, p in params.items()}
    entries.update(opt.state_arrays())
    entries.update(_meta("lm", cfg, step, lm_vocab=tok.dumps()))
    ckpt.save(out_path, entries)
    losses = [float(r[1]) for r in rows]
    return StageResult(out_path, log_path, step, losses[0] if losses else None, losses[-1] if losses else None,
                       {"initial_loss_ln_v": math.log(len(tok))})


# ------------------------------------------------------------------- model

@dataclass
class Pipeline:
    """A trained recogniser: encoder + decoder, optionally with its refining LM."""
    config: ExperimentConfig
    vocab: Vocabulary
    params: dict[str, T.Tensor]
    lm_params: dict[str, T.Tensor] | None = None
    lm_tokenizer: LmTokenizer | None = None

    @property
    def lm_config(self):
        return None if self.lm_tokenizer is None else self.config.lm.for_tokenizer(self.lm_tokenizer)

    def features(self, images: np.ndarray):
        return encode(np.asarray(images).astype(_dtype(self.config)), self.config.encoder, self.params)

    def transcribe(self, image: np.ndarray, dpi: int = 300, strategy: str | None = None, beam_width: int | None = None,
                   top_p: float | None = None, temperature: float | None = None, seed: int = 0,
                   refine_text: bool = False, threshold: float | None = None) -> dict:
        d = self.config.decode
        strategy = strategy or d.strategy
        x = preprocess(image, dpi, self.config.encoder.image_size)
        feats = self.features(x)
        dc = self.config.decoder
        if strategy == "greedy":
            seq = dec.generate_greedy(feats, dc, self.params)
        elif strategy == "beam":
            seq = dec.generate_beam(feats, dc, self.params, beam_width or d.beam_width, d.length_alpha)
        elif strategy == "nucleus":
            seq = dec.generate_nucleus(feats, dc, self.params, top_p if top_p is not None else d.top_p,
                                       temperature if temperature is not None else d.temperature,
                                       step_rng(seed, _NUCLEUS, 0))
        else:
            raise ValueError(f"unknown decode strategy {strategy!r}")
        ids, conf = dec.strip_eos(seq)
        keep = [i for i, t in enumerate(ids) if t not in self.vocab.special_ids or t == self.vocab.newline_id]
        text = self.vocab.decode_text([ids[i] for i in keep])
        conf = [conf[i] for i in keep]
        out = {"text": text, "confidences": conf, "truncated": seq.truncated, "refined": False, "lm_calls": 0}
        if refine_text:
            if self.lm_params is None:
                raise ckpt.CheckpointError("--refine needs a checkpoint that carries an LM")
            r = refine(text, conf, threshold if threshold is not None else d.refine_threshold, d.refine_rounds,
                       self.lm_config, self.lm_params, self.lm_tokenizer)
            out.update(text=r.text, confidences=r.confidences, refined=True, lm_calls=r.lm_calls,
                       unrefined=text)
        return out

    def transcribe_batch(self, images: np.ndarray) -> list[str]:
        """Greedy transcripts for already preprocessed images (B, S, S)."""
        outs = dec.generate_greedy_batch(self.features(images), self.config.decoder, self.params)
        return [self.vocab.decode_text(dec.strip_eos(o)[0]) for o in outs]


def save_pipeline(path: str | Path, model: Pipeline, opt: T.Adam | None = None, step: int = 0, epoch: int = 0) -> None:
    entries = {k: p.data for k, p in model.params.items()}
    texts = {"vocab": model.vocab.dumps()}
    if model.lm_params is not None:
        entries.update({k: p.data for k, p in model.lm_params.items()})
        texts["lm_vocab"] = model.lm_tokenizer.dumps()
    if opt is not None:
        entries.update(opt.state_arrays())
    entries.update(_meta("pipeline", model.config, step, **texts))
    entries["meta.epoch"] = np.array(epoch, dtype=np.int64)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    ckpt.save(path, entries)


def load_pipeline(path: str | Path) -> tuple[Pipeline, dict[str, np.ndarray]]:
    entries = _read_checkpoint(path, "pipeline")
    cfg = ExperimentConfig.loads(ckpt.entry_text(entries["meta.config"]))
    T.set_default_dtype(_dtype(cfg))
    vocab = Vocabulary.loads(ckpt.entry_text(entries["meta.vocab"]))
    params = {**init_encoder(cfg.encoder, cfg.seed), **dec.init_decoder(cfg.decoder, len(vocab), cfg.seed)}
    _load_params(params, entries, "enc.", str(path))
    _load_params(params, entries, "dec.", str(path))
    lm_params = tok = None
    if "meta.lm_vocab" in entries:
        tok = LmTokenizer.loads(ckpt.entry_text(entries["meta.lm_vocab"]))
        lm_params = init_lm(cfg.lm.for_tokenizer(tok), cfg.seed)
        _load_params(lm_params, entries, "lm.", str(path))
    return Pipeline(cfg, vocab, params, lm_params, tok), entries


# ---------------------------------------------------------------- training

def dataset_vocab(data_dir: str | Path) -> Vocabulary:
    """Character inventory over every transcript in the manifest (all splits)."""
    root = Path(data_dir)
    texts = [(root / r["transcript_path"]).read_bytes().decode("utf-8") for r in read_manifest(root)]
    return Vocabulary.from_texts(texts)


def augmentation_policy(cfg: ExperimentConfig) -> AugmentationPolicy:
    p = cfg.train.augment_probability
    return AugmentationPolicy(probabilities={t: p for t in TRANSFORMS}, seed=cfg.seed)


def noisy_inputs(inputs: np.ndarray, rate: float, vocab_size: int, rng: np.random.Generator) -> np.ndarray:
    """Replace each non-special decoder input token with a random character with probability ``rate``."""
    if rate <= 0:
        return inputs
    first = len(dec.DECODER_SPECIALS)
    flip = (rng.random(inputs.shape) < rate) & (inputs >= first)
    return np.where(flip, rng.integers(first, vocab_size, inputs.shape), inputs)


def learning_rate(base: float, step: int, total: int, schedule: str = "constant", warmup: int = 0) -> float:
    """Rate for 1-based ``step``: linear warmup, then constant or cosine decay to zero at ``total``."""
    if warmup and step <= warmup:
        return base * step / warmup
    if schedule == "constant":
        return base
    if schedule == "cosine":
        frac = (step - warmup) / max(1, total - warmup)
        return base * 0.5 * (1.0 + math.cos(math.pi * min(1.0, frac)))
    raise ValueError(f"unknown learning-rate schedule {schedule!r}")


def eval_split(model: Pipeline, samples: Sequence[PageSample], batch: int = 64) -> EvalReport:
    size = model.config.encoder.image_size
    preds: list[str] = []
    for i in range(0, len(samples), batch):
        chunk = samples[i:i + batch]
        preds += model.transcribe_batch(_images(chunk, size, _dtype(model.config)))
    return evaluate([(s.transcript, p) for s, p in zip(samples, preds)], ids=[s.sample_id for s in samples])


def train(cfg: ExperimentConfig, data_dir: str | Path, out_path: str | Path, encoder_ckpt: str | Path | None = None,
          lm_ckpt: str | Path | None = None, resume: bool = False, log=print,
          stop_after: int | None = None) -> StageResult:
    """Joint fine-tuning of encoder and decoder with scheduled sampling.

    The LM is carried into the checkpoint for refinement and stays frozen
    unless ``train.unfreeze_lm``, in which case it keeps training with the
    MLM objective on the training transcripts. ``stop_after`` ends the run
    after that many epochs of this invocation (the checkpoint stays resumable).
    """
    T.set_default_dtype(_dtype(cfg))
    tc, ec, dc = cfg.train, cfg.encoder, cfg.decoder
    dc.check_encoder(ec.hidden_size)
    counts = split_counts(data_dir)
    train_set = load_split(data_dir, "train")
    if tc.max_train_pages:
        train_set = train_set[:tc.max_train_pages]
    val_set = load_split(data_dir, "validation")
    if not train_set:
        raise DataError(f"no training pages in {data_dir}")
    log(f"splits: train {counts['train']} (using {len(train_set)}), test {counts['test']}, "
        f"validation {counts['validation']}")
    vocab = dataset_vocab(data_dir)
    seqs = [vocab.encode_text(s.transcript) for s in train_set]
    longest = max(len(s) for s in seqs) + 1
    if longest > dc.max_output_length:
        raise DataError(f"a transcript needs {longest} decoder positions, decoder.max_output_length is "
                        f"{dc.max_output_length}")

    params = {**init_encoder(ec, cfg.seed), **dec.init_decoder(dc, len(vocab), cfg.seed)}
    lm_params = tok = None
    if not tc.cold_start:
        if encoder_ckpt is None:
            raise DataError("train needs an encoder checkpoint (or train.cold_start = true)")
        _load_params(params, _read_checkpoint(encoder_ckpt, "encoder"), "enc.", str(encoder_ckpt))
    if lm_ckpt is not None:
        entries = _read_checkpoint(lm_ckpt, "lm")
        tok = LmTokenizer.loads(ckpt.entry_text(entries["meta.lm_vocab"]))
        lm_params = init_lm(cfg.lm.for_tokenizer(tok), cfg.seed)
        _load_params(lm_params, entries, "lm.", str(lm_ckpt))
    elif not tc.cold_start:
        raise DataError("train needs an LM checkpoint (or train.cold_start = true)")
    model = Pipeline(cfg, vocab, params, lm_params, tok)

    trainable = dict(params)
    if tc.unfreeze_lm and lm_params is not None:
        trainable.update(lm_params)
    opt = T.Adam(trainable, lr=tc.lr, weight_decay=tc.weight_decay, clip_norm=tc.clip_norm)
    steps_per_epoch = tc.steps_per_epoch or math.ceil(len(train_set) / tc.batch_size)
    policy = augmentation_policy(cfg)
    out_path = Path(out_path)
    log_path = out_path.with_suffix(".log.csv")
    header = ["epoch", "step", "epsilon", "loss", "val_cer", "val_wer", "val_ler"]
    start_epoch, step, rows = 0, 0, []
    if resume and out_path.exists():
        model_old, entries = load_pipeline(out_path)
        if model_old.vocab != vocab:
            raise ckpt.CheckpointError(f"{out_path}: vocabulary differs from the dataset's")
        old = {**model_old.params, **(model_old.lm_params or {})}
        for k, p in trainable.items():
            p.data = old[k].data
        opt.load_state_arrays(entries)
        start_epoch, step = int(entries["meta.epoch"]), int(entries["meta.step"])
        rows = [r for r in _read_csv(log_path) if int(r[0]) < start_epoch]
        log(f"resuming training after epoch {start_epoch} (step {step})")
        T.set_default_dtype(_dtype(cfg))

    first = last = None
    report = None
    end_epoch = tc.epochs if stop_after is None else min(tc.epochs, start_epoch + stop_after)
    for epoch in range(start_epoch, end_epoch):
        eps = dec.epsilon_schedule(epoch, tc.epochs, tc.ss_schedule, tc.ss_floor, tc.ss_k)
        order = step_rng(cfg.seed, _EPOCH, epoch).permutation(len(train_set))
        losses = []
        for j in range(steps_per_epoch):
            step += 1
            opt.lr = learning_rate(tc.lr, step, tc.epochs * steps_per_epoch, tc.lr_schedule, tc.warmup_steps)
            rng = step_rng(cfg.seed, _TRAIN, step)
            idx = [int(order[(j * tc.batch_size + k) % len(order)]) for k in range(tc.batch_size)]
            batch = [augment(train_set[i], policy, step * tc.batch_size + k) if tc.augment_probability > 0
                     else train_set[i] for k, i in enumerate(idx)]
            X = _images(batch, ec.image_size, _dtype(cfg))
            bseq = [seqs[i] for i in idx]
            feats = encode(X, ec, params, "train", rng=rng)
            inp, _ = dec.make_batch(bseq)
            if eps < 1.0:
                inp, _ = dec.scheduled_inputs(feats, inp, eps, rng, dc, params)
            inp = noisy_inputs(inp, tc.input_noise, len(vocab), rng)
            loss = dec.sequence_loss(feats, bseq, dc, params, "train", rng, inputs=inp)
            if tc.unfreeze_lm and lm_params is not None:
                lines = [ln for i in idx for ln in train_set[i].transcript.split("\n") if ln]
                mlm = mlm_batch_loss(lines, model.lm_config, lm_params, tok, cfg.lmtrain.mask_prob, rng)
                if not mlm.skipped:
                    loss = T.add(loss, mlm.value)
            value = _finite(loss, "training", step)
            opt.zero_grad()
            T.backward(loss)
            opt.step()
            losses.append(value)
        first = losses[0] if first is None else first
        last = losses[-1]
        row = [epoch, step, f"{eps:.4f}", _fmt(float(np.mean(losses)))]
        if val_set and (tc.eval_every_epoch or epoch == tc.epochs - 1):
            report = eval_split(model, val_set)
            row += [_fmt(report.cer), _fmt(report.wer), _fmt(report.ler)]
        else:
            row += ["", "", ""]
        rows.append(row)
        log(f"epoch {epoch} step {step} epsilon {eps:.4f} loss {np.mean(losses):.4f}"
            + (f" val CER {row[4]} WER {row[5]} LER {row[6]}" if row[4] else ""))
        _write_csv(log_path, header, rows)
        save_pipeline(out_path, model, opt, step, epoch + 1)
    if not rows:
        save_pipeline(out_path, model, opt, step, start_epoch)
        _write_csv(log_path, header, rows)
    metrics = {"split_sizes": counts, "train_pages_used": len(train_set)}
    if report is not None:
        metrics.update(val_cer=report.cer, val_wer=report.wer, val_ler=report.ler)
    return StageResult(out_path, log_path, step, first, last, metrics)


# --------------------------------------------------------------- inference

IMAGE_SUFFIXES = (".pgm",)


def find_images(path: str | Path) -> list[Path]:
    p = Path(path)
    if p.is_file():
        return [p]
    if not p.is_dir():
        raise DataError(f"{p} does not exist")
    return sorted(q for q in p.rglob("*") if q.suffix in IMAGE_SUFFIXES and not q.name.endswith(".mask.pgm"))


def infer(model: Pipeline, inputs: str | Path, out_dir: str | Path, dpi: int = 300, log=print, **decode) -> dict:
    """Transcribe every image under ``inputs``; unreadable files are recorded and skipped."""
    images = find_images(inputs)
    if not images:
        raise DataError(f"no images found under {inputs}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    results, errors = [], []
    for path in images:
        sid = path.name[:-len(path.suffix)]
        try:
            image = read_pgm(path)
        except (OSError, ValueError, IndexError, DataError) as exc:
            errors.append({"id": sid, "path": str(path), "error": f"{type(exc).__name__}: {exc}"})
            log(f"skipping {path}: {exc}")
            continue
        r = model.transcribe(image, dpi=dpi, **decode)
        (out / f"{sid}.txt").write_bytes(r["text"].encode("utf-8"))
        results.append({"id": sid, "path": str(path), **r})
    doc = {"predictions": results, "errors": errors}
    (out / "predictions.json").write_text(json.dumps(doc, indent=1, ensure_ascii=False) + "\n", encoding="utf-8")
    return doc


# -------------------------------------------------------------- evaluation

EVAL_SPLITS = ("validation", "test")


def collect_predictions(pred_dir: str | Path) -> dict[str, str]:
    p = Path(pred_dir)
    if not p.is_dir():
        raise DataError(f"prediction directory {p} does not exist")
    preds = {f.name[:-4]: f.read_bytes().decode("utf-8") for f in sorted(p.glob("*.txt"))}
    if not preds:
        raise DataError(f"prediction directory {p} is empty")
    return preds


def evaluate_predictions(pred_dir: str | Path, data_dir: str | Path) -> dict[str, EvalReport]:
    """Reports for each of validation/test that has predictions; every id of such a split must be present."""
    preds = collect_predictions(pred_dir)
    root = Path(data_dir)
    manifest = read_manifest(root)
    known = {r["id"] for r in manifest}
    unknown = sorted(set(preds) - known)
    if unknown:
        raise DataError(f"predictions for ids not in the ground-truth manifest: {', '.join(unknown)}")
    reports = {}
    for split in EVAL_SPLITS:
        recs = [r for r in manifest if r["split"] == split]
        if not any(r["id"] in preds for r in recs):
            continue
        missing = [r["id"] for r in recs if r["id"] not in preds]
        if missing:
            raise DataError(f"{split}: missing predictions for ids: {', '.join(missing)}")
        pairs = [((root / r["transcript_path"]).read_bytes().decode("utf-8"), preds[r["id"]]) for r in recs]
        mask_pairs = []
        for r in recs:
            pm = Path(pred_dir) / f"{r['id']}.mask.pgm"
            if r.get("mask_path") and pm.is_file():
                mask_pairs.append((read_pgm(pm) >= 0.5, read_pgm(root / r["mask_path"]) >= 0.5))
        reports[split] = evaluate(pairs, ids=[r["id"] for r in recs], mask_pairs=mask_pairs or None)
    if not reports:
        raise DataError("no predictions for the validation or test split")
    return reports


def write_reports(reports: dict[str, EvalReport], out_dir: str | Path, model_name: str = "Proposed HWR") -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    j = out / "eval.json"
    j.write_text(json.dumps({k: v.to_dict() for k, v in reports.items()}, indent=1, ensure_ascii=False) + "\n",
                 encoding="utf-8")
    t = out / "table.txt"
    t.write_text(format_table(reports, model_name) + "\n", encoding="utf-8")
    return j, t


def load_reports(path: str | Path) -> dict[str, EvalReport]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return {k: EvalReport(**v) for k, v in doc.items()}


def summary_report(eval_json: str | Path, runs_log: str | Path, model_name: str = "Proposed HWR") -> str:
    """Markdown: the recognition-rate table, error rates, and the run log."""
    reports = load_reports(eval_json)
    lines = ["# Recognition results", "", "```", format_table(reports, model_name), "```", "",
             "| split | K | N | CER | WER | LER | LER (literal) |", "|---|---|---|---|---|---|---|"]
    for split, r in reports.items():
        lines.append(f"| {split} | {r.K} | {r.N} | {r.cer:.4f} | {r.wer:.4f} | {r.ler:.4f} | {r.ler_literal:.4f} |")
    runs = read_runs(runs_log)
    if runs:
        lines += ["", "# Runs", "", "| started | command | config | seconds |", "|---|---|---|---|"]
        for r in runs:
            lines.append(f"| {r['started']} | {r['command']} | {r['config_hash'][:12]} | "
                         f"{r['timings'].get('wall_seconds', '')} |")
    return "\n".join(lines) + "\n"


def with_seed(cfg: ExperimentConfig, seed: int | None) -> ExperimentConfig:
    return cfg if seed is None else replace(cfg, seed=seed)
