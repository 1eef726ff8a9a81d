"""``parahtr`` command line.

Commands: render, pretrain-encoder, pretrain-lm, train, infer, eval, report.
Exit codes: 0 success, 1 usage or config error, 2 data or checkpoint error,
3 numeric failure (NaN/Inf in a loss or a metric).

Every command appends one record to ``<paths.reports>/runs.jsonl``.
"""
from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from . import pipeline as P
from .checkpoint import CheckpointError
from .config import ConfigError, ExperimentConfig, apply_overrides
from .data.dataset import DataError
from .tensor import NumericError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    # SUPPRESS so a flag given before the command is not reset by the subparser's default
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", type=Path, help="flat key = value config file")
    common.add_argument("--seed", type=int, help="overrides the config seed")
    common.add_argument("--scale", choices=("paper", "desk"), help="architecture preset")
    common.add_argument("--set", dest="overrides", action="append", metavar="KEY=VALUE",
                        help="config override, repeatable (e.g. --set train.epochs=3)")

    ap = _Parser(prog="parahtr", description="Paragraph-level handwritten text recognition at desk scale.",
                 parents=[common])
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("render", parents=[common], help="synthesise a paragraph dataset")
    p.add_argument("--out", type=Path, help="dataset directory (default: paths.data)")

    p = sub.add_parser("pretrain-encoder", parents=[common], help="masked image modelling + distillation")
    p.add_argument("--data", type=Path)
    p.add_argument("--out", type=Path, help="checkpoint (default: <paths.checkpoints>/encoder.phtr)")
    p.add_argument("--resume", action="store_true", help="continue from --out if it exists")

    p = sub.add_parser("pretrain-lm", parents=[common], help="masked language model pre-training")
    p.add_argument("--corpus", type=Path, help="UTF-8 text, one line per sentence (default: bundled)")
    p.add_argument("--out", type=Path, help="checkpoint (default: <paths.checkpoints>/lm.phtr)")
    p.add_argument("--resume", action="store_true")

    p = sub.add_parser("train", parents=[common], help="joint fine-tuning")
    p.add_argument("--data", type=Path)
    p.add_argument("--encoder", type=Path, help="encoder checkpoint (default: <paths.checkpoints>/encoder.phtr)")
    p.add_argument("--lm", type=Path, help="LM checkpoint (default: <paths.checkpoints>/lm.phtr)")
    p.add_argument("--out", type=Path, help="pipeline checkpoint (default: <paths.checkpoints>/model.phtr)")
    p.add_argument("--cold-start", action="store_true", help="random encoder, no LM unless --lm is given")
    p.add_argument("--unfreeze-lm", action="store_true")
    p.add_argument("--resume", action="store_true")

    p = sub.add_parser("infer", parents=[common], help="transcribe images")
    p.add_argument("inputs", type=Path, help="a .pgm image or a directory searched recursively")
    p.add_argument("--checkpoint", type=Path, help="pipeline checkpoint (default: <paths.checkpoints>/model.phtr)")
    p.add_argument("--out", type=Path, required=True, help="directory for <id>.txt and predictions.json")
    p.add_argument("--decode", choices=("greedy", "beam", "nucleus"))
    p.add_argument("--beam-width", type=int)
    p.add_argument("--top-p", type=float)
    p.add_argument("--temperature", type=float)
    p.add_argument("--refine", action="store_true", help="run the LM refiner on low-confidence characters")
    p.add_argument("--threshold", type=float, help="refinement confidence threshold")
    p.add_argument("--dpi", type=int, default=300)

    p = sub.add_parser("eval", parents=[common], help="score predictions against a dataset")
    p.add_argument("--predictions", type=Path, required=True)
    p.add_argument("--data", type=Path, help="ground-truth dataset (default: paths.data)")
    p.add_argument("--out", type=Path, help="report directory (default: paths.reports)")
    p.add_argument("--model-name", default="Proposed HWR")

    p = sub.add_parser("report", parents=[common], help="markdown summary of an evaluation and the run log")
    p.add_argument("--eval", dest="eval_json", type=Path, help="eval.json (default: <paths.reports>/eval.json)")
    p.add_argument("--out", type=Path, help="output file (default: <paths.reports>/report.md)")
    p.add_argument("--model-name", default="Proposed HWR")
    return ap


def load_config(args) -> ExperimentConfig:
    config, scale, seed = (getattr(args, k, None) for k in ("config", "scale", "seed"))
    cfg = ExperimentConfig.load(config) if config else ExperimentConfig()
    if scale:
        cfg = cfg.with_scale(scale)
    values = {}
    for item in getattr(args, "overrides", None) or []:
        key, eq, value = item.partition("=")
        if not eq:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        values[key.strip()] = value.strip()
    if values:
        cfg = apply_overrides(cfg, values)
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    return cfg


def _ckpt_dir(cfg) -> Path:
    return Path(cfg.paths.checkpoints)


def run(args, cfg: ExperimentConfig) -> int:
    log = lambda msg: print(msg, flush=True)  # noqa: E731
    man = P.RunManifest.begin(args.command, cfg)
    reports = Path(cfg.paths.reports)
    status = EXIT_OK
    cmd = args.command

    if cmd == "render":
        out = args.out or Path(cfg.paths.data)
        manifest = P.render(cfg, out)
        counts = P.split_counts(out)
        log(f"wrote {sum(counts.values())} pages to {out} ({counts})")
        man.add_output(manifest)
        man.metrics["split_sizes"] = counts

    elif cmd == "pretrain-encoder":
        data = args.data or Path(cfg.paths.data)
        out = args.out or _ckpt_dir(cfg) / "encoder.phtr"
        man.add_input(data / "manifest.jsonl")
        r = P.pretrain_encoder(cfg, data, out, resume=args.resume, log=log)
        _stage_summary(man, r, "mim")
        if r.first_loss is not None and r.last_loss >= r.first_loss:
            log(f"warning: MIM loss did not fall ({r.first_loss:.4f} -> {r.last_loss:.4f})")

    elif cmd == "pretrain-lm":
        out = args.out or _ckpt_dir(cfg) / "lm.phtr"
        corpus = args.corpus or (Path(cfg.paths.corpus) if cfg.paths.corpus else None)
        if corpus is not None:
            man.add_input(corpus)
        r = P.pretrain_lm(cfg, out, corpus, resume=args.resume, log=log)
        _stage_summary(man, r, "mlm")

    elif cmd == "train":
        tc = cfg.train
        if args.cold_start or args.unfreeze_lm:
            tc = replace(tc, cold_start=tc.cold_start or args.cold_start, unfreeze_lm=tc.unfreeze_lm or args.unfreeze_lm)
            cfg = replace(cfg, train=tc)
        data = args.data or Path(cfg.paths.data)
        enc = args.encoder or _ckpt_dir(cfg) / "encoder.phtr"
        lm = args.lm or _ckpt_dir(cfg) / "lm.phtr"
        if tc.cold_start:
            enc = None
            lm = args.lm
        out = args.out or _ckpt_dir(cfg) / "model.phtr"
        for p in (data / "manifest.jsonl", enc, lm):
            if p is not None:
                man.add_input(p)
        r = P.train(cfg, data, out, enc, lm, resume=args.resume, log=log)
        _stage_summary(man, r, "train")

    elif cmd == "infer":
        path = args.checkpoint or _ckpt_dir(cfg) / "model.phtr"
        model, _ = P.load_pipeline(path)
        man.add_input(path)
        doc = P.infer(model, args.inputs, args.out, dpi=args.dpi, log=log, strategy=args.decode,
                      beam_width=args.beam_width, top_p=args.top_p, temperature=args.temperature, seed=cfg.seed,
                      refine_text=args.refine, threshold=args.threshold)
        log(f"transcribed {len(doc['predictions'])} images into {args.out}; {len(doc['errors'])} errors")
        man.add_output(args.out)
        man.metrics.update(images=len(doc["predictions"]), errors=len(doc["errors"]))
        if doc["errors"]:
            status = EXIT_DATA

    elif cmd == "eval":
        data = args.data or Path(cfg.paths.data)
        out = args.out or reports
        reps = P.evaluate_predictions(args.predictions, data)
        j, t = P.write_reports(reps, out, args.model_name)
        print(t.read_text(encoding="utf-8"), end="")
        man.add_input(args.predictions)
        man.add_output(j)
        man.metrics.update({f"{s}_{k}": getattr(r, k) for s, r in reps.items() for k in ("cer", "wer", "ler")})
        bad = [s for s, r in reps.items() if r.has_nan()]
        if bad:
            log(f"error: NaN metric in {', '.join(bad)}")
            status = EXIT_NUMERIC

    elif cmd == "report":
        ej = args.eval_json or reports / "eval.json"
        if not ej.is_file():
            raise DataError(f"no evaluation at {ej}; run `parahtr eval` first")
        text = P.summary_report(ej, reports / "runs.jsonl", args.model_name)
        out = args.out or reports / "report.md"
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text, encoding="utf-8")
        print(text, end="")
        man.add_input(ej)
        man.add_output(out)

    man.metrics["exit_code"] = status
    man.finish(reports / "runs.jsonl")
    return status


def _stage_summary(man: P.RunManifest, r: P.StageResult, name: str) -> None:
    man.add_output(r.checkpoint)
    man.add_output(r.log)
    man.metrics.update({"steps": r.steps, f"{name}_first_loss": r.first_loss, f"{name}_last_loss": r.last_loss},
                       **r.metrics)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = load_config(args)
    except UsageError as exc:
        print(f"parahtr: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"parahtr: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return run(args, cfg)
    except NumericError as exc:
        print(f"parahtr: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, CheckpointError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"parahtr: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ConfigError, ValueError) as exc:
        print(f"parahtr: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
