from __future__ import annotations

import json
from collections import Counter
from dataclasses import replace

import numpy as np
import pytest

from parahtr import pipeline as P
from parahtr.checkpoint import CheckpointError
from parahtr.config import ConfigError, ExperimentConfig
from parahtr.data.dataset import DataError, manifest_hash, read_manifest

TINY = """
dtype = float32
render.pages = 20
render.canvas = 128
encoder.image_size = 64
encoder.patch_size = 8
encoder.encoder_stride = 8
encoder.hidden_size = 32
encoder.intermediate_size = 64
encoder.num_layers = 1
decoder.hidden_size = 32
decoder.intermediate_size = 64
decoder.num_layers = 1
lm.hidden_size = 32
lm.intermediate_size = 64
lm.num_layers = 1
pretrain.steps = 4
pretrain.batch_size = 4
lmtrain.steps = 4
lmtrain.batch_size = 4
train.epochs = 2
train.steps_per_epoch = 2
train.batch_size = 4
"""


def tiny(**sections) -> ExperimentConfig:
    cfg = ExperimentConfig.loads(TINY)
    return replace(cfg, **{k: replace(getattr(cfg, k), **v) for k, v in sections.items()})


@pytest.fixture(scope="module")
def stack(tmp_path_factory):
    root = tmp_path_factory.mktemp("stack")
    cfg = tiny()
    P.render(cfg, root / "data")
    P.pretrain_encoder(cfg, root / "data", root / "enc.phtr", log=lambda m: None)
    P.pretrain_lm(cfg, root / "lm.phtr", log=lambda m: None)
    lines = []
    P.train(cfg, root / "data", root / "model.phtr", root / "enc.phtr", root / "lm.phtr", log=lines.append)
    model, _ = P.load_pipeline(root / "model.phtr")
    return root, cfg, model, lines


def test_render_styles_and_determinism(tmp_path):
    cfg = ExperimentConfig.loads("render.pages = 500\nrender.canvas = 128")
    P.render(cfg, tmp_path / "a")
    P.render(cfg, tmp_path / "b")
    assert manifest_hash(tmp_path / "a") == manifest_hash(tmp_path / "b")
    assert P.content_hash(tmp_path / "a") == P.content_hash(tmp_path / "b")
    recs = read_manifest(tmp_path / "a")
    assert Counter(r["style_id"] for r in recs) == {s: 50 for s in range(10)}
    assert Counter(r["split"] for r in recs) == {"train": 350, "test": 100, "validation": 50}
    with pytest.raises(DataError):
        P.render(cfg, tmp_path / "a")  # never overwrites


def test_render_zero_pages_rejected():
    with pytest.raises(ConfigError):
        ExperimentConfig.loads("render.pages = 0")


def test_pretrain_encoder_log_and_loss(stack):
    root, cfg, _, _ = stack
    rows = (root / "enc.loss.csv").read_text().splitlines()
    assert rows[0] == "step,loss,mim,distill" and len(rows) == 1 + cfg.pretrain.steps


def test_missing_dataset_and_corpus(tmp_path):
    cfg = tiny()
    with pytest.raises(DataError):
        P.pretrain_encoder(cfg, tmp_path / "nothing", tmp_path / "e.phtr")
    (tmp_path / "empty.txt").write_text("\n  \n")
    with pytest.raises(DataError):
        P.pretrain_lm(cfg, tmp_path / "l.phtr", corpus=tmp_path / "empty.txt")


@pytest.mark.parametrize("stage", ["encoder", "lm"])
def test_pretrain_resume_is_byte_identical(stage, stack, tmp_path):
    root, cfg, _, _ = stack
    quiet = lambda m: None  # noqa: E731

    def run(cfg, out, resume=False):
        if stage == "encoder":
            return P.pretrain_encoder(cfg, root / "data", out, resume=resume, log=quiet)
        return P.pretrain_lm(cfg, out, resume=resume, log=quiet)
    key = "pretrain" if stage == "encoder" else "lmtrain"
    half = replace(cfg, **{key: replace(getattr(cfg, key), steps=2)})
    run(half, tmp_path / "r.phtr")
    r = run(cfg, tmp_path / "r.phtr", resume=True)
    assert r.steps == 4
    run(cfg, tmp_path / "d.phtr")
    assert (tmp_path / "r.phtr").read_bytes() == (tmp_path / "d.phtr").read_bytes()
    assert (tmp_path / "r.loss.csv").read_bytes() == (tmp_path / "d.loss.csv").read_bytes()


def test_train_logs_splits_and_epsilon(stack):
    root, cfg, _, lines = stack
    assert lines[0] == "splits: train 14 (using 14), test 4, validation 2"
    rows = (root / "model.log.csv").read_text().splitlines()
    assert rows[0] == "epoch,step,epsilon,loss,val_cer,val_wer,val_ler"
    assert rows[1].split(",")[2] == "1.0000" and rows[2].split(",")[2] == "0.5000"


def test_train_resume_and_reproducibility(stack, tmp_path):
    root, cfg, _, _ = stack
    quiet = lambda m: None  # noqa: E731
    out = tmp_path / "m.phtr"
    args = (root / "data", out, root / "enc.phtr", root / "lm.phtr")
    r = P.train(cfg, *args, log=quiet, stop_after=1)
    assert r.steps == cfg.train.steps_per_epoch
    r = P.train(cfg, *args, resume=True, log=quiet)
    assert r.steps == 2 * cfg.train.steps_per_epoch
    assert out.read_bytes() == (root / "model.phtr").read_bytes()
    assert out.with_suffix(".log.csv").read_bytes() == (root / "model.log.csv").read_bytes()


def test_dimension_mismatch_names_tensor(stack, tmp_path):
    root, cfg, _, _ = stack
    wide = tiny(encoder={"hidden_size": 48}, decoder={"hidden_size": 48})
    with pytest.raises(CheckpointError, match="enc.patch"):
        P.train(wide, root / "data", tmp_path / "m.phtr", root / "enc.phtr", root / "lm.phtr", log=lambda m: None)


def test_cold_start_needs_no_checkpoints(stack, tmp_path):
    root, cfg, _, _ = stack
    cold = tiny(train={"cold_start": True, "epochs": 1, "steps_per_epoch": 1})
    r = P.train(cold, root / "data", tmp_path / "m.phtr", log=lambda m: None)
    model, _ = P.load_pipeline(r.checkpoint)
    assert model.lm_params is None
    with pytest.raises(DataError):
        P.train(cfg, root / "data", tmp_path / "x.phtr", log=lambda m: None)


def test_decoding_contracts(stack):
    root, _, model, _ = stack
    img = P.load_split(root / "data", "test")[0].image
    greedy = model.transcribe(img, strategy="greedy")
    assert model.transcribe(img, strategy="beam", beam_width=1)["text"] == greedy["text"]
    assert model.transcribe(img, strategy="greedy") == greedy
    n1 = model.transcribe(img, strategy="nucleus", seed=4)
    assert model.transcribe(img, strategy="nucleus", seed=4) == n1
    noop = model.transcribe(img, refine_text=True, threshold=0.0)
    assert noop["text"] == greedy["text"] and noop["lm_calls"] == 0
    assert len(greedy["confidences"]) == len(greedy["text"])


def test_infer_continues_past_bad_files(stack, tmp_path):
    root, _, model, _ = stack
    src = tmp_path / "in"
    src.mkdir()
    good = sorted((root / "data" / "test").glob("p*[0-9].pgm"))[:2]
    for g in good:
        (src / g.name).write_bytes(g.read_bytes())
    (src / "broken.pgm").write_bytes(b"not an image")
    doc = P.infer(model, src, tmp_path / "out", log=lambda m: None)
    assert [e["id"] for e in doc["errors"]] == ["broken"]
    assert len(doc["predictions"]) == 2
    saved = json.loads((tmp_path / "out" / "predictions.json").read_text())
    assert saved == json.loads(json.dumps(doc))


def _copy_truth(data, out, splits=("validation", "test"), drop=()):
    out.mkdir()
    for r in read_manifest(data):
        if r["split"] in splits and r["id"] not in drop:
            (out / f"{r['id']}.txt").write_bytes((data / r["transcript_path"]).read_bytes())


def test_eval_perfect_and_mismatches(stack, tmp_path):
    data = stack[0] / "data"
    _copy_truth(data, tmp_path / "perfect")
    reps = P.evaluate_predictions(tmp_path / "perfect", data)
    for r in reps.values():
        assert r.crr == r.wrr == r.lrr == 100.0
    val_ids = [r["id"] for r in read_manifest(data) if r["split"] == "validation"]
    _copy_truth(data, tmp_path / "gap", drop=val_ids[:1])
    with pytest.raises(DataError, match=val_ids[0]):
        P.evaluate_predictions(tmp_path / "gap", data)
    (tmp_path / "none").mkdir()
    with pytest.raises(DataError, match="empty"):
        P.evaluate_predictions(tmp_path / "none", data)
    _copy_truth(data, tmp_path / "extra")
    (tmp_path / "extra" / "zzz.txt").write_text("x")
    with pytest.raises(DataError, match="zzz"):
        P.evaluate_predictions(tmp_path / "extra", data)


def test_eval_split_subset_and_reports(stack, tmp_path):
    data = stack[0] / "data"
    _copy_truth(data, tmp_path / "p", splits=("test",))
    reps = P.evaluate_predictions(tmp_path / "p", data)
    assert list(reps) == ["test"]
    j, t = P.write_reports(reps, tmp_path / "rep")
    assert "Val" in t.read_text() and P.load_reports(j)["test"].crr == 100.0


def test_run_manifest_append_only(tmp_path):
    cfg = tiny()
    log = tmp_path / "runs.jsonl"
    for i in range(2):
        m = P.RunManifest.begin("render", cfg)
        m.metrics["i"] = i
        m.finish(log)
    runs = P.read_runs(log)
    assert [r["metrics"]["i"] for r in runs] == [0, 1]
    assert {r["config_hash"] for r in runs} == {cfg.digest()}


def test_lm_lines_chunking():
    out = P.lm_lines(["aaa bbb ccc ddd", "x" * 25, "  "], 10)
    assert all(len(s) <= 10 for s in out)
    assert out[:2] == ["aaa bbb", "ccc ddd"] and "".join(out[2:]) == "x" * 25


def test_noisy_inputs_spares_specials():
    rng = np.random.default_rng(0)
    inp = np.array([[1, 5, 6, 3, 7, 0, 0]] * 2000)
    out = P.noisy_inputs(inp, 0.3, 20, rng)
    assert (out[:, [0, 3, 5, 6]] == inp[:, [0, 3, 5, 6]]).all()
    changed = (out != inp).mean(axis=0)[[1, 2, 4]]
    assert np.allclose(changed, 0.3 * (1 - 1 / 16), atol=0.03)
    assert P.noisy_inputs(inp, 0.0, 20, rng) is inp


def test_learning_rate_schedules():
    assert P.learning_rate(1e-3, 5, 100) == 1e-3
    assert P.learning_rate(1e-3, 5, 100, warmup=10) == pytest.approx(5e-4)
    assert P.learning_rate(1e-3, 10, 110, "cosine", 10) == pytest.approx(1e-3)
    assert P.learning_rate(1e-3, 60, 110, "cosine", 10) == pytest.approx(5e-4)
    assert P.learning_rate(1e-3, 110, 110, "cosine", 10) == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(ValueError):
        P.learning_rate(1e-3, 1, 10, "step")
