from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from parahtr.lm import LmConfig, init_lm, mlm_corrupt, mlm_loss, refine
from parahtr.vocab import LmTokenizer

from _fixtures import TINY_LM, cat_lm, qu_lm, qu_probe, train_lm

TOK = LmTokenizer("abcdefghijklmnopqrstuvwxyz .,")


def test_config_validation_and_paper_preset():
    with pytest.raises(ValueError):
        LmConfig(hidden_size=30, num_heads=4)
    with pytest.raises(ValueError):
        LmConfig(position_embedding="relative")
    p = LmConfig.paper()
    assert (p.num_layers, p.hidden_size, p.num_heads, p.max_seq_length, p.dropout, p.vocab_size) == \
        (6, 768, 12, 512, 0.10, 50_026)
    with pytest.raises(ValueError):
        init_lm(LmConfig())  # vocab size unset


def test_corrupt_rate_specials_and_split():
    ids = TOK.encode_text("ab" * 5000)
    c = mlm_corrupt(ids, 0.15, 0, TOK)
    assert abs(c.positions.size / 10_000 - 0.15) < 0.01
    assert 0 not in c.positions and len(ids) - 1 not in c.positions
    new = c.ids[c.positions]
    old = np.asarray(ids)[c.positions]
    masked = (new == TOK.mask_id).mean()
    kept = (new == old).mean()
    assert abs(masked - 0.8) < 0.03 and abs(kept - 0.1 - (1 / (len(TOK) - 5)) * 0.1) < 0.03
    assert not np.isin(c.ids[c.positions], [TOK.pad_id, TOK.bos_id, TOK.eos_id, TOK.unk_id]).any()


def test_corrupt_deterministic_and_limits():
    ids = TOK.encode_text("hello world")
    a, b = mlm_corrupt(ids, 0.3, 5, TOK), mlm_corrupt(ids, 0.3, 5, TOK)
    assert np.array_equal(a.ids, b.ids) and np.array_equal(a.positions, b.positions)
    tiny = mlm_corrupt(ids, 1e-12, 0, TOK)
    assert tiny.empty and tiny.positions.size == 0 and np.array_equal(tiny.ids, ids)
    with pytest.raises(ValueError):
        mlm_corrupt(ids, 0.0, 0, TOK)


def test_mlm_loss_start_skip_and_length():
    cfg = TINY_LM.for_tokenizer(TOK)
    params = init_lm(cfg, 0)
    vals = [mlm_loss("the quick brown fox", cfg, params, TOK, 0.5, seed=s).value.item() for s in range(5)]
    assert abs(np.mean(vals) - np.log(len(TOK))) < 0.1 * np.log(len(TOK))
    skipped = mlm_loss("ab", cfg, params, TOK, 1e-12, seed=0)
    assert skipped.skipped and skipped.num_targets == 0
    with pytest.raises(ValueError):
        mlm_loss("x" * 40, cfg, params, TOK)


def test_mlm_training_reduces_loss():
    lines = [f"line {w} of the toy corpus" for w in ("one", "two", "six", "ten", "red")] * 10
    _, _, _, losses = train_lm(lines, 300)
    assert np.mean(losses[-20:]) <= 0.4 * np.mean(losses[:5])


def test_qu_probe():
    cfg, params, tok, _ = qu_lm()
    assert qu_probe(cfg, params, tok) > 0.9


def test_refine_corrects_low_confidence_char():
    cfg, params, tok = cat_lm()
    conf = [0.99] * 10 + [0.1]
    out = refine("the cat saX", conf, 0.5, 2, cfg, params, tok)
    assert out.text == "the cat sat" and out.lm_calls >= 1
    assert refine(out.text, conf, 0.5, 2, cfg, params, tok).text == out.text


def test_refine_no_op_paths():
    cfg, params, tok = cat_lm()
    r = refine("the cat saX", [0.9] * 11, 0.5, 2, cfg, params, tok)
    assert r.text == "the cat saX" and r.lm_calls == 0
    r0 = refine("the cat saX", [0.1] * 11, 0.5, 0, cfg, params, tok)
    assert r0.text == "the cat saX" and r0.lm_calls == 0
    assert refine("ab", [0.9, 0.9], 0.5).lm_calls == 0  # no model needed when nothing is uncertain
    with pytest.raises(ValueError):
        refine("abc", [0.1, 0.2], 0.5, 2, cfg, params, tok)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.text(alphabet="the cats", min_size=0, max_size=14), min_size=1, max_size=3),
       st.data())
def test_refine_preserves_confident_tokens_and_lines(lines, data):
    cfg, params, tok = cat_lm()
    text = "\n".join(lines)
    conf = data.draw(st.lists(st.floats(0.0, 1.0), min_size=len(text), max_size=len(text)))
    out = refine(text, conf, 0.5, 2, cfg, params, tok)
    assert len(out.text) == len(text)
    assert out.text.count("\n") == text.count("\n")
    for a, b, c in zip(text, out.text, conf):
        if c >= 0.5 or a == "\n":
            assert a == b
    assert refine(out.text, conf, 0.5, 2, cfg, params, tok).text == out.text
