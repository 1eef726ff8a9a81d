from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from parahtr import tensor as T
from parahtr.decoder import (BOS_ID, EOS_ID, NEWLINE_ID, PAD_ID, DecoderConfig, beam_search, decoder_logits,
                             epsilon_schedule, forward_teacher_forced, generate_beam, generate_greedy,
                             generate_nucleus, greedy_search, init_decoder, make_batch, nucleus_filter,
                             nucleus_search, prepare_memory, scheduled_inputs, scheduled_sampling_forward,
                             sequence_loss)
from parahtr.encoder import EncoderConfig, VisualFeatures, encode, init_encoder
from parahtr.vocab import LmTokenizer, Vocabulary

from _oracles import brute_beam_best

ENC = EncoderConfig(image_size=32, patch_size=8, encoder_stride=8, hidden_size=16, num_heads=2,
                    intermediate_size=32)
DEC = DecoderConfig(num_layers=2, hidden_size=16, num_heads=2, intermediate_size=32, max_output_length=12)
V = 9


def model(seed=0):
    params = {**init_encoder(ENC, seed), **init_decoder(DEC, V, seed)}
    img = np.random.default_rng(seed).random((32, 32))
    return encode(img, ENC, params), params


# toy model: greedy takes "a" (0.5) but "b EOS" (0.4 * 0.9) is the best finished sequence
A, B = 4, 5
TOY_V = 6


def toy_logp(prefix):
    p = np.full(TOY_V, 1e-3)
    if len(prefix) == 0:
        p[A], p[B] = 0.5, 0.4
    elif prefix[-1] == A:
        p[A] = p[B] = p[EOS_ID] = 0.33
    elif prefix[-1] == B:
        p[EOS_ID] = 0.9
    else:
        p[EOS_ID] = 0.5
    return np.log(p / p.sum())


def toy_step(prefixes):
    return np.stack([toy_logp(list(row[1:])) for row in prefixes])


# ------------------------------------------------------------------ vocab

def test_vocab_bijection_and_newline():
    v = Vocabulary.from_texts(["ab c\nd,"])
    assert v.symbols[:4] == ["<pad>", "<bos>", "<eos>", "<nl>"]
    ids = v.encode_text("ab\nc", bos=True, eos=True)
    assert ids[0] == BOS_ID and ids[-1] == EOS_ID and NEWLINE_ID in ids
    assert v.decode_text(ids) == "ab\nc"
    assert v.encode(v.decode(ids)) == ids
    with pytest.raises(KeyError):
        v.encode_text("z")


@settings(max_examples=50, deadline=None)
@given(st.text(alphabet="abc ,.\n", min_size=1, max_size=20))
def test_vocab_text_round_trip(text):
    v = Vocabulary("abc ,.")
    assert v.decode_text(v.encode_text(text)) == text


def test_vocab_file_round_trip(tmp_path):
    v = Vocabulary.from_texts(["hello world"])
    v.save(tmp_path / "v.txt")
    assert Vocabulary.load(tmp_path / "v.txt") == v
    assert (tmp_path / "v.txt").read_text().startswith("#parahtr-vocab decoder <pad> <bos> <eos> <nl>\n")
    tok = LmTokenizer("abc")
    assert LmTokenizer.loads(tok.dumps()) == tok
    with pytest.raises(ValueError):
        LmTokenizer.loads(v.dumps())


def test_lm_tokenizer_unknowns():
    tok = LmTokenizer("abc")
    ids = tok.encode_text("abz")
    assert ids[0] == tok.bos_id and ids[-1] == tok.eos_id and ids[3] == tok.unk_id
    with pytest.raises(ValueError):
        tok.encode_text("a\nb")


# ------------------------------------------------------------ config/shape

def test_config_validation():
    with pytest.raises(ValueError):
        DecoderConfig(hidden_size=10, num_heads=3)
    with pytest.raises(ValueError):
        DecoderConfig(max_output_length=0)
    with pytest.raises(ValueError):
        DEC.check_encoder(32)


def test_teacher_forced_shapes_and_errors():
    feats, params = model()
    assert forward_teacher_forced(feats, [BOS_ID], DEC, params, "eval").shape == (1, V)
    assert forward_teacher_forced(feats, [BOS_ID, 4, 5], DEC, params, "eval").shape == (3, V)
    with pytest.raises(ValueError):
        forward_teacher_forced(feats, [4, 5], DEC, params)
    with pytest.raises(ValueError):
        forward_teacher_forced(feats, [BOS_ID] + [4] * 12, DEC, params)


def test_causality_exact():
    feats, params = model(1)
    rng = np.random.default_rng(0)
    for _ in range(10):
        tgt = np.concatenate([[BOS_ID], rng.integers(3, V, 10)])
        t = int(rng.integers(0, 10))
        other = tgt.copy()
        other[t + 1:] = rng.integers(3, V, 10 - t)
        a = forward_teacher_forced(feats, tgt, DEC, params, "eval").data
        b = forward_teacher_forced(feats, other, DEC, params, "eval").data
        assert np.array_equal(a[:t + 1], b[:t + 1])


def test_visual_tokens_matter():
    feats, params = model(2)
    tgt = [BOS_ID, 4, 5, 6]
    a = forward_teacher_forced(feats, tgt, DEC, params, "eval").data
    other = VisualFeatures(T.Tensor(feats.tokens.data + 0.5), feats.patch_grid)
    b = forward_teacher_forced(other, tgt, DEC, params, "eval").data
    assert (np.abs(a - b).max(axis=-1) > 0).all()


def test_make_batch_layout():
    inp, tgt = make_batch([[4, 5], [6]])
    np.testing.assert_array_equal(inp, [[BOS_ID, 4, 5], [BOS_ID, 6, PAD_ID]])
    np.testing.assert_array_equal(tgt, [[4, 5, EOS_ID], [6, EOS_ID, PAD_ID]])


def test_sequence_loss_uniform_start_and_grad():
    feats_img = np.random.default_rng(0).random((2, 32, 32))
    params = {**init_encoder(ENC, 0), **init_decoder(DEC, V, 0)}
    feats = encode(feats_img, ENC, params, "train")
    loss = sequence_loss(feats, [[4, 5, 6], [7]], DEC, params)
    assert abs(loss.item() - np.log(V)) < 0.1 * np.log(V)  # output layer starts near uniform
    T.backward(loss)
    assert all(p.grad is not None and np.abs(p.grad).sum() > 0 for k, p in params.items()
               if k.startswith("dec.") or k in ("enc.pos_embed", "enc.cls_token", "enc.distill_token"))


# ------------------------------------------------------- scheduled sampling

def test_scheduled_sampling_boundaries():
    feats, params = model(3)
    tgt = np.array([BOS_ID, 4, 5, 6, 7, 8])
    logits, used = scheduled_sampling_forward(feats, tgt, 1.0, 0, DEC, params, mode="eval")
    assert np.array_equal(logits.data, forward_teacher_forced(feats, tgt, DEC, params, "eval").data)
    assert used[1:].all() and not used[0]
    mixed, used0 = scheduled_inputs(feats, tgt, 0.0, 0, DEC, params)
    assert not used0.any()
    pred = np.argmax(forward_teacher_forced(feats, tgt, DEC, params, "eval").data, axis=-1)
    np.testing.assert_array_equal(mixed[1:], pred[:-1])
    with pytest.raises(ValueError):
        scheduled_inputs(feats, tgt, 1.5, 0, DEC, params)


def test_scheduled_sampling_rate():
    feats, params = model(4)
    tgt = np.concatenate([[BOS_ID], np.full(11, 4)])
    batch = np.tile(tgt, (1000, 1))
    feats_b = VisualFeatures(T.Tensor(np.broadcast_to(feats.tokens.data, (1000,) + feats.tokens.shape).copy()),
                             feats.patch_grid)
    _, used = scheduled_inputs(feats_b, batch, 0.5, 0, DEC, params)
    frac = used[:, 1:].mean()
    assert abs(frac - 0.5) < 0.02


def test_epsilon_schedule():
    assert epsilon_schedule(0, 10) == 1.0
    assert epsilon_schedule(9, 10) == pytest.approx(0.5)
    assert epsilon_schedule(5, 11) == pytest.approx(0.75)
    for sched in ("linear", "inverse_sigmoid"):
        vals = [epsilon_schedule(e, 20, sched) for e in range(20)]
        assert vals[0] == pytest.approx(1.0)
        assert all(a >= b for a, b in zip(vals, vals[1:])) and min(vals) >= 0.5
    with pytest.raises(ValueError):
        epsilon_schedule(10, 10)


# ----------------------------------------------------------------- search

def test_toy_greedy_and_beam_oracle():
    g = greedy_search(toy_step, 3)
    assert g.ids[0] == A
    best, score = brute_beam_best(toy_logp, TOY_V, EOS_ID, 3)
    assert best == [B, EOS_ID]
    b = beam_search(toy_step, 2, 0.0, 3)
    assert b.ids == best and b.log_prob == pytest.approx(score)
    assert b.confidences == pytest.approx([0.4 / (0.9 + 4e-3), 0.9 / (0.9 + 5e-3)], rel=1e-2)


def test_beam_dominates_greedy():
    for seed in range(5):
        feats, params = model(seed)
        g = generate_greedy(feats, DEC, params)
        b = generate_beam(feats, DEC, params, width=3, length_norm_alpha=0.0)
        assert (b.truncated, -b.log_prob) <= (g.truncated, -g.log_prob + 1e-9)


def test_beam_width_one_is_greedy():
    for seed in range(5):
        feats, params = model(seed)
        g = generate_greedy(feats, DEC, params)
        b = generate_beam(feats, DEC, params, width=1, length_norm_alpha=0.0)
        assert g.ids == b.ids
    with pytest.raises(ValueError):
        beam_search(toy_step, 0, 0.0, 3)


def test_generation_terminates_and_is_deterministic():
    feats, params = model(5)
    a, b = generate_greedy(feats, DEC, params), generate_greedy(feats, DEC, params)
    assert a.ids == b.ids and len(a.ids) <= DEC.max_output_length
    assert a.truncated == (a.ids[-1] != EOS_ID)
    assert all(0 < c <= 1 for c in a.confidences)
    n1 = generate_nucleus(feats, DEC, params, top_p=0.9, seed=3)
    n2 = generate_nucleus(feats, DEC, params, top_p=0.9, seed=3)
    assert n1.ids == n2.ids and len(n1.ids) <= DEC.max_output_length


def test_nucleus_tiny_top_p_is_greedy():
    feats, params = model(6)
    assert generate_nucleus(feats, DEC, params, top_p=1e-9, seed=0).ids == generate_greedy(feats, DEC, params).ids


def test_nucleus_filter_and_errors():
    p = np.array([0.1, 0.5, 0.15, 0.25])
    np.testing.assert_allclose(nucleus_filter(p, 0.7), [0, 0.5 / 0.75, 0, 0.25 / 0.75])
    np.testing.assert_allclose(nucleus_filter(p, 1.0), p)
    with pytest.raises(ValueError):
        nucleus_search(toy_step, 0.0, 1.0, np.random.default_rng(0), 3)
    with pytest.raises(ValueError):
        nucleus_search(toy_step, 0.5, 0.0, np.random.default_rng(0), 3)


def test_newline_tokens_reencode():
    v = Vocabulary("abc ")
    ids = v.encode_text("ab\nc a")
    assert v.encode_text(v.decode_text(ids)) == ids


def test_memory_reuse_matches_direct():
    feats, params = model(7)
    ids = np.array([[BOS_ID, 4, 5]])
    mem = prepare_memory(feats, DEC, params)
    direct = forward_teacher_forced(feats, ids[0], DEC, params, "eval").data
    np.testing.assert_array_equal(decoder_logits(ids, mem, DEC, params).data[0], direct)
