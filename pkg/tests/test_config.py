from __future__ import annotations

import pytest

from parahtr.config import ConfigError, ExperimentConfig, PAPER_ENCODER, PAPER_LM, parse_flat


def test_round_trip_and_digest(tmp_path):
    cfg = ExperimentConfig.desk(seed=7)
    path = tmp_path / "exp.cfg"
    cfg.save(path)
    back = ExperimentConfig.load(path)
    assert back == cfg and back.digest() == cfg.digest()
    assert ExperimentConfig.desk(seed=8).digest() != cfg.digest()


def test_overrides_coerce_types():
    cfg = ExperimentConfig.loads("""
        # comment
        seed = 3
        train.lr = 0.01   # trailing comment
        train.unfreeze_lm = yes
        decode.strategy = beam
        encoder.num_layers = 3
    """)
    assert cfg.seed == 3 and cfg.train.lr == 0.01 and cfg.train.unfreeze_lm is True
    assert cfg.decode.strategy == "beam" and cfg.encoder.num_layers == 3


@pytest.mark.parametrize("text", [
    "trian.lr = 1",             # unknown section
    "train.learning_rate = 1",  # unknown field
    "seed.x = 1",
    "seed = one",
    "train.unfreeze_lm = maybe",
    "seed = 1\nseed = 2",
    "no equals sign",
    "decode.strategy = viterbi",
    "scale = huge",
    "encoder.hidden_size = 30",  # not divisible by heads
])
def test_bad_configs_raise(text):
    with pytest.raises(ConfigError):
        ExperimentConfig.loads(text)


def test_paper_preset_constants():
    cfg = ExperimentConfig.paper()
    for k, v in PAPER_ENCODER.items():
        assert getattr(cfg.encoder, k) == v
    for k, v in PAPER_LM.items():
        assert getattr(cfg.lm, k) == v
    assert ExperimentConfig.loads("scale = paper") == cfg
    with pytest.raises(ConfigError):
        ExperimentConfig.loads("scale = paper\nencoder.num_layers = 4")
    assert ExperimentConfig().with_scale("paper").encoder == cfg.encoder


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        ExperimentConfig.load(tmp_path / "nope.cfg")


def test_parse_flat_strips():
    assert parse_flat("  a = b c  \n\n# x\n") == {"a": "b c"}
