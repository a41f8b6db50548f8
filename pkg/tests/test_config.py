# tests/test_config.py
import pytest

from config import RunConfig, build_config, config_hash, get_dotted, load_config, parse_override, with_override
from conftest import ROOT_DIR
from errors import ConfigurationError


def test_defaults_follow_reference_setup():
    config = RunConfig()
    assert config.encoder.dim == 384
    assert (config.alignment.h, config.alignment.d_k) == (4, 384)
    assert config.preferences.m == 5
    assert config.trainer.learning_rate == 0.001
    assert config.trainer.batch_size == 128
    assert config.backbone.dropout == 0.5
    assert config.sequence.n == 50
    assert config.evaluator.ks == [5, 10]
    assert config.alignment_dropout == 0.5


@pytest.mark.parametrize("raw, expected", [
    ("alignment.h=2", ("alignment.h", 2)),
    ("trainer.learning_rate=0.01", ("trainer.learning_rate", 0.01)),
    ("alignment.enabled=false", ("alignment.enabled", False)),
    ("evaluator.ks=[1, 5]", ("evaluator.ks", [1, 5])),
    ("output_dir=outputs/x", ("output_dir", "outputs/x")),
])
def test_parse_override_reads_toml_literals(raw, expected):
    assert parse_override(raw) == expected


def test_override_without_equals_is_rejected():
    with pytest.raises(ConfigurationError):
        parse_override("alignment.h")


def test_overrides_and_seed_apply_before_validation():
    config = build_config({"alignment": {"h": 8}}, ["alignment.h=2", "sequence.n=20"], seed=5)
    assert config.alignment.h == 2
    assert config.sequence.n == 20
    assert config.seed == 5


def test_unknown_key_is_a_configuration_error():
    with pytest.raises(ConfigurationError):
        build_config({}, ["alignment.heads=2"])


def test_negative_learning_rate_rejected_but_zero_allowed():
    with pytest.raises(ConfigurationError):
        build_config({}, ["trainer.learning_rate=-0.1"])
    assert build_config({}, ["trainer.learning_rate=0"]).trainer.learning_rate == 0


def test_backbone_heads_must_divide_dim():
    with pytest.raises(ConfigurationError):
        build_config({}, ["encoder.dim=10", "backbone.heads=3"])


def test_ndcg_at_10_is_always_evaluated():
    assert build_config({}, ["evaluator.ks=[5]"]).evaluator.ks == [5, 10]


def test_shipped_configs_validate():
    for name in ("default.toml", "movielens.toml", "fixture.toml", "synthetic.toml"):
        load_config(ROOT_DIR / "configs" / name)


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigurationError):
        load_config(tmp_path / "nope.toml")


def test_with_override_and_get_dotted():
    config = with_override(RunConfig(), "preferences.m", 3)
    assert get_dotted(config, "preferences.m") == 3


def test_config_hash_is_stable_and_sensitive():
    a, b = RunConfig(), RunConfig()
    assert config_hash(a) == config_hash(b)
    assert config_hash(a) != config_hash(with_override(a, "seed", 1))
