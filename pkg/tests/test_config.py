import pytest

from hmamba import config
from hmamba.config import ConfigError


def test_defaults_round_trip(tmp_path):
    p = tmp_path / "c.toml"
    config.write_snapshot(config.DEFAULTS, p)
    assert config.resolve(config.load_config(p)) == config.DEFAULTS


def test_sections_flatten_and_override(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text('seed = 3\n[model]\nd = 8\nk = 2\n[train]\nlr = 0.01\n', encoding="utf-8")
    cfg = config.resolve(config.load_config(p), {"model.d": "12", "seed": None, "eval.ks": "5,10"})
    assert cfg["seed"] == 3 and cfg["model.d"] == 12 and cfg["model.k"] == 2.0
    assert cfg["train.lr"] == 0.01 and cfg["eval.ks"] == [5, 10]


@pytest.mark.parametrize("overrides", [
    {"model.width": 3},
    {"model.d": "eight"},
    {"model.d": 2.5},
    {"eval.exclude_history": "maybe"},
    {"config_version": 2},
])
def test_bad_values(overrides):
    with pytest.raises(ConfigError):
        config.resolve(None, overrides)


def test_bad_toml(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text("seed = \n", encoding="utf-8")
    with pytest.raises(ConfigError):
        config.load_config(p)


def test_snapshot_sorted_and_stable():
    text = config.dumps(config.DEFAULTS)
    keys = [line.split(" = ")[0] for line in text.splitlines()]
    assert keys == sorted(keys)
    assert config.dumps(config.DEFAULTS) == text


def test_model_config_and_output_root(monkeypatch):
    cfg = config.resolve(None, {"model.d": 6})
    mc = config.model_config(cfg, 11, "half")
    assert mc.d == 6 and mc.variant == "half" and mc.vocab_size == 11
    monkeypatch.setenv(config.OUTPUT_ROOT_ENV, "/tmp/root")
    assert str(config.output_dir(cfg)) == "/tmp/root/runs"
    assert str(config.output_dir({"output.dir": "/abs"})) == "/abs"
