from pathlib import Path

import pytest

from back.exceptions import ConfigurationError
from config import DEFAULT_ALPHAS, Config, PipelineConfig


def test_defaults():
    config = PipelineConfig.build()
    assert config.zeta == 100
    assert config.alpha == 0.998
    assert (config.eta1, config.eta2) == (0.3, 5.0)
    assert config.strategy == "attention"
    assert (config.tmin, config.tmax) == (0.05, 20.0)
    assert config.alphas == DEFAULT_ALPHAS
    assert (config.imbalance_factor, config.gamma, config.memorization) == (100.0, 2.5, 1.0)


@pytest.mark.parametrize(
    "fields",
    [
        {"eta1": 6.0},
        {"tmin": 5.0, "tmax": 1.0},
        {"alpha": 1.5},
        {"zeta": 0},
        {"alphas": [0.9, 1.1]},
        {"strategy": "nearest"},
        {"unknown": 1},
        {"memorization": -0.5},
    ],
)
def test_invalid_fields(fields):
    with pytest.raises(ConfigurationError):
        PipelineConfig.build(**fields)


def test_file_round_trip(tmp_path):
    config = PipelineConfig.build(
        train=tmp_path / "train.json", test=[tmp_path / "a.json", tmp_path / "b.json"], alpha=0.995, seed=2**63
    )
    path = config.save(tmp_path / "config.json")
    assert PipelineConfig.load(path) == config


def test_overrides_win(tmp_path):
    path = PipelineConfig.build(alpha=0.995, bins=10).save(tmp_path / "config.json")
    config = PipelineConfig.load(path, {"bins": 20})
    assert config.alpha == 0.995
    assert config.bins == 20


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigurationError, match="not found"):
        PipelineConfig.load(tmp_path / "nope.json")


def test_malformed_config_file(tmp_path):
    path = tmp_path / "config.json"
    path.write_text("[1, 2]")
    with pytest.raises(ConfigurationError, match="JSON object"):
        PipelineConfig.load(path)


def test_worker_count(monkeypatch):
    monkeypatch.setattr(Config, "THREADS", "3")
    assert Config.worker_count() == 3
    monkeypatch.setattr(Config, "THREADS", "0")
    with pytest.raises(ConfigurationError):
        Config.worker_count()
    monkeypatch.setattr(Config, "THREADS", "")
    assert Config.worker_count() >= 1


def test_bad_log_level(monkeypatch):
    monkeypatch.setattr(Config, "LOG_LEVEL", "LOUD")
    with pytest.raises(ConfigurationError):
        Config.validate()
