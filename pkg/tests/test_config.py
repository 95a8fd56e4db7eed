import pytest

from onedc.config import LAMBDA_PRESETS, load_config
from onedc.errors import ConfigError


def test_defaults_match_presets():
    cfg = load_config()
    assert cfg.lambda_value(0) == 1.8
    assert cfg.lambda_value(3) == 7.4
    assert LAMBDA_PRESETS == (1.8, 2.9, 4.6, 7.4)
    assert cfg.train.stage1.alpha == 0.001
    s2 = cfg.train.stage2
    assert (s2.beta, s2.gamma, s2.sigma_disc) == (0.625, 0.001, 0.01)
    assert (s2.t_min, s2.t_max, s2.update_ratio) == (20, 640, 10)
    assert cfg.train.stage2.lr == 1e-6


def test_unknown_key_rejected(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("data:\n  rootpath: nope\n")
    with pytest.raises(ConfigError, match="rootpath"):
        load_config(str(bad))


def test_unknown_section_rejected(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("dataa:\n  root: x\n")
    with pytest.raises(ConfigError):
        load_config(str(bad))


def test_hash_covers_values():
    a = load_config()
    b = load_config(overrides={"train": {"seed": 1}})
    assert a.config_hash() != b.config_hash()
    assert a.config_hash() == load_config().config_hash()


def test_lambda_index_out_of_range():
    cfg = load_config()
    with pytest.raises(ConfigError):
        cfg.lambda_value(4)
    assert cfg.lambda_value(4, custom=0.5) == 0.5


def test_crop_probs_validated():
    with pytest.raises(ConfigError):
        load_config(overrides={"data": {"crop_probs": [0.5, 0.4]}})
    with pytest.raises(ConfigError):
        load_config(overrides={"data": {"crop_sizes": [64]}})


def test_asset_dir_env_override(monkeypatch):
    cfg = load_config()
    monkeypatch.setenv("ONEDC_ASSET_DIR", "/elsewhere")
    assert cfg.asset_dir() == "/elsewhere"
