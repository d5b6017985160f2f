import json

import pytest

from trigmark.config import ConfigError, build, default_config, dump_config, load_config, override_seed, validate_config


def test_default_round_trip(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(dump_config(default_config()))
    cfg = load_config(path)
    assert cfg == validate_config(default_config())
    p = build(cfg)
    assert p.model_id == "toy-seed7"
    assert p.module_id == "transform-toy-seed7-seed7"


def test_shipped_config_matches_defaults():
    from pathlib import Path

    shipped = Path(__file__).resolve().parents[1] / "configs" / "default.json"
    assert json.loads(shipped.read_text()) == default_config()


def test_missing_seed_named():
    raw = default_config()
    del raw["triggers"]["noise"]["seed"]
    with pytest.raises(ConfigError, match="triggers.noise.seed"):
        validate_config(raw)


def test_unknown_field_named():
    raw = default_config()
    raw["transform"]["learning_rat"] = 1
    with pytest.raises(ConfigError, match="transform.learning_rat"):
        validate_config(raw)
    raw = default_config()
    raw["extra"] = {}
    with pytest.raises(ConfigError, match="extra"):
        validate_config(raw)


@pytest.mark.parametrize("section,key,value,needle", [
    ("transform", "epochs", "many", "transform.epochs"),
    ("encoder", "standardize", 1, "encoder.standardize"),
    ("verify", "mode", "vibes", "verify.mode"),
    ("verify", "aggregate_threshold", 0.0, "verify.aggregate_threshold"),
    ("attack", "forger", "nobody", "attack.forger"),
    ("transform", "eta", 5.0, "eta"),
])
def test_bad_values(section, key, value, needle):
    raw = default_config()
    raw[section][key] = value
    with pytest.raises(ConfigError, match=needle):
        validate_config(raw)


def test_override_seed():
    cfg = override_seed(validate_config(default_config()), 11)
    assert cfg["encoder"]["seed"] == 11 and cfg["triggers"]["patch"]["seed"] == 11
    assert cfg["sweep"]["seeds"] == [11]
    assert build(cfg).model_id == "toy-seed11"


def test_bad_files(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_config(tmp_path / "nope.json")
    (tmp_path / "bad.json").write_text("{")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "bad.json")
