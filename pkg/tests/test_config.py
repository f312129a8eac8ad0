from __future__ import annotations

import pytest

from multirecon.config import RunConfig, apply_overrides, load_config
from multirecon.errors import ConfigError


def test_defaults_validate_and_roundtrip(tmp_path):
    cfg = load_config()
    cfg.save(tmp_path / "c.yaml")
    assert load_config(tmp_path / "c.yaml") == cfg


def test_unknown_keys_are_rejected(tmp_path):
    (tmp_path / "c.yaml").write_text("optim:\n  lr_fieldd: 1.0\n")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "c.yaml")
    with pytest.raises(ConfigError):
        load_config(overrides=["nosuch.key=1"])
    with pytest.raises(ConfigError):
        load_config(overrides=["optim.lr_field=-1"])


def test_precedence_defaults_file_overrides_flags(tmp_path):
    (tmp_path / "c.yaml").write_text("seed: 5\noptim:\n  lr_field: 0.01\n  outer_loops: 7\n")
    cfg = load_config(tmp_path / "c.yaml", ["optim.lr_field=0.02", "seed=6"], seed=9)
    assert cfg.optim.outer_loops == 7  # file over default
    assert cfg.optim.lr_field == 0.02  # override over file
    assert cfg.seed == 9  # flag over override
    assert cfg.optim.lr_pose == RunConfig().optim.lr_pose  # default kept


def test_override_parsing():
    out = apply_overrides({}, ["a.b=3", "a.c=[1, 2]", "d=null", "e=text"])
    assert out == {"a": {"b": 3, "c": [1, 2]}, "d": None, "e": "text"}
    with pytest.raises(ConfigError):
        apply_overrides({}, ["novalue"])


def test_cross_field_validation():
    with pytest.raises(ConfigError):
        load_config(overrides=["segmenter.kind=external"])
    with pytest.raises(ConfigError):
        load_config(overrides=["init.source=file"])


def test_threads_resolution(monkeypatch):
    monkeypatch.delenv("MULTIRECON_THREADS", raising=False)
    assert load_config().resolved_threads() == 1
    monkeypatch.setenv("MULTIRECON_THREADS", "3")
    assert load_config().resolved_threads() == 3
    assert load_config(threads=2).resolved_threads() == 2
    monkeypatch.setenv("MULTIRECON_THREADS", "x")
    with pytest.raises(ConfigError):
        load_config().resolved_threads()
