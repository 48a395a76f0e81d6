import json
import logging
from pathlib import Path

import numpy as np
import pytest

from config import load_config, resolve_log_level, resolve_workers, validate_config
from errors import ConfigError
from levy import JumpKind
from spectral_core import SequenceModel

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

MINIMAL = """\
[model]
a = [1.0, 4.0]
a_tilde = [2.0, 5.0]
q = [1.0, 0.25]

[grid]
T = 1.0
base_steps = {steps}
"""


def test_m1_config_builds_the_default_model():
    config = load_config(CONFIGS / "m1.toml")
    model = config.build_model()
    n = np.arange(1, 9, dtype=float)
    np.testing.assert_allclose(model.a, n ** 2)
    np.testing.assert_allclose(model.a_tilde, n ** 2 + 1)
    np.testing.assert_allclose(model.q, n ** -2.0)
    levy = config.build_levy()
    assert levy.gaussian_enabled and levy.rate_lambda == 1.0
    assert levy.jump_law.kind is JumpKind.DIAGONAL_GAUSSIAN
    np.testing.assert_allclose(levy.jump_law.sigma, 1.0 / n)
    assert config.output.formats == ["csv", "json"]


@pytest.mark.parametrize("name", ["m1", "null", "one_sided", "no_l2", "pure_jump", "zero_noise"])
def test_shipped_configs_validate(name):
    config = load_config(CONFIGS / f"{name}.toml")
    assert config.build_levy().dim == config.model.size


def test_symbolic_config_stays_lazy():
    config = load_config(CONFIGS / "one_sided.toml")
    model = config.build_model()
    assert isinstance(model, SequenceModel)
    assert model.dim == 64


def test_json_round_trip_preserves_hash(tmp_path):
    config = load_config(CONFIGS / "pure_jump.toml")
    path = tmp_path / "pure_jump.json"
    path.write_text(json.dumps(config.resolved(), indent=2), encoding="utf-8")
    again = load_config(path)
    assert again.config_hash() == config.config_hash()
    assert again.resolved() == config.resolved()


def test_overrides_change_the_hash():
    config = load_config(CONFIGS / "m1.toml")
    changed = config.with_overrides(seed=5, replicas=10, out="elsewhere", formats=["json"])
    assert changed.run.master_seed == 5
    assert changed.run.replicas == 10
    assert changed.output.directory == "elsewhere"
    assert changed.config_hash() != config.config_hash()
    assert config.with_overrides().config_hash() == config.config_hash()


def test_validation_error_names_field_and_line(tmp_path):
    path = tmp_path / "bad.toml"
    path.write_text(MINIMAL.format(steps=0), encoding="utf-8")
    with pytest.raises(ConfigError) as info:
        load_config(path)
    assert info.value.field == "grid.base_steps"
    assert info.value.line == 8
    assert info.value.exit_code == 2


def test_unknown_keys_are_rejected(tmp_path):
    path = tmp_path / "extra.toml"
    path.write_text(MINIMAL.format(steps=4) + "bogus = 1\n", encoding="utf-8")
    with pytest.raises(ConfigError) as info:
        load_config(path)
    assert info.value.field == "grid.bogus"
    assert info.value.line == 9


def test_toml_syntax_error_reports_line(tmp_path):
    path = tmp_path / "broken.toml"
    path.write_text("[model]\na = = 1\nq = 2\n", encoding="utf-8")
    with pytest.raises(ConfigError) as info:
        load_config(path)
    assert info.value.line is not None


def test_model_section_rules():
    base = {"a": [1.0, 2.0], "a_tilde": [1.0, 2.0], "q": [1.0, 1.0]}
    with pytest.raises(ConfigError):
        validate_config({"model": {**base, "a": "n + x"}})
    with pytest.raises(ConfigError):
        validate_config({"model": {**base, "q": [1.0]}})
    with pytest.raises(ConfigError):
        validate_config({"model": {**base, "dim": 3}})
    with pytest.raises(ConfigError):
        validate_config({"model": {"a": "n", "a_tilde": "n", "q": "1", "symbolic": True}})
    with pytest.raises(ConfigError) as info:
        validate_config({"model": base, "levy": {"rate": 1.0}})
    assert info.value.field == "levy"
    with pytest.raises(ConfigError):
        validate_config({"model": base, "output": {"formats": ["xml"]}})


def test_missing_file():
    with pytest.raises(ConfigError):
        load_config(CONFIGS / "does_not_exist.toml")


def test_environment_settings(monkeypatch):
    monkeypatch.setenv("OU_LEVY_THREADS", "3")
    assert resolve_workers() == 3
    monkeypatch.setenv("OU_LEVY_THREADS", "zero")
    with pytest.raises(ConfigError):
        resolve_workers()
    monkeypatch.setenv("OU_LEVY_LOG_LEVEL", "warning")
    assert resolve_log_level() == logging.WARNING
    assert resolve_log_level(verbose=True) == logging.DEBUG
