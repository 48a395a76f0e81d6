from pathlib import Path

import pandas as pd
import pytest

from cli import main
from errors import EXIT_ACCEPTANCE, EXIT_CONFIG, EXIT_OK, EXIT_PRECONDITION
from reporting import SCHEMA_VERSION, load_report, strip_timestamp

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def _config(name: str) -> str:
    return str(CONFIGS / f"{name}.toml")


def test_reproduce_all_examples(tmp_path):
    assert main(["reproduce", "--example", "all", "--out", str(tmp_path), "--format", "json,csv",
                 "--self-check"]) == EXIT_OK
    report = load_report(tmp_path / "reproduce.json")
    assert report["schema_version"] == SCHEMA_VERSION
    assert report["config"] is None
    assert set(report["result"]) == {"no-l2", "one-sided", "novikov-fails", "no-factorisation"}
    assert all(entry["reproduced"] for entry in report["result"].values())
    table = pd.read_csv(tmp_path / "reproduce.csv")
    assert (table["verdict"] == table["expected"]).all()


def test_girsanov_refuses_divergent_norm(tmp_path):
    code = main(["girsanov", "--config", _config("no_l2"), "--out", str(tmp_path), "--replicas", "10"])
    assert code == EXIT_PRECONDITION
    report = load_report(tmp_path / "girsanov.json")
    assert report["result"]["status"] == "refused"
    assert report["result"]["verdict"]["witness"]["index"] >= 1


def test_zero_noise_paths_are_zero(tmp_path):
    assert main(["simulate", "--config", _config("zero_noise"), "--out", str(tmp_path)]) == EXIT_OK
    for r in range(3):
        frame = pd.read_csv(tmp_path / f"path_{r:05d}.csv")
        assert list(frame.columns) == ["time", "mode_1", "mode_2", "mode_3", "mode_4"]
        assert (frame.drop(columns="time").to_numpy() == 0).all()
    assert (tmp_path / "stats.csv").exists()
    assert not (tmp_path / "path_00000.json").exists()


def test_check_is_deterministic_modulo_timestamp(tmp_path):
    args = ["check", "--config", _config("m1"), "--out", str(tmp_path)]
    assert main(args) == EXIT_OK
    first = load_report(tmp_path / "check.json")
    assert main(args) == EXIT_OK
    second = load_report(tmp_path / "check.json")
    assert strip_timestamp(first) == strip_timestamp(second)
    assert first["result"]["equivalence"] == "mutual"
    assert first["config_hash"] == second["config_hash"]
    assert first["master_seed"] == 20240601


def test_check_symbolic_counterexample(tmp_path):
    assert main(["check", "--config", _config("no_l2"), "--out", str(tmp_path)]) == EXIT_OK
    result = load_report(tmp_path / "check.json")["result"]
    assert result["hs"]["converged"] is True
    assert result["cm[A->Atilde]"]["representable"] is False
    assert result["equivalence"] == "undetermined"


def test_rigidity_command(tmp_path):
    code = main(["rigidity", "--config", _config("pure_jump"), "--out", str(tmp_path), "--replicas", "20",
                 "--self-check"])
    assert code == EXIT_OK
    result = load_report(tmp_path / "rigidity.json")["result"]
    assert result["jumps_recovered"] is True
    assert result["replicas"] == 20
    assert len(pd.read_csv(tmp_path / "residuals.csv")) == 20


def test_girsanov_small_run_writes_weights(tmp_path):
    code = main(["girsanov", "--config", _config("m1"), "--out", str(tmp_path), "--replicas", "100"])
    assert code == EXIT_OK
    report = load_report(tmp_path / "girsanov.json")
    assert set(report["result"]["reports"]) == {"coordinate", "squared-norm"}
    weights = pd.read_csv(tmp_path / "weights_coordinate.csv")
    assert list(weights.columns) == ["replica", "weight", "log_weight", "functional"]
    assert (weights["weight"] > 0).all()


def test_bad_config_exits_with_config_code(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text("[model]\na = [1.0]\na_tilde = [1.0]\nq = [0.0]\n", encoding="utf-8")
    assert main(["check", "--config", str(bad), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert main(["simulate", "--config", str(tmp_path / "missing.toml")]) == EXIT_CONFIG


def test_unknown_subcommand_is_rejected():
    with pytest.raises(SystemExit):
        main(["nonsense"])


def test_check_without_gaussian_channel(tmp_path):
    assert main(["check", "--config", _config("pure_jump"), "--out", str(tmp_path)]) == EXIT_OK
    assert load_report(tmp_path / "check.json")["result"]["equivalence"] == "singular"
    assert main(["check", "--config", _config("zero_noise"), "--out", str(tmp_path)]) == EXIT_OK
    assert load_report(tmp_path / "check.json")["result"]["equivalence"] == "equal"


def test_self_check_failure_exits_with_acceptance_code(tmp_path):
    # a reconstruction threshold above every mark hides all jumps
    text = (CONFIGS / "pure_jump.toml").read_text(encoding="utf-8")
    config = tmp_path / "blind.toml"
    config.write_text(text.replace("master_seed = 11", "master_seed = 11\nepsilon = 1e6"), encoding="utf-8")
    args = ["rigidity", "--config", str(config), "--out", str(tmp_path), "--replicas", "10"]
    assert main(args) == EXIT_OK
    assert load_report(tmp_path / "rigidity.json")["result"]["jumps_recovered"] is False
    assert main(args + ["--self-check"]) == EXIT_ACCEPTANCE


def test_simulate_is_byte_identical_for_a_fixed_seed(tmp_path):
    outputs = []
    for run in ("first", "second"):
        out = tmp_path / run
        assert main(["simulate", "--config", _config("m1"), "--out", str(out), "--replicas", "4",
                     "--format", "json,csv"]) == EXIT_OK
        outputs.append(out)
    names = sorted(p.name for p in outputs[0].glob("path_*")) + ["stats.csv"]
    assert "path_00000.json" in names
    for name in names:
        assert (outputs[0] / name).read_bytes() == (outputs[1] / name).read_bytes()


def test_simulate_symbolic_model_with_underflowing_covariance(tmp_path):
    assert main(["simulate", "--config", _config("no_l2"), "--out", str(tmp_path), "--replicas", "3",
                 "--format", "csv"]) == EXIT_OK
    frame = pd.read_csv(tmp_path / "path_00000.csv")
    assert list(frame.columns)[-1] == "mode_27"
