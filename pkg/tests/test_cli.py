import json

import pytest
from click.testing import CliRunner

from gradgibbs.cli import ConfigError, config_hash, expand_tasks, main, validate_config

FE = {"experiment": "free-energy",
      "potential": {"kind": "gaussian_gradient", "d": 1, "m": 1, "patch": "forward"},
      "domain": {"eps_list": [0.25, 0.125, 0.0625]},
      "constraint": {"formulations": ["lr_neighborhood"], "kappa": [0.5, 2.0], "L": [[[0.0]]]},
      "budget": {"sweeps": 1000}}


def write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


@pytest.fixture
def runner():
    return CliRunner()


def test_check_constants(runner):
    r = runner.invoke(main, ["check-constants", "--p", "2", "--m", "1", "--c", "1", "--C", "2", "--r", "2",
                             "--R0", "1", "--L", "1", "--d", "1"])
    assert r.exit_code == 0
    assert "B" in r.output and "12" in r.output


def test_validate_missing_potential():
    cfg = {k: v for k, v in FE.items() if k != "potential"}
    with pytest.raises(ConfigError, match="potential"):
        validate_config(cfg)


def test_validate_bad_formulation():
    cfg = json.loads(json.dumps(FE))
    cfg["constraint"]["formulations"] = ["nope"]
    with pytest.raises(ConfigError, match=r"constraint.formulations\[0\]"):
        validate_config(cfg)


def test_hash_ignores_output():
    a = validate_config(FE)
    b = validate_config({**FE, "output": "elsewhere"})
    assert config_hash(a, 0) == config_hash(b, 0)
    assert config_hash(a, 0) != config_hash(a, 1)
    assert len(expand_tasks(a)) == 2


def test_bad_config_exit_2(runner, tmp_path):
    r = runner.invoke(main, ["run", write(tmp_path, {"experiment": "free-energy"})])
    assert r.exit_code == 2
    assert "potential" in r.output
    bad = tmp_path / "broken.json"
    bad.write_text("{not json")
    assert runner.invoke(main, ["run", str(bad)]).exit_code == 2


def test_run_skip_and_determinism(runner, tmp_path):
    cfg = write(tmp_path, FE)
    out1, out2 = tmp_path / "a", tmp_path / "b"
    r = runner.invoke(main, ["run", cfg, "--workers", "1", "--out", str(out1)])
    assert r.exit_code == 0, r.output
    assert runner.invoke(main, ["run", cfg, "--workers", "2", "--out", str(out2)]).exit_code == 0
    assert (out1 / "records.jsonl").read_bytes() == (out2 / "records.jsonl").read_bytes()
    assert list(out1.glob("free-energy_*.csv"))
    again = runner.invoke(main, ["run", cfg, "--workers", "1", "--out", str(out1)])
    assert again.exit_code == 0 and "skipped" in again.output
    assert len((out1 / "records.jsonl").read_text().splitlines()) == 2
    forced = runner.invoke(main, ["run", cfg, "--workers", "1", "--out", str(out1), "--force"])
    assert forced.exit_code == 0
    assert len((out1 / "records.jsonl").read_text().splitlines()) == 4


def test_output_env_override(runner, tmp_path, monkeypatch):
    monkeypatch.setenv("GRADGIBBS_OUT", str(tmp_path / "env"))
    r = runner.invoke(main, ["run", write(tmp_path, FE), "--workers", "1"])
    assert r.exit_code == 0
    assert (tmp_path / "env" / "records.jsonl").exists()


def test_report(runner, tmp_path):
    assert runner.invoke(main, ["report", str(tmp_path)]).exit_code == 1
    out = tmp_path / "runs"
    runner.invoke(main, ["run", write(tmp_path, FE), "--workers", "1", "--out", str(out)])
    r = runner.invoke(main, ["report", str(tmp_path)])
    assert r.exit_code == 0
    assert "free-energy (2 records)" in r.output
    assert "NON-MONOTONE" not in r.output
    assert (tmp_path / "report" / "free-energy.csv").exists()
    assert (tmp_path / "report" / "kappa-sweep.csv").exists()


def test_report_flags_kappa_increase(runner, tmp_path):
    def rec(kappa, value):
        return {"config_hash": "x" * 64, "experiment": "free-energy", "task_id": int(kappa), "seed": 0,
                "task": {"kappa": kappa}, "verdict": {}, "error": None,
                "result": {"formulation": "lr_neighborhood", "L": [[0.0]], "kappa": kappa, "value": value,
                           "se": 0.01, "eps_list": [0.25], "per_eps": [value], "per_eps_se": [0.0]}}

    (tmp_path / "records.jsonl").write_text("\n".join(json.dumps(rec(k, v)) for k, v in [(1.0, -1.0), (2.0, 0.5)]))
    r = runner.invoke(main, ["report", str(tmp_path)])
    assert r.exit_code == 0
    assert "NON-MONOTONE" in r.output
