import csv
import json

import pytest

from pullback_lab.cli import main
from pullback_lab.experiments import (SUITES, ConfigError, ExperimentConfig, HashMismatchError,
                                      ResultRecord, emit_plot_data, load_record, metrics_equal,
                                      replay, run_dir, run_suite)
from pullback_lab.model import ModelConfig
from pullback_lab.process import EvolutionSpec


def small(suite="simulate", **kw):
    return ExperimentConfig(suite, model=ModelConfig(n_modes=8), **kw)


def test_every_suite_has_a_default_config():
    for s in SUITES:
        cfg = ExperimentConfig(s)
        assert cfg.tolerances and all(v > 0 for v in cfg.tolerances.values())
    assert ExperimentConfig("norm-sandwich").experiment == "sandwich"


def test_unknown_suite_and_bad_tolerance():
    with pytest.raises(ConfigError, match="unknown suite"):
        ExperimentConfig("frobnicate")
    with pytest.raises(ConfigError, match="positive"):
        ExperimentConfig("cocycle", tolerances={"cocycle_defect": 0.0})
    with pytest.raises(ConfigError):
        ExperimentConfig("cocycle", tolerances={"cocycle_defect": "tiny"})


def test_ini_round_trip_and_hash(tmp_path):
    cfg = ExperimentConfig("holder", model=ModelConfig(n_modes=16, epsilon=0.7), seed=3,
                           evolution=EvolutionSpec(dt_rule="stiff", safety=0.5),
                           params={"eps_grid": [0.9, 0.95]}, output_dir=str(tmp_path))
    back = ExperimentConfig.from_ini(cfg.to_ini())
    assert back.to_dict() == cfg.to_dict()
    assert back.config_hash() == cfg.config_hash()
    assert cfg.replace(output_dir="elsewhere").config_hash() == cfg.config_hash()
    assert cfg.replace(seed=4).config_hash() != cfg.config_hash()
    p = tmp_path / "c.ini"
    p.write_text(cfg.to_ini())
    assert ExperimentConfig.load(p).config_hash() == cfg.config_hash()
    with pytest.raises(ConfigError):
        ExperimentConfig.load(tmp_path / "missing.ini")
    with pytest.raises(ConfigError):
        ExperimentConfig.from_ini("[model]\nn_modes = 4\n")
    with pytest.raises(ConfigError):
        ExperimentConfig.from_ini("not an ini file")


def test_hash_is_stable_across_processes():
    # a fixed configuration must hash to the same value in every session
    a = ExperimentConfig("cocycle").config_hash()
    b = ExperimentConfig.from_dict(json.loads(json.dumps(ExperimentConfig("cocycle").to_dict())))
    assert a == b.config_hash() and len(a) == 16


def test_run_writes_record_and_replays_identically(tmp_path):
    cfg = small(output_dir=str(tmp_path))
    rec = run_suite(cfg)
    d = run_dir(cfg)
    assert (d / "config.ini").is_file() and (d / "record.json").is_file()
    assert rec.passed
    stored = load_record(d / "record.json")
    assert metrics_equal(stored, rec)
    again = replay(cfg.config_hash(), tmp_path)
    assert metrics_equal(again, rec)


def test_replay_detects_tampering(tmp_path):
    cfg = small(output_dir=str(tmp_path))
    run_suite(cfg)
    d = run_dir(cfg)
    ini = (d / "config.ini").read_text().replace("seed = 0", "seed = 1")
    (d / "config.ini").write_text(ini)
    with pytest.raises(HashMismatchError):
        replay(cfg.config_hash(), tmp_path)
    with pytest.raises(ConfigError):
        replay("0" * 16, tmp_path)


def test_thread_count_does_not_change_metrics():
    a = run_suite(small(), write=False)
    b = run_suite(small(evolution=EvolutionSpec(threads=4)), write=False)
    assert metrics_equal(a, b)


def test_tolerance_change_keeps_metrics_and_flips_verdict():
    # the order ladder is calibrated for the default 32 modes
    base = run_suite(ExperimentConfig("cocycle"), write=False)
    strict = run_suite(ExperimentConfig("cocycle", tolerances={"cocycle_defect": 1e-300}),
                       write=False)
    assert metrics_equal(base, strict)
    assert base.passed and not strict.passed
    assert "cocycle" in " ".join(strict.failed_verdicts())


def test_errors_are_recorded_not_raised():
    cfg = small(params={"tau": 5.0, "t": 0.0})
    rec = run_suite(cfg, write=False)
    assert not rec.passed and rec.errors


def test_plot_data_csv(tmp_path):
    rec = ResultRecord("h", "simulate", 0, tables={
        "empty": {"header": ["a", "b"], "rows": []},
        "vals": {"header": ["x"], "rows": [[0.1], [1e-300]]}})
    paths = emit_plot_data(rec, tmp_path)
    assert sorted(p.name for p in paths) == ["empty.csv", "vals.csv"]
    assert (tmp_path / "empty.csv").read_text().strip() == "a,b"
    rows = list(csv.reader(open(tmp_path / "vals.csv")))
    assert [float(r[0]) for r in rows[1:]] == [0.1, 1e-300]
    assert ResultRecord.from_dict(json.loads(rec.to_json())).tables == rec.tables


def test_cli_exit_codes(tmp_path, capsys):
    assert main(["simulate", "--out", str(tmp_path), "--quiet"]) == 0
    out = capsys.readouterr().out
    assert "PASS" in out
    h = [p.name for p in tmp_path.iterdir()][0]
    assert main(["replay", h, "--out", str(tmp_path)]) == 0
    assert "metrics identical" in capsys.readouterr().out
    assert main(["no-such-suite"]) == 2
    assert main(["holder", "--eps", "a,b"]) == 2
    assert main(["simulate", "--threads", "0"]) == 2
    assert main(["sandwich", "--t", "1.0"]) == 2
    assert main(["replay", "ffff", "--out", str(tmp_path)]) == 2
    cfg = ExperimentConfig("cocycle", tolerances={"cocycle_defect": 1e-300},
                           output_dir=str(tmp_path))
    p = tmp_path / "strict.ini"
    p.write_text(cfg.to_ini())
    assert main(["cocycle", "--config", str(p), "--quiet"]) == 1
    assert main(["simulate", "--config", str(p)]) == 2
