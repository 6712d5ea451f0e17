import csv

import numpy as np
import pytest
import yaml

from prefcache import cli
from prefcache.config import DEFAULTS, ConfigError, config_hash, load_config, radio_params
from prefcache.radio import RadioParams, TauTable

SMALL = {
    "demand": {"n_users": 4, "n_files": 6, "target_sim": 0.6},
    "cache": {"n_cache": 1},
    "sweep": {"similarity": [0.6, 0.9], "delta_a": [0.0, 1.0], "eta": [0.0, 1.0]},
    "validate": {"n_requests": 20_000, "tau_samples": 5_000, "rate_points": 3,
                 "fading_draws": 5_000},
}


def _write(tmp_path, data, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(data))
    return p


def test_defaults():
    cfg = load_config()
    assert cfg["layout"] == {"n_cells": 7, "D": 250.0}
    assert (cfg["demand"]["n_users"], cfg["demand"]["n_files"]) == (20, 50)
    assert cfg["cache"]["n_cache"] == 5
    big = load_config(paper_scale=True)
    assert (big["demand"]["n_users"], big["demand"]["n_files"], big["cache"]["n_cache"]) == (100, 100, 10)
    assert radio_params(cfg) == RadioParams()
    assert DEFAULTS["cache"]["n_cache"] is None  # defaults stay untouched


def test_config_errors(tmp_path):
    with pytest.raises(ConfigError, match="unknown config key 'demand.n_user'"):
        load_config(_write(tmp_path, {"demand": {"n_user": 3}}))
    with pytest.raises(ConfigError):
        load_config(_write(tmp_path, {"sweep": {"eta": [1.5]}}))
    with pytest.raises(ConfigError):
        load_config(_write(tmp_path, {"radio": {"pathloss_exponent": 1.0}}))
    bad = tmp_path / "bad.yaml"
    bad.write_text("demand: [1, 2")
    with pytest.raises(ConfigError, match="malformed"):
        load_config(bad)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")


def test_hash_changes_with_content():
    a = load_config()
    b = load_config(overrides={"seed": 1})
    assert config_hash(a) != config_hash(b)
    assert config_hash(a) == config_hash(load_config())


def test_toy_command(capsys):
    assert cli.main(["toy"]) == 0
    out = capsys.readouterr().out
    assert out.count("PASS") == 9 and "FAIL" not in out


def test_exit_code_on_config_error(tmp_path, capsys):
    assert cli.main(["sweep", "--config", str(_write(tmp_path, {"nope": 1}))]) == 2
    assert "config error" in capsys.readouterr().err


def test_sweep_outputs_are_reproducible(tmp_path):
    cfg = _write(tmp_path, SMALL)
    assert cli.main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "a")]) == 0
    assert cli.main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "b"), "--jobs", "2"]) == 0
    names = ["fig3a.csv", "fig3b.csv", "fig5a.csv", "fig5b.csv", "fig6.csv"]
    for n in names:
        assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()
    with open(tmp_path / "a" / "fig3a.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == cli.CSV_HEADER
    assert {r["policy"] for r in rows} == set(cli.POLICY_NAMES)
    assert {r["seed"] for r in rows} == {"0"}
    assert len({r["config_hash"] for r in rows}) == 1
    with open(tmp_path / "a" / "fig6.csv") as fh:
        fig6 = list(csv.DictReader(fh))
    assert {r["sweep_value"] for r in fig6} == {"0.0", "1.0"}
    assert "Tradeoff" in {r["policy"] for r in fig6}


def test_sweep_seed_changes_output(tmp_path):
    cfg = _write(tmp_path, {**SMALL, "sweep": {**SMALL["sweep"], "figures": ["fig3"]}})
    cli.main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "a")])
    cli.main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "b"), "--seed", "3"])
    assert (tmp_path / "a" / "fig3a.csv").read_bytes() != (tmp_path / "b" / "fig3a.csv").read_bytes()


def test_sweep_reports_infeasible_points(tmp_path):
    cfg = _write(tmp_path, {**SMALL, "sweep": {"figures": ["fig3"], "similarity": [0.0, 0.9]}})
    assert cli.main(["sweep", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    with open(tmp_path / "fig3a.csv") as fh:
        rows = list(csv.DictReader(fh))
    bad = [r for r in rows if r["sweep_value"] == "0.0"]
    assert len(bad) == 1 and bad[0]["metric"] == "infeasible" and "achievable" in bad[0]["note"]
    assert any(r["sweep_value"] == "0.9" and r["policy"] == "Policy 1" for r in rows)


def test_sweep_cli_lists(tmp_path):
    cfg = _write(tmp_path, {**SMALL, "sweep": {"figures": ["fig6"]}})
    assert cli.main(["sweep", "--config", str(cfg), "--out", str(tmp_path), "--eta", "0,0.5"]) == 0
    with open(tmp_path / "fig6.csv") as fh:
        assert {r["sweep_value"] for r in csv.DictReader(fh)} == {"0.0", "0.5"}
    with pytest.raises(SystemExit):
        cli.main(["sweep", "--eta", "0,x"])


def test_sweep_with_monte_carlo(tmp_path):
    cfg = _write(tmp_path, {**SMALL, "sweep": {"figures": ["fig3"], "similarity": [0.9],
                                                "mc_requests": 20_000}})
    cli.main(["sweep", "--config", str(cfg), "--out", str(tmp_path)])
    with open(tmp_path / "fig3a.csv") as fh:
        rows = list(csv.DictReader(fh))
    mc = {r["policy"]: float(r["value"]) for r in rows if r["metric"] == "network_avg_mc_s"}
    an = {r["policy"]: float(r["value"]) for r in rows if r["metric"] == "network_avg_s"}
    assert set(mc) == set(an)
    for k in mc:
        assert abs(mc[k] - an[k]) / an[k] < 0.1


def test_validate_exit_codes(tmp_path):
    loose = {**SMALL, "validate": {**SMALL["validate"], "rate_tol": 0.5, "tau_tol": 0.5, "delay_tol": 0.5}}
    assert cli.main(["validate", "--config", str(_write(tmp_path, loose))]) == 0
    strict = {**SMALL, "validate": {**SMALL["validate"], "delay_tol": 0.0}}
    assert cli.main(["validate", "--config", str(_write(tmp_path, strict, "s.yaml"))]) == 1


def test_validate_detects_swapped_ranks(monkeypatch, capsys):
    def swapped(layout, params):
        t = TauTable.from_ranks([2e-7, 1e-7, 3e-7, 5e-7])
        t.check_monotone()
        return t

    monkeypatch.setattr(cli, "compute_tau_table", swapped)
    cfg = load_config(overrides=SMALL)
    assert cli.run_validate(cfg) is False
    assert "monotonicity" in capsys.readouterr().out


def test_solve_and_export(tmp_path, capsys):
    cfg = _write(tmp_path, SMALL)
    assert cli.main(["solve", "--config", str(cfg), "--out", str(tmp_path), "--eta", "1"]) == 0
    for n in ("policy.csv", "tau.csv", "layout.csv", "demand.json", "report.json"):
        assert (tmp_path / n).exists()
    assert "max_weighted" in capsys.readouterr().out
    assert cli.main(["export-lp", "--config", str(cfg), "--out", str(tmp_path), "--eta", "0.5"]) == 0
    assert (tmp_path / "placement_eta0.5.lp").read_text().startswith("\\ cache placement LP")
    assert cli.main(["solve", "--config", str(cfg), "--out", str(tmp_path), "--eta", "2"]) == 2


def test_explicit_matrices(tmp_path):
    from prefcache.toy import toy_problem  # noqa: F401
    from prefcache.demand import synthesize_demand

    m = synthesize_demand(3, 6, 7, rng=np.random.default_rng(0), target_sim=0.5)
    m.save(tmp_path / "d.json")
    cfg = _write(tmp_path, {"demand": {"matrices": str(tmp_path / "d.json"), "n_files": 6},
                            "cache": {"n_cache": 1}, "sweep": {"figures": ["fig6"], "eta": [0.0]}})
    assert cli.main(["sweep", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    cfg2 = _write(tmp_path, {"demand": {"matrices": str(tmp_path / "d.json")},
                             "sweep": {"figures": ["fig3"]}}, "c2.yaml")
    assert cli.main(["sweep", "--config", str(cfg2), "--out", str(tmp_path)]) == 2
