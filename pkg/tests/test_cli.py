"""End-to-end tests of the experiment runner: config validation, run
artifacts, determinism, and the compare report."""

import json

import numpy as np
import pytest

from dopinv.cli import ConfigError, load_config, main


def write_config(tmp_path, name, payload):
    path = tmp_path / name
    path.write_text(json.dumps(payload))
    return str(path)


def read_json(path):
    return json.loads(path.read_text())


def test_load_config_fills_defaults(tmp_path):
    path = write_config(tmp_path, "c.json", {"mode": "forward"})
    cfg = load_config(path)
    assert cfg["n"] == 44
    assert cfg["phantom"] == "ridge"
    assert cfg["seed"] == 0
    inv = load_config(write_config(tmp_path, "i.json", {"mode": "invert"}))
    assert inv["reconstruction"]["max_cycles"] == 500
    assert inv["reconstruction"]["tau"] == 1.5


def test_load_config_rejects_unknown_fields(tmp_path):
    path = write_config(tmp_path, "c.json", {"mode": "forward", "bogus": 1})
    with pytest.raises(ConfigError, match="bogus"):
        load_config(path)
    path = write_config(tmp_path, "d.json", {
        "mode": "invert", "reconstruction": {"omega": 0.5}})
    with pytest.raises(ConfigError, match="reconstruction.omega"):
        load_config(path)


def test_load_config_rejects_bad_values(tmp_path):
    with pytest.raises(ConfigError, match="mode"):
        load_config(write_config(tmp_path, "a.json", {"mode": "telepathy"}))
    with pytest.raises(ConfigError, match="phantom"):
        load_config(write_config(tmp_path, "b.json",
                                 {"mode": "forward", "phantom": "nope"}))
    with pytest.raises(ConfigError, match="profiles"):
        load_config(write_config(tmp_path, "c.json",
                                 {"mode": "forward", "profiles": {}}))
    with pytest.raises(ConfigError, match="centers"):
        load_config(write_config(tmp_path, "d.json",
                                 {"mode": "forward", "profiles": {"centers": [1.5]}}))
    with pytest.raises(ConfigError, match="fine_n"):
        load_config(write_config(tmp_path, "e.json",
                                 {"mode": "invert", "fine_n": 8, "coarse_n": 16}))


def test_main_exit_code_on_config_errors(tmp_path, capsys):
    assert main(["run", str(tmp_path / "missing.json")]) == 2
    assert "config error" in capsys.readouterr().err
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["run", str(bad)]) == 2


def test_forward_run_writes_artifacts(tmp_path):
    cfg = write_config(tmp_path, "fwd.json", {
        "mode": "forward", "n": 8, "phantom": "two_bumps",
        "profiles": {"count": 2},
    })
    out = tmp_path / "fwd"
    assert main(["run", cfg, "--out", str(out)]) == 0
    for name in ("manifest.json", "summary.json", "gamma_final.csv",
                 "measurements.json", "traces.csv", "nodes.csv",
                 "conductivity.png", "traces.png"):
        assert (out / name).exists(), name
    summary = read_json(out / "summary.json")
    assert summary["stacked_norm"] > 0
    manifest = read_json(out / "manifest.json")
    assert manifest["config"]["n"] == 8
    assert "numpy" in manifest["versions"]
    assert manifest["wall_time_s"] > 0


def test_forward_zero_amplitude_gives_zero_traces(tmp_path):
    cfg = write_config(tmp_path, "fwd0.json", {
        "mode": "forward", "n": 8,
        "profiles": {"count": 2, "amplitude": 0.0},
    })
    out = tmp_path / "fwd0"
    assert main(["run", cfg, "--out", str(out)]) == 0
    summary = read_json(out / "summary.json")
    assert summary["stacked_norm"] == pytest.approx(0.0, abs=1e-14)
    data = np.genfromtxt(out / "traces.csv", delimiter=",", names=True)
    np.testing.assert_allclose(data["flux_value"], 0.0, atol=1e-14)


def invert_payload(**overrides):
    payload = {
        "mode": "invert", "fine_n": 12, "coarse_n": 6,
        "phantom": "two_bumps", "profiles": {"count": 2},
        "noise_level": 0.05,
        "reconstruction": {"max_cycles": 3},
    }
    payload.update(overrides)
    return payload


def test_invert_run_writes_artifacts(tmp_path):
    cfg = write_config(tmp_path, "inv.json", invert_payload())
    out = tmp_path / "inv"
    assert main(["run", cfg, "--out", str(out)]) == 0
    for name in ("manifest.json", "summary.json", "gamma_final.csv",
                 "history.csv", "reconstruction.png", "history.png"):
        assert (out / name).exists(), name
    summary = read_json(out / "summary.json")
    assert summary["cycles_run"] >= 1
    assert summary["final_residual"] > 0
    assert summary["initial_error"] > 0 and summary["final_error"] > 0
    table = np.genfromtxt(out / "gamma_final.csv", delimiter=",", names=True)
    assert set(table.dtype.names) == {"node", "x", "y", "gamma", "gamma_true"}
    assert np.all(table["gamma"] > 0)


def test_run_is_deterministic(tmp_path):
    cfg = write_config(tmp_path, "inv.json", invert_payload())
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    assert main(["run", cfg, "--out", str(out_a)]) == 0
    assert main(["run", cfg, "--out", str(out_b)]) == 0
    for name in ("gamma_final.csv", "history.csv", "summary.json"):
        assert (out_a / name).read_bytes() == (out_b / name).read_bytes(), name


def test_seed_override_changes_outputs(tmp_path):
    cfg = write_config(tmp_path, "inv.json", invert_payload())
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    assert main(["run", cfg, "--out", str(out_a)]) == 0
    assert main(["run", cfg, "--out", str(out_b), "--seed", "7"]) == 0
    assert read_json(out_b / "manifest.json")["seed"] == 7
    assert (out_a / "gamma_final.csv").read_bytes() \
        != (out_b / "gamma_final.csv").read_bytes()


def test_compare_run_against_itself(tmp_path, capsys):
    cfg = write_config(tmp_path, "inv.json", invert_payload())
    out = tmp_path / "run"
    assert main(["run", cfg, "--out", str(out)]) == 0
    report_path = tmp_path / "cmp.json"
    assert main(["compare", str(out), str(out), "--out", str(report_path)]) == 0
    printed = json.loads(capsys.readouterr().out)
    assert printed["identical"] is True
    assert printed["difference_l2"] == 0.0
    assert report_path.exists()
    on_disk = read_json(report_path)
    assert on_disk == printed
    for key in ("error_total", "error_near", "error_far"):
        assert key in printed["run_a"]


def test_compare_rejects_mismatched_meshes(tmp_path, capsys):
    cfg_a = write_config(tmp_path, "a.json", invert_payload())
    cfg_b = write_config(tmp_path, "b.json", invert_payload(coarse_n=8, fine_n=16))
    out_a, out_b = tmp_path / "ra", tmp_path / "rb"
    assert main(["run", cfg_a, "--out", str(out_a)]) == 0
    assert main(["run", cfg_b, "--out", str(out_b)]) == 0
    assert main(["compare", str(out_a), str(out_b)]) == 2
    assert "mesh" in capsys.readouterr().err


def test_compare_requires_finished_runs(tmp_path):
    empty = tmp_path / "empty"
    empty.mkdir()
    assert main(["compare", str(empty), str(empty)]) == 2


def test_equilibrium_run_writes_artifacts(tmp_path):
    cfg = write_config(tmp_path, "eq.json", {
        "mode": "equilibrium", "n": 8, "doping": "pn_vertical",
        "lambda2": 0.5,
    })
    out = tmp_path / "eq"
    assert main(["run", cfg, "--out", str(out)]) == 0
    for name in ("equilibrium.csv", "doping.png", "potential.png"):
        assert (out / name).exists(), name
    summary = read_json(out / "summary.json")
    assert summary["newton_iterations"] >= 1
    assert summary["newton_residuals"][-1] < 1e-8


def test_lbic1d_run_writes_artifacts(tmp_path):
    cfg = write_config(tmp_path, "lb.json", {
        "mode": "lbic1d", "m": 64, "potential": "cosine",
        "family_offsets": [-0.4],
    })
    out = tmp_path / "lb"
    assert main(["run", cfg, "--out", str(out)]) == 0
    for name in ("curve.csv", "family.csv", "lbic.png"):
        assert (out / name).exists(), name
    summary = read_json(out / "summary.json")
    assert summary["attainable"] is True
    assert summary["c1"] < 0 and summary["c2"] < 0
    assert summary["max_potential_error"] < 1e-2
