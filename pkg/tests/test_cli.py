import json
from pathlib import Path

import pytest
from click.testing import CliRunner

from hodge_rsm.cli import main


@pytest.fixture()
def runner():
    return CliRunner()


def _cfg(tmp_path, **overrides):
    base = {"mesh": {"kind": "flat_torus", "resolution": 16,
                     "distortion": 0.0, "path": None},
            "out_dir": str(tmp_path / "runs")}
    base.update(overrides)
    tmp_path.mkdir(parents=True, exist_ok=True)
    p = tmp_path / "config.json"
    p.write_text(json.dumps(base))
    return str(p)


def test_generate_counts(runner, tmp_path):
    out = tmp_path / "mesh.off"
    res = runner.invoke(main, ["generate", "--kind", "flat_torus",
                               "--resolution", "16", "--out", str(out)])
    assert res.exit_code == 0
    assert "256 vertices" in res.output
    header = out.read_text().splitlines()
    assert header[0] == "OFF"
    assert header[1].split()[0] == "256"


def test_generate_deterministic(runner, tmp_path):
    a, b = tmp_path / "a.off", tmp_path / "b.off"
    for path in (a, b):
        res = runner.invoke(main, ["generate", "--kind", "sphere",
                                   "--resolution", "4", "--out", str(path)])
        assert res.exit_code == 0
    assert a.read_bytes() == b.read_bytes()


def test_generate_invalid_kind(runner, tmp_path):
    res = runner.invoke(main, ["generate", "--kind", "moebius",
                               "--out", str(tmp_path / "x.off")])
    assert res.exit_code == 2


def test_cover_bound_and_determinism(runner, tmp_path):
    cfg = _cfg(tmp_path)
    a, b = tmp_path / "cov_a.json", tmp_path / "cov_b.json"
    for path in (a, b):
        res = runner.invoke(main, ["cover", "--config", cfg,
                                   "--out", str(path)])
        assert res.exit_code == 0, res.output
        assert "T_meas" in res.output
    assert a.read_bytes() == b.read_bytes()
    data = json.loads(a.read_text())
    assert data["overlap_measured"] <= 17600


def test_cover_missing_mesh(runner, tmp_path):
    res = runner.invoke(main, ["cover", "--mesh-path",
                               str(tmp_path / "nope.off")])
    assert res.exit_code == 2


def test_solve_report(runner, tmp_path):
    cfg = _cfg(tmp_path, r=1.5, degrees=[1])
    res = runner.invoke(main, ["solve", "--config", cfg])
    assert res.exit_code == 0, res.output
    out = Path(json.loads(Path(cfg).read_text())["out_dir"])
    rep = json.loads((out / "solve_report.json").read_text())
    assert rep["all_passed"]
    names = {c["name"] for c in rep["checks"]}
    assert "rsm_identity_p1" in names and "rsm_ledger_p1" in names
    assert (out / "trace_p1.json").exists()
    assert (out / "trace_p1.csv").exists()


def test_decompose_pass_and_report(runner, tmp_path):
    cfg = _cfg(tmp_path, degrees=[1], num_forms=2)
    res = runner.invoke(main, ["decompose", "--config", cfg])
    assert res.exit_code == 0, res.output
    out = Path(json.loads(Path(cfg).read_text())["out_dir"])
    rep = json.loads((out / "decompose_report.json").read_text())
    assert rep["all_passed"]
    spec = json.loads((out / "spectrum_p1.json").read_text())
    assert spec["harmonic_dim"] == 2
    checks = {c["name"]: c for c in rep["checks"]}
    assert checks["exact_form_projection_p1"]["passed"]


def test_decompose_injected_failure(runner, tmp_path):
    cfg = _cfg(tmp_path, degrees=[1], num_forms=1)
    res = runner.invoke(main, ["decompose", "--config", cfg,
                               "--harmonic-tol", "1e-30"])
    assert res.exit_code == 1
    out = Path(json.loads(Path(cfg).read_text())["out_dir"])
    rep = json.loads((out / "decompose_report.json").read_text())
    checks = {c["name"]: c for c in rep["checks"]}
    assert not checks["spectrum_p1"]["passed"]
    assert checks["spectrum_p1"]["details"]["cluster_flag"]


def test_decompose_deterministic(runner, tmp_path):
    reports = []
    for sub in ("one", "two"):
        d = tmp_path / sub
        cfg = _cfg(d, degrees=[1], num_forms=1)
        res = runner.invoke(main, ["decompose", "--config", cfg])
        assert res.exit_code == 0, res.output
        out = Path(json.loads(Path(cfg).read_text())["out_dir"])
        rep = json.loads((out / "decompose_report.json").read_text())
        rep.pop("timestamp", None)
        rep["config"].pop("out_dir", None)
        reports.append(json.dumps(rep, sort_keys=True))
    assert reports[0] == reports[1]


def test_verify_all_margins(runner, tmp_path):
    cfg = _cfg(tmp_path, degrees=[1], r=1.5)
    res = runner.invoke(main, ["verify", "--config", cfg])
    assert res.exit_code == 0, res.output
    out = Path(json.loads(Path(cfg).read_text())["out_dir"])
    rep = json.loads((out / "verify_report.json").read_text())
    assert rep["all_passed"]
    names = {c["name"] for c in rep["checks"]}
    assert {"radius_lipschitz", "overlap", "partition_sums",
            "5s4_i_p1", "5s6_p1", "czi_p1"} <= names


def test_verify_empty_degrees(runner, tmp_path):
    cfg = _cfg(tmp_path, degrees=[], r=1.5)
    res = runner.invoke(main, ["verify", "--config", cfg])
    assert res.exit_code == 0, res.output


def test_report_summarizes(runner, tmp_path):
    cfg = _cfg(tmp_path, degrees=[1], r=1.5)
    assert runner.invoke(main, ["verify", "--config", cfg]).exit_code == 0
    res = runner.invoke(main, ["report", "--config", cfg])
    assert res.exit_code == 0
    assert "verify" in res.output


def test_report_missing_dir(runner, tmp_path):
    cfg = _cfg(tmp_path / "empty")
    res = runner.invoke(main, ["report", "--config", cfg])
    assert res.exit_code == 2

def test_bad_config_file(runner, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    res = runner.invoke(main, ["cover", "--config", str(bad)])
    assert res.exit_code == 2
