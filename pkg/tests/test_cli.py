import json

import numpy as np
import pytest

from thermoflood import cli


def test_check_prints_dimensions(capsys):
    assert cli.main(["check", "quarter_3x3_thermal"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert (out["differential_equations"], out["algebraic_equations"], out["manipulated_inputs"]) == (63, 189, 8)


def test_missing_config_exit_code(capsys, tmp_path):
    assert cli.main(["check", str(tmp_path / "absent.json")]) == 2
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"] == "CONFIG_NOT_FOUND"


def test_unknown_field_exit_code(capsys, tmp_path):
    p = tmp_path / "s.json"
    p.write_text(json.dumps({"name": "x", "flavour": 1}))
    assert cli.main(["check", str(p)]) == 2
    assert json.loads(capsys.readouterr().err.strip())["error"] == "UNKNOWN_FIELD"


def test_flash_reports_equilibrium(capsys):
    assert cli.main(["flash", "quarter_3x3_thermal", "--T-K", "340", "--P-Pa", "9.5e6"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["T_K"] == pytest.approx(340.0, rel=1e-6)
    assert out["kkt_residual"] < 1e-9 and out["max_mu_gap_over_RT"] < 1e-6


@pytest.fixture(scope="module")
def sim_out(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    code = cli.main(["simulate", "quarter_3x3_thermal", "--mode", "isothermal", "--out", str(out)])
    return code, out


def test_simulate_writes_outputs(sim_out):
    code, out = sim_out
    assert code == 0
    for name in ("manifest.json", "trajectory.csv", "cumulative.csv", "controls.csv", "scenario.json"):
        assert (out / name).is_file()
    assert (out / "trajectory.csv").read_text().splitlines()[0] == "# mode: isothermal"
    man = json.loads((out / "manifest.json").read_text())
    assert man["complete"] and man["mode"] == "isothermal" and len(man["config_sha256"]) == 64
    assert man["conservation_max_rel_error"] < 1e-7
    snaps = sorted((out / "snapshots").glob("snapshot_*_P.txt"))
    assert len(snaps) == 5
    rows = [l for l in snaps[-1].read_text().splitlines() if not l.startswith("#")]
    assert len(rows) == 3 and all(len(r.split()) == 3 for r in rows)


def test_simulate_with_controls_file(sim_out, tmp_path, capsys):
    _, out = sim_out
    code = cli.main(["simulate", "quarter_3x3_thermal", "--mode", "isothermal",
                     "--controls", str(out / "controls.csv"), "--out", str(tmp_path)])
    assert code == 0
    a = np.genfromtxt(out / "cumulative.csv", delimiter=",", names=True)
    b = np.genfromtxt(tmp_path / "cumulative.csv", delimiter=",", names=True)
    np.testing.assert_array_equal(a["oil_m3"], b["oil_m3"])


def test_missing_controls_file(tmp_path, capsys):
    code = cli.main(["simulate", "quarter_3x3_thermal", "--controls", str(tmp_path / "none.csv"),
                     "--out", str(tmp_path)])
    assert code == 2


def test_interrupted_run_marks_manifest(tmp_path, monkeypatch, capsys):
    monkeypatch.setattr(cli._Interrupt, "__call__", lambda self: True)
    code = cli.main(["simulate", "quarter_3x3_thermal", "--out", str(tmp_path)])
    assert code == 130
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["complete"] is False


def test_optimize_writes_report(tmp_path, capsys):
    code = cli.main(["optimize", "toy_1cell_thermal", "--max-iter", "2", "--out", str(tmp_path)])
    assert code == 0
    kpi = json.loads((tmp_path / "kpi.json").read_text())
    assert kpi["manipulated_inputs"] == 2 and kpi["iterations"] <= 2
    assert kpi["cumulative_oil_final_m3"] >= kpi["cumulative_oil_initial_m3"]
    for name in ("iterates.csv", "controls.csv", "summary.txt", "cumulative_initial.csv"):
        assert (tmp_path / name).is_file()
