import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from thermoflood.scenario import Scenario, ScenarioError, shipped_scenario

BUNDLED = ["waterflood_11x11_thermal", "waterflood_11x11_isothermal", "quarter_3x3_thermal",
           "toy_1cell_thermal"]


def _raw(name="quarter_3x3_thermal"):
    return json.loads(shipped_scenario(name).read_text())


@pytest.mark.parametrize("name", BUNDLED)
def test_bundled_scenarios_round_trip(name, tmp_path):
    sc = Scenario.load(shipped_scenario(name))
    p = tmp_path / "s.json"
    sc.save(p)
    again = Scenario.load(p)
    assert again.to_dict() == sc.to_dict()
    assert again.dumps() == sc.dumps()


def test_digest_tracks_content():
    a = Scenario.from_dict(_raw())
    b = Scenario.from_dict(_raw())
    assert a.digest() == b.digest()
    raw = _raw()
    raw["initial"]["Sw"] = 0.25
    assert Scenario.from_dict(raw).digest() != a.digest()


def test_mode_override():
    sc = Scenario.load(shipped_scenario("quarter_3x3_thermal"))
    iso = sc.with_mode("isothermal")
    assert iso.mode == "isothermal" and sc.mode == "thermal"
    assert iso.digest() != sc.digest()


@pytest.mark.parametrize("mutate, code", [
    (lambda r: r.update(colour="red"), "UNKNOWN_FIELD"),
    (lambda r: r["grid"].update(nxx=3), "UNKNOWN_FIELD"),
    (lambda r: r["wells"][0].update(rate=1.0), "UNKNOWN_FIELD"),
    (lambda r: r["simulation"].update(dt_huge=1.0), "UNKNOWN_FIELD"),
    (lambda r: r.update(mode="adiabatic"), "BAD_VALUE"),
    (lambda r: r["rock"].update(phi=1.5), "BAD_VALUE"),
    (lambda r: r["grid"].update(nx=0), "BAD_VALUE"),
    (lambda r: r["initial"].update(composition=[1.0, 2.0]), "BAD_VALUE"),
    (lambda r: r["wells"][0].update(i=7), "BAD_VALUE"),
    (lambda r: r["wells"][0].update(bhp_hi_Pa=1.0), "BAD_VALUE"),
    (lambda r: r["wells"][1].update(name=r["wells"][0]["name"]), "BAD_VALUE"),
    (lambda r: r["components"].update(names=["unobtainium"]), "BAD_VALUE"),
    (lambda r: r["grid"].update(permeability_file="missing.txt"), "CONFIG_NOT_FOUND"),
    (lambda r: r["simulation"].update(dt_init_days=100.0), "BAD_VALUE"),
])
def test_invalid_scenarios_rejected(mutate, code):
    raw = _raw()
    mutate(raw)
    with pytest.raises(ScenarioError) as exc:
        Scenario.from_dict(raw)
    assert exc.value.code == code


def test_missing_and_malformed_files(tmp_path):
    with pytest.raises(ScenarioError) as exc:
        Scenario.load(tmp_path / "nope.json")
    assert exc.value.code == "CONFIG_NOT_FOUND"
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ScenarioError) as exc:
        Scenario.load(bad)
    assert exc.value.code == "CONFIG_PARSE_ERROR"
    with pytest.raises(ScenarioError):
        shipped_scenario("no_such_case")


def test_units_converted_to_si():
    sc = Scenario.load(shipped_scenario("quarter_3x3_thermal"))
    o = sc.sim_options()
    assert o.dt_max == pytest.approx(10 * 86400.0)
    tg = sc.time_grid()
    assert tg[-1] == pytest.approx(120 * 86400.0) and len(tg) == 5


@settings(max_examples=25, deadline=None)
@given(Sw=st.floats(0.05, 0.6), T=st.floats(300.0, 400.0), n=st.integers(1, 40))
def test_round_trip_is_idempotent(Sw, T, n):
    raw = _raw()
    raw["initial"].update(Sw=Sw, T_K=T)
    raw["horizon"]["intervals"] = n
    sc = Scenario.from_dict(raw)
    again = Scenario.from_dict(json.loads(sc.dumps()))
    assert again.to_dict() == sc.to_dict() and again.digest() == sc.digest()
    lo, hi = sc.bounds()
    mid = sc.midpoint_controls()
    assert mid.shape == (len(lo), n)
    np.testing.assert_allclose(mid[:, 0], 0.5 * (lo + hi))
