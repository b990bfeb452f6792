import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from thermoflood import flash, thermo
from thermoflood.thermo import R

import _support


@pytest.fixture(scope="module")
def fluid():
    return _support.mixture()


@pytest.fixture(scope="module")
def rock():
    return thermo.RockSpec()


@pytest.fixture(scope="module")
def states(fluid, rock):
    return _support.random_equilibria(fluid, rock, 6, seed=21)


def _uv_spec(fluid, rock, s):
    return flash.FlashSpecUV(s["U"], s["V"], s["n_w"], s["n"], rock, s["V_ref"])


def _fd_jac(f, w, rel=1e-6):
    r0 = f(w)
    J = np.zeros((len(r0), len(w)))
    for k in range(len(w)):
        h = rel * max(abs(w[k]), 1e-3)
        wp, wm = w.copy(), w.copy()
        wp[k] += h
        wm[k] -= h
        J[:, k] = (f(wp) - f(wm)) / (2 * h)
    return J


def _perturbed_point(s, rng, thermal):
    T, P = s["T"] * 1.01, s["P"] * 0.98
    y = np.r_[T, P, s["n_w"], s["n_o"] * 1.02, s["n_g"] * 0.97] if thermal else \
        np.r_[P, s["n_w"], s["n_o"] * 1.02, s["n_g"] * 0.97]
    nc = len(s["n"])
    z = np.r_[1 / T, P / T, rng.normal(size=1 + nc) * 10] if thermal else \
        np.r_[P, rng.normal(size=1 + nc) * 1e4]
    return y, z


@pytest.mark.parametrize("mode", ["UV", "VT"])
def test_kkt_jacobians_match_finite_differences(fluid, rock, states, mode):
    s = states[0]
    rng = np.random.default_rng(0)
    thermal = mode == "UV"
    y, z = _perturbed_point(s, rng, thermal)
    ny = len(y)
    if thermal:
        spec0 = np.r_[s["U"], s["V"], s["n_w"], s["n"]]

        def f(w, sp):
            return flash.kkt_uv(fluid, rock, s["V_ref"], sp[0], sp[1], sp[2], sp[3:], w[:ny], w[ny:])
    else:
        spec0 = np.r_[s["V"], s["n_w"], s["n"]]

        def f(w, sp):
            return flash.kkt_vt(fluid, rock, s["V_ref"], s["T"], sp[0], sp[1], sp[2:], w[:ny], w[ny:])

    w0 = np.r_[y, z]
    e = f(w0, spec0)
    J = _fd_jac(lambda w: f(w, spec0).r[0], w0)
    Js = _fd_jac(lambda sp: f(w0, sp).r[0], spec0)
    assert np.max(np.abs(J - e.J[0])) < 1e-6 * np.max(np.abs(e.J[0]))
    assert np.max(np.abs(Js - e.Jspec[0])) < 1e-6 * np.max(np.abs(e.Jspec[0]))


def test_residual_vanishes_at_constructed_equilibrium(fluid, rock, states):
    s = states[1]
    res = flash.solve_uv(fluid, _uv_spec(fluid, rock, s))
    e = flash.kkt_uv(fluid, rock, s["V_ref"], s["U"], s["V"], s["n_w"], s["n"], res.y, res.z, jac=False)
    assert np.max(np.abs(e.r)) < 1e-9


@pytest.mark.parametrize("k", range(4))
def test_uv_round_trip(fluid, rock, states, k):
    s = states[k]
    res = flash.solve_uv(fluid, _uv_spec(fluid, rock, s))
    assert res.T == pytest.approx(s["T"], rel=1e-6)
    assert res.P == pytest.approx(s["P"], rel=1e-6)
    assert res.kkt_residual_norm < 1e-9
    assert flash.chemical_potential_gap(fluid, res) <= 1e-6 * R * res.T
    vt = flash.solve_vt(fluid, flash.FlashSpecVT(res.T, s["V"], s["n_w"], s["n"], rock, s["V_ref"]),
                        guess=res)
    assert vt.P == pytest.approx(res.P, rel=1e-8)
    np.testing.assert_allclose(vt.n_o, res.n_o, rtol=1e-7)


def test_component_balance_exact(fluid, rock, states):
    s = states[2]
    res = flash.solve_uv(fluid, _uv_spec(fluid, rock, s))
    np.testing.assert_allclose(res.n_o + res.n_g, s["n"], rtol=1e-12)
    assert res.n_w_phase == pytest.approx(s["n_w"], rel=1e-12)


def test_batch_matches_single(fluid, rock, states):
    sel = states[:3]
    y, z, norm, conv = flash.solve_batch(
        fluid, "UV", rock, [s["V_ref"] for s in sel], [s["U"] for s in sel], [s["V"] for s in sel],
        [s["n_w"] for s in sel], np.array([s["n"] for s in sel]))
    assert np.all(conv)
    for i, s in enumerate(sel):
        res = flash.solve_uv(fluid, _uv_spec(fluid, rock, s))
        assert y[i, 0] == pytest.approx(res.T, rel=1e-9)
        assert y[i, 1] == pytest.approx(res.P, rel=1e-9)


def test_warm_start_converges_fast(fluid, rock, states):
    s = states[3]
    spec = _uv_spec(fluid, rock, s)
    res = flash.solve_uv(fluid, spec)
    again = flash.solve_uv(fluid, spec, guess=res)
    assert again.iterations <= 2


def test_nonphysical_specs_rejected(rock):
    with pytest.raises(flash.NonphysicalSpec):
        flash.FlashSpecUV(1.0, 10.0, 1.0, np.array([1.0, -1.0]), rock, 5.0)
    with pytest.raises(flash.NonphysicalSpec):
        flash.FlashSpecVT(300.0, 4.0, 1.0, np.array([1.0, 1.0]), rock, 5.0)
    with pytest.raises(flash.NonphysicalSpec):
        flash.FlashSpecVT(-1.0, 10.0, 1.0, np.array([1.0, 1.0]), rock, 5.0)


def test_iteration_limit_raises(fluid, rock, states):
    s = states[0]
    with pytest.raises(flash.MaxIterations):
        flash.solve_uv(fluid, _uv_spec(fluid, rock, s), max_iter=0)


@settings(max_examples=100, deadline=None)
@given(z=st.lists(st.floats(0.05, 1.0), min_size=3, max_size=3),
       k=st.lists(st.floats(-2.0, 2.0), min_size=3, max_size=3))
def test_rachford_rice_root(z, k):
    zf = np.array(z) / np.sum(z)
    K = np.exp(np.array(k))
    beta = flash.rachford_rice(zf, K, 0.0, 1.0)
    g = np.sum(zf * (K - 1.0) / (1.0 + beta * (K - 1.0)))
    g0 = np.sum(zf * (K - 1.0))
    g1 = np.sum(zf * (K - 1.0) / K)
    if g0 > 0 and g1 < 0:  # a root exists inside (0, 1)
        assert abs(g) < 1e-9 * np.sum(zf * np.abs(K - 1.0))
    assert 0.0 <= beta <= 1.0


def test_pt_flash_isofugacity(fluid):
    beta, x, y, ok = flash.pt_flash(fluid.hydrocarbon, 330.0, 9e6, _support.FEED5)
    assert ok and 0 < beta < 1
    mu_l = thermo.gibbs_jet(fluid.hydrocarbon, 330.0, 9e6, x, "liquid", order=2).grad[..., 2:]
    mu_v = thermo.gibbs_jet(fluid.hydrocarbon, 330.0, 9e6, y, "vapor", order=2).grad[..., 2:]
    assert np.max(np.abs(mu_l - mu_v)) < 1e-6 * R * 330.0
    np.testing.assert_allclose((1 - beta) * x + beta * y, _support.FEED5, atol=1e-10)


def test_unknown_scales_positive():
    s = flash.unknown_scales("UV", 5, np.array([1e3, 2e3]))
    assert s.shape == (2, 3 + 10 + 2 + 6)
    assert np.all(s > 0)
    assert flash.positive_mask("VT", 5).sum() == 1 + 1 + 10  # P, water, phase moles
