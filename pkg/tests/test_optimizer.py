from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import minimize

from thermoflood import adjoint as adj, dae_sim as ds, optimizer as opt
from thermoflood.scenario import Scenario, shipped_scenario


class QuadraticProblem:
    """Stand-in with the simulate/gradient interface: phi = 0.5 (u - c)^T A (u - c) in MPa."""

    def __init__(self, A, c, shape):
        self.A, self.c, self.shape = A, c, shape
        self.simulations = 0
        self.gradients = 0
        self.sim_kpis = []

    def _v(self, u):
        return np.asarray(u, float).ravel() / opt.MPA

    def simulate(self, u, pinned=None):
        self.simulations += 1
        r = self._v(u) - self.c
        return 0.5 * r @ self.A @ r, ds.Trajectory("isothermal", [0.0], [], [], [], complete=True)

    def gradient(self, u, traj):
        self.gradients += 1
        g = self.A @ (self._v(u) - self.c) / opt.MPA
        return SimpleNamespace(grad=g.reshape(self.shape))


def test_two_loop_satisfies_latest_secant():
    rng = np.random.default_rng(1)
    B = rng.standard_normal((4, 4))
    A = B @ B.T + 4 * np.eye(4)
    S = [rng.standard_normal(4) for _ in range(3)]
    Y = [A @ s for s in S]
    np.testing.assert_allclose(opt._two_loop(Y[-1], S, Y), S[-1], rtol=1e-10)


def test_bound_constrained_quadratic_solved():
    rng = np.random.default_rng(2)
    B = rng.standard_normal((6, 6))
    A = B @ B.T + np.eye(6)
    c = np.array([8.0, 13.0, 10.5, 11.0, 9.5, 14.0])
    prob = QuadraticProblem(A, c, (2, 3))
    u0 = opt.ControlVector.midpoint([10e6, 10e6], [12e6, 12e6], 3)
    rep = opt.optimize(prob, u0, opt.OptimizerOptions(max_iter=200, pg_tol=1e-9, f_rtol=0.0))
    assert rep.termination == "projected gradient below tolerance"
    v = rep.controls.ravel() / opt.MPA
    g = A @ (v - c)
    lo, hi = 10.0, 12.0
    assert opt._pg_norm(v, g, np.full(6, lo), np.full(6, hi)) <= 1e-9 * max(1.0, abs(rep.phi))
    ref = minimize(lambda x: 0.5 * (x - c) @ A @ (x - c), np.full(6, 11.0), jac=lambda x: A @ (x - c),
                   bounds=[(lo, hi)] * 6, method="L-BFGS-B", options={"ftol": 0, "gtol": 1e-12})
    np.testing.assert_allclose(v, ref.x, atol=1e-6)
    assert np.all((v >= lo) & (v <= hi))
    assert rep.phi < rep.phi0
    phis = [r.phi for r in rep.iterates]
    assert all(b <= a for a, b in zip(phis, phis[1:]))


def test_infeasible_start_rejected():
    prob = QuadraticProblem(np.eye(2), np.zeros(2), (2, 1))
    u0 = opt.ControlVector(np.array([[20e6], [10e6]]), [10e6, 10e6], [12e6, 12e6])
    with pytest.raises(opt.InfeasibleStart):
        opt.optimize(prob, u0)


def test_should_stop_interrupts():
    prob = QuadraticProblem(np.eye(2), np.zeros(2), (2, 1))
    u0 = opt.ControlVector.midpoint([10e6, 10e6], [12e6, 12e6], 1)
    rep = opt.optimize(prob, u0, should_stop=lambda: True)
    assert rep.termination == "interrupted" and rep.iterations == 0


def test_options_validated():
    with pytest.raises(ValueError):
        opt.OptimizerOptions(armijo_c=2.0)
    with pytest.raises(ValueError):
        opt.OptimizerOptions(memory=0)
    with pytest.raises(ValueError):
        opt.ControlVector(np.zeros((1, 2)), [2.0], [1.0])


@settings(max_examples=50, deadline=None)
@given(u=st.lists(st.floats(5e6, 15e6), min_size=4, max_size=4))
def test_projection_feasible(u):
    cv = opt.ControlVector(np.zeros((2, 2)) + 11e6, [10e6, 9e6], [12e6, 10e6])
    p = cv.project(np.array(u).reshape(2, 2))
    assert opt.ControlVector(p, cv.lo, cv.hi).feasible()


def test_bound_fractions():
    u = np.array([[9.0e6, 9.3e6, 9.9e6, 10.0e6]])
    lo_f, hi_f = opt.bound_fractions(u, [9e6], [10e6])
    np.testing.assert_allclose(lo_f, [0.5])  # within 0.45 MPa of 9 MPa
    np.testing.assert_allclose(hi_f, [0.5])
    lo_w, hi_w = opt.bound_fractions(u, [9e6], [10e6], relative_to="width")
    np.testing.assert_allclose(lo_w, [0.25])
    np.testing.assert_allclose(hi_w, [0.25])


def test_schedule_csv_round_trip(tmp_path):
    u = np.random.default_rng(3).uniform(9e6, 12e6, (3, 5))
    p = tmp_path / "s.csv"
    names = ["A", "B", "C"]
    opt.write_schedule_csv(p, u, names, np.linspace(0, 5 * 86400, 6))
    np.testing.assert_array_equal(opt.read_schedule_csv(p, names, 5), u)
    with pytest.raises(ValueError):
        opt.read_schedule_csv(p, names, 4)
    with pytest.raises(ValueError):
        opt.read_schedule_csv(p, ["A", "B"], 5)


@pytest.fixture(scope="module")
def toy_run():
    sc = Scenario.load(shipped_scenario("toy_1cell_thermal"))
    b = sc.build()
    prob = opt.Problem(b.model, b.t_grid, b.x0, b.y0, b.z0, adj.ObjectiveSpec(b.c_sto), sc.sim_options())
    lo, hi = sc.bounds()
    u0 = opt.ControlVector.midpoint(lo, hi, len(b.t_grid) - 1)
    rep = opt.optimize(prob, u0, opt.OptimizerOptions(**sc.optimizer_options()))
    return sc, b, rep


def test_single_producer_drawn_to_lower_bound(toy_run):
    """With one producer and no support, full drawdown in every interval beats a BHP sweep."""
    sc, b, rep = toy_run
    lo, hi = sc.bounds()
    np.testing.assert_allclose(rep.controls, lo[0], rtol=1e-12)
    assert rep.phi < rep.phi0
    prob = opt.Problem(b.model, b.t_grid, b.x0, b.y0, b.z0, adj.ObjectiveSpec(b.c_sto), sc.sim_options())
    sweep = np.linspace(lo[0], hi[0], 5)
    for p0 in sweep:
        for p1 in sweep:
            assert rep.phi <= prob.simulate(np.array([[p0, p1]]))[0] + 1e-12 * abs(rep.phi)


def test_kpi_report_counts(toy_run):
    sc, b, rep = toy_run
    k = opt.kpi_report(rep, b.model, b.c_sto, sc.name)
    assert k["manipulated_inputs"] == 2
    assert k["differential_equations"] == 7 and k["algebraic_equations"] == 21
    assert k["simulations"] == rep.simulations >= k["gradient_evaluations"]
    assert k["cumulative_oil_final_m3"] > k["cumulative_oil_initial_m3"] > 0
    assert not any("time" in key for key in k)


def test_iterates_csv(tmp_path, toy_run):
    rep = toy_run[2]
    p = tmp_path / "it.csv"
    opt.write_iterates_csv(p, rep)
    assert len(p.read_text().splitlines()) == 1 + len(rep.iterates)
