import dataclasses

import numpy as np
import pytest

from thermoflood import adjoint as adj, dae_sim as ds
from thermoflood.reservoir_model import ReservoirModel


def _short(b, N=2):
    return b.t_grid[:N + 1], b.scenario.midpoint_controls()[:, :N]


@pytest.fixture(scope="module")
def grad_short(quarter):
    b = quarter[1]
    t_grid, u = _short(b)
    spec = adj.ObjectiveSpec(b.c_sto)
    res = adj.gradient(b.model, u, t_grid, b.x0, b.y0, b.z0, spec,
                       options=b.scenario.sim_options(), check_residual=True)
    return b, t_grid, u, spec, res


def test_objective_is_negative_cumulative_oil(grad_short):
    b, t_grid, u, spec, res = grad_short
    tr = res.trajectory
    oil = sum(dt * np.sum(q) for dt, q in zip(tr.dts, tr.oil_rate))
    assert res.phi == pytest.approx(-b.c_sto * oil, rel=1e-14)
    assert res.phi < 0


def test_objective_of_empty_and_incomplete_runs(grad_short):
    b, t_grid, u, spec, res = grad_short
    empty = ds.Trajectory("thermal", [0.0], [b.x0], [b.y0], [b.z0], complete=True)
    assert adj.objective(empty, spec) == 0.0
    with pytest.raises(ValueError):
        adj.objective(ds.Trajectory("thermal", [0.0], [b.x0], [b.y0], [b.z0]), spec)


def test_discount_weight():
    spec = adj.ObjectiveSpec(1.0, discount_rate=0.1)
    assert spec.weight(0.0) == 1.0
    assert spec.weight(adj.SECONDS_PER_YEAR) == pytest.approx(1 / 1.1)
    with pytest.raises(ValueError):
        adj.ObjectiveSpec(-1.0)


def test_adjoint_solves_are_accurate_and_cheap(grad_short):
    res = grad_short[-1]
    assert res.adjoint_residual < 1e-10
    assert res.backward_linear_solves == res.trajectory.nsteps
    assert res.cost_ratio <= 2.0


def test_gradient_matches_central_differences(grad_short):
    b, t_grid, u, spec, res = grad_short
    pin = ds.pinned_sequence(res.trajectory)
    o = b.scenario.sim_options()

    def phi(uu):
        tr = ds.simulate(b.model, uu, t_grid, b.x0, b.y0, b.z0, options=o, pinned_steps=pin)
        return adj.objective(tr, spec)

    h = 2e2
    fd = np.zeros_like(u)
    for i in range(u.shape[0]):
        for k in range(u.shape[1]):
            e = np.zeros_like(u)
            e[i, k] = h
            fd[i, k] = (phi(u + e) - phi(u - e)) / (2 * h)
    np.testing.assert_allclose(res.grad, fd, rtol=1e-5)


def test_split_interval_gradients_sum(grad_short):
    """Two intervals with equal controls over the same steps add up to the single-interval gradient."""
    b, t_grid, u, spec, res = grad_short
    tr2 = res.trajectory
    o = b.scenario.sim_options()
    t1 = np.array([t_grid[0], t_grid[-1]])
    u1 = u[:, :1]
    tr1 = ds.simulate(b.model, u1, t1, b.x0, b.y0, b.z0, options=o,
                      pinned_steps=[(0, dt) for dt in tr2.dts])
    r1 = adj.gradient(b.model, u1, t1, b.x0, b.y0, b.z0, spec, options=o, trajectory=tr1)
    assert r1.phi == pytest.approx(res.phi, rel=1e-12)
    np.testing.assert_allclose(res.grad.sum(1), r1.grad[:, 0], rtol=1e-10)


def test_disconnected_well_has_zero_gradient(quarter):
    b = quarter[1]
    m = b.model
    wells = [dataclasses.replace(m.wells[0], WI=0.0)] + m.wells[1:]
    m0 = ReservoirModel(m.grid, m.fluid, m.rock, m.relperm, m.viscosity, wells, m.mode,
                        m.surroundings, T_iso=m.T_iso)
    t_grid, u = _short(b)
    res = adj.gradient(m0, u, t_grid, b.x0, b.y0, b.z0, adj.ObjectiveSpec(b.c_sto),
                       options=b.scenario.sim_options())
    assert np.all(res.grad[0] == 0.0)
    assert np.all(res.grad[1] != 0.0)


def test_gradient_needs_complete_trajectory(grad_short):
    b, t_grid, u, spec, res = grad_short
    partial = ds.Trajectory("thermal", [0.0], [b.x0], [b.y0], [b.z0])
    with pytest.raises(ValueError):
        adj.gradient(b.model, u, t_grid, b.x0, b.y0, b.z0, spec, trajectory=partial)


def test_gradient_csv(tmp_path, grad_short):
    res = grad_short[-1]
    p = tmp_path / "g.csv"
    adj.write_gradient_csv(p, res, ["INJ1", "PROD"])
    lines = p.read_text().splitlines()
    assert lines[0] == "well,interval,dphi_du_per_Pa"
    assert len(lines) == 1 + res.grad.size
