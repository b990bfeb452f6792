import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from thermoflood import dae_sim as ds


def _opts(b, **kw):
    return b.scenario.sim_options() if not kw else ds.SimOptions(**{**vars(b.scenario.sim_options()), **kw})


def _system_at_start(b, condense=True, method="direct", dt=86400.0):
    o = _opts(b, condense=condense, linear_solver=method)
    sys_ = ds.StepSystem(b.model, b.x0, o)
    w = np.concatenate([b.x0, b.y0 * (1 + 1e-3), b.z0], -1)
    u = np.array([11.5e6, 9.3e6])
    Rn, blocks, _, _ = sys_.evaluate(w, b.x0, u, None, dt)
    return sys_, blocks, Rn


@pytest.mark.parametrize("transpose", [False, True])
def test_condensed_solve_matches_full(quarter, transpose):
    b = quarter[1]
    sys_c, blocks, Rn = _system_at_start(b, condense=True)
    sys_f, _, _ = _system_at_start(b, condense=False)
    rhs = np.random.default_rng(0).standard_normal(Rn.size)
    a = sys_c.solve(blocks, rhs, transpose=transpose)
    ref = sys_f.solve(blocks, rhs, transpose=transpose)
    assert np.max(np.abs(a - ref)) <= 1e-9 * np.max(np.abs(ref))
    A = sys_f.solver.matrix(blocks)
    r = (A.T if transpose else A) @ a - rhs
    assert np.max(np.abs(r)) <= 1e-9 * np.max(np.abs(rhs))


def test_gmres_ilu1_matches_direct(quarter):
    b = quarter[1]
    sys_d, blocks, Rn = _system_at_start(b, condense=False, method="direct")
    sys_g, _, _ = _system_at_start(b, condense=False, method="gmres_ilu1")
    rhs = -Rn.ravel()
    ref = sys_d.solve(blocks, rhs)
    got = sys_g.solve(blocks, rhs)
    assert np.max(np.abs(got - ref)) <= 1e-7 * np.max(np.abs(ref))


def test_linear_solve_helper(quarter):
    b = quarter[1]
    sys_, blocks, Rn = _system_at_start(b, condense=False)
    pat = b.model.pattern
    x = ds.linear_solve(blocks, pat.indptr, pat.indices, Rn.ravel())
    A = sys_.solver.matrix(blocks)
    assert np.max(np.abs(A @ x - Rn.ravel())) <= 1e-10 * np.max(np.abs(Rn))


def test_newton_converges_from_previous_state(quarter):
    b = quarter[1]
    sys_ = ds.StepSystem(b.model, b.x0, b.scenario.sim_options())
    w, st_, _ = sys_.newton(b.x0, b.y0, b.z0, np.array([11e6, 9.5e6]), b.model.default_disturbance(), 86400.0)
    assert st_.converged and st_.newton_iterations <= 8
    assert st_.residual_norm < sys_.opts.newton_tol


@pytest.fixture(scope="module")
def short_run(quarter):
    b = quarter[1]
    t_grid = b.t_grid[:3]
    u = b.scenario.midpoint_controls()[:, :2]
    traj = ds.simulate(b.model, u, t_grid, b.x0, b.y0, b.z0, options=b.scenario.sim_options())
    return b, u, t_grid, traj


def test_adaptive_run_hits_boundaries(short_run):
    b, u, t_grid, traj = short_run
    assert traj.complete
    assert traj.times[-1] == t_grid[-1]
    assert np.sum(traj.dts) == pytest.approx(t_grid[-1] - t_grid[0], rel=1e-12)
    for k in (1,):
        assert t_grid[k] in traj.times
    assert all(s.converged for s in traj.stats)
    kp = traj.kpis()
    assert kp["steps"] == traj.nsteps and kp["newton_iterations"] >= traj.nsteps


def test_pinned_steps_reproduce_trajectory(short_run):
    b, u, t_grid, traj = short_run
    again = ds.simulate(b.model, u, t_grid, b.x0, b.y0, b.z0, options=b.scenario.sim_options(),
                        pinned_steps=ds.pinned_sequence(traj))
    assert again.nsteps == traj.nsteps
    np.testing.assert_allclose(again.x[-1], traj.x[-1], rtol=1e-12)


def test_should_stop_leaves_incomplete(quarter):
    b = quarter[1]
    traj = ds.simulate(b.model, b.scenario.midpoint_controls(), b.t_grid, b.x0, b.y0, b.z0,
                       options=b.scenario.sim_options(), should_stop=lambda: True)
    assert not traj.complete and traj.nsteps == 0


def test_failed_pinned_step_raises(quarter):
    b = quarter[1]
    o = _opts(b, max_newton=0)
    with pytest.raises(ds.SimulationFailed):
        ds.simulate(b.model, b.scenario.midpoint_controls(), b.t_grid, b.x0, b.y0, b.z0,
                    options=o, pinned_steps=[(0, 86400.0 * 5)])


def test_options_validated():
    with pytest.raises(ValueError):
        ds.SimOptions(dt_min=10.0, dt_init=1.0)
    with pytest.raises(ValueError):
        ds.SimOptions(linear_solver="magic")
    with pytest.raises(ValueError):
        ds.SimOptions(grow=0.5)


_O = ds.SimOptions(dt_init=100.0, dt_min=1.0, dt_max=1e5)


@settings(max_examples=200, deadline=None)
@given(iters=st.integers(1, 20), dt=st.floats(1.0, 1e5), converged=st.booleans(),
       gap=st.floats(1e-3, 1e6))
def test_select_timestep_rules(iters, dt, converged, gap):
    stats = ds.StepStats(converged=converged, newton_iterations=iters)
    if not converged:
        if dt * _O.shrink < _O.dt_min:
            with pytest.raises(ds.StepBelowMinimum):
                ds.select_timestep(stats, dt, _O)
        else:
            assert ds.select_timestep(stats, dt, _O) == pytest.approx(dt * _O.shrink)
        return
    new = ds.select_timestep(stats, dt, _O, t=0.0, t_boundary=gap)
    factor = _O.grow if iters <= _O.fast_iters else 1.0 if iters <= _O.slow_iters else _O.shrink
    expect = min(min(max(dt * factor, _O.dt_min), _O.dt_max), gap)
    assert new == pytest.approx(expect)
    assert new <= gap and new <= _O.dt_max
