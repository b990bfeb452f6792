"""Implicit-Euler integration of the semi-explicit DAE ``x' = F(y, u, d), 0 = G(x, y, z)``.

Each step solves, for all cells at once,

    R(w) = [x+ - x - dt F(y+, u, d);  G(x+, y+, z+)] = 0,   w = (x+, y+, z+)

by Newton's method. Unknowns are grouped per cell, so the Jacobian is a
block matrix on the cell adjacency pattern. Rows and columns are scaled
by fixed per-cell factors taken from the initial state.

The algebraic unknowns of a cell only appear in that cell's equilibrium
rows and in the flux rows of its neighbours, so by default they are
eliminated cell by cell (a block Schur complement) and the global linear
solve acts on the differential unknowns alone. The full system is kept
available for comparison.
"""

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import flash
from .kernels import BlockILU1
from .thermo import NoPhysicalRoot, R

log = logging.getLogger(__name__)


class SimulationError(RuntimeError):
    pass


class NewtonDiverged(SimulationError):
    pass


class LinearSolveFailed(SimulationError):
    pass


class StepBelowMinimum(SimulationError):
    pass


class SimulationFailed(SimulationError):
    def __init__(self, t, reason):
        super().__init__(f"simulation failed at t = {t:.6g} s: {reason}")
        self.t = t
        self.reason = reason


@dataclass
class SimOptions:
    newton_tol: float = 1.0e-8
    max_newton: int = 20
    dt_init: float = 86400.0
    dt_min: float = 1.0
    dt_max: float = 10 * 86400.0
    grow: float = 1.5
    shrink: float = 0.5
    fast_iters: int = 5
    slow_iters: int = 10
    linear_solver: str = "direct"
    gmres_tol: float = 1.0e-10
    gmres_restart: int = 50
    gmres_maxiter: int = 20
    condense: bool = True  # eliminate per-cell (y, z) before the global solve

    def __post_init__(self):
        if not 0 < self.dt_min <= self.dt_init <= self.dt_max:
            raise ValueError("need 0 < dt_min <= dt_init <= dt_max")
        if self.newton_tol <= 0 or self.gmres_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.linear_solver not in ("direct", "gmres_ilu1"):
            raise ValueError("linear_solver must be 'direct' or 'gmres_ilu1'")
        if not (self.grow >= 1.0 and 0.0 < self.shrink < 1.0):
            raise ValueError("need grow >= 1 and 0 < shrink < 1")


@dataclass
class StepStats:
    converged: bool = False
    newton_iterations: int = 0
    residual_norm: float = np.inf
    linear_iterations: int = 0
    function_evals: int = 0
    jacobian_evals: int = 0
    linear_solves: int = 0
    direct_fallbacks: int = 0
    reason: str = ""


@dataclass
class Trajectory:
    """Accepted steps of one simulation (state after each step)."""

    mode: str
    times: list
    x: list
    y: list
    z: list
    dts: list = field(default_factory=list)
    interval: list = field(default_factory=list)
    u: list = field(default_factory=list)
    d: list = field(default_factory=list)
    oil_rate: list = field(default_factory=list)  # mol/s per well (oil phase, producers)
    water_inj: list = field(default_factory=list)  # mol/s per well
    prod: list = field(default_factory=list)  # (nwell, 3) mol/s
    prod_comp: list = field(default_factory=list)  # (nwell, nc) mol/s
    heat: list = field(default_factory=list)
    stats: list = field(default_factory=list)
    rejected: int = 0
    complete: bool = False
    wall_time: float = 0.0

    @property
    def nsteps(self):
        return len(self.dts)

    def kpis(self):
        st = self.stats
        out = {
            "steps": self.nsteps,
            "rejected_steps": self.rejected,
            "newton_iterations": int(sum(s.newton_iterations for s in st)),
            "function_evals": int(sum(s.function_evals for s in st)),
            "jacobian_evals": int(sum(s.jacobian_evals for s in st)),
            "linear_iterations": int(sum(s.linear_iterations for s in st)),
            "linear_solves": int(sum(s.linear_solves for s in st)),
            "wall_time": self.wall_time,
        }
        out["newton_per_step"] = out["newton_iterations"] / max(1, self.nsteps)
        return out


# --------------------------------------------------------------------------
# linear algebra
# --------------------------------------------------------------------------

class LinearSolver:
    """Direct or block-ILU(1)-preconditioned GMRES solver on a fixed block pattern."""

    def __init__(self, indptr, indices, method="direct", tol=1e-10, restart=50, maxiter=20):
        self.indptr = np.asarray(indptr, np.int64)
        self.indices = np.asarray(indices, np.int64)
        self.method = method
        self.tol = tol
        self.restart = restart
        self.maxiter = maxiter
        self._ilu = None
        nb = len(self.indptr) - 1
        rows = np.repeat(np.arange(nb), np.diff(self.indptr))
        key = rows * nb + self.indices
        tkey = self.indices * nb + rows
        self._tpos = np.searchsorted(key, tkey)
        if not np.array_equal(key[self._tpos], tkey):
            raise ValueError("block pattern must be structurally symmetric")
        self.iterations = 0
        self.fallbacks = 0

    def matrix(self, blocks):
        b = blocks.shape[1]
        nb = len(self.indptr) - 1
        return sp.bsr_matrix((blocks, self.indices, self.indptr), shape=(nb * b, nb * b))

    def transpose_blocks(self, blocks):
        return np.ascontiguousarray(np.swapaxes(blocks[self._tpos], 1, 2))

    def solve(self, blocks, rhs, transpose=False, method=None):
        method = method or self.method
        self.iterations = 0
        if transpose:
            blocks = self.transpose_blocks(blocks)
        if method == "direct":
            return self._direct(blocks, rhs)
        try:
            return self._gmres(blocks, rhs)
        except LinearSolveFailed as exc:
            log.info("GMRES failed (%s); falling back to a direct solve", exc)
            self.fallbacks += 1
            return self._direct(blocks, rhs)

    def _direct(self, blocks, rhs):
        A = self.matrix(blocks).tocsc()
        try:
            with np.errstate(all="ignore"):
                lu = spla.splu(A)
                x = lu.solve(np.asarray(rhs, float))
        except RuntimeError as exc:
            raise LinearSolveFailed(str(exc)) from exc
        if not np.all(np.isfinite(x)):
            raise LinearSolveFailed("non-finite direct solution")
        return x

    def _gmres(self, blocks, rhs):
        A = self.matrix(blocks).tocsr()
        if self._ilu is None:
            self._ilu = BlockILU1(self.indptr, self.indices)
        try:
            self._ilu.factor(blocks)
        except np.linalg.LinAlgError as exc:
            raise LinearSolveFailed(f"ILU(1) breakdown: {exc}") from exc
        n = A.shape[0]
        M = spla.LinearOperator((n, n), matvec=self._ilu.solve, dtype=float)
        count = [0]

        def cb(_):
            count[0] += 1
        rhs = np.asarray(rhs, float)
        x, info = spla.gmres(A, rhs, M=M, rtol=self.tol, atol=0.0, restart=self.restart,
                             maxiter=self.maxiter, callback=cb, callback_type="pr_norm")
        self.iterations = count[0]
        res = np.linalg.norm(A @ x - rhs)
        if info != 0 or not np.isfinite(res) or res > 10 * self.tol * max(np.linalg.norm(rhs), 1e-300):
            raise LinearSolveFailed(f"GMRES info={info}, relative residual "
                                    f"{res / max(np.linalg.norm(rhs), 1e-300):.2e}")
        return x


def linear_solve(blocks, indptr, indices, rhs, method="direct", tol=1e-10, restart=50, maxiter=20):
    """Solve a square block-sparse system given by BSR blocks and their pattern."""
    return LinearSolver(indptr, indices, method, tol, restart, maxiter).solve(blocks, rhs)


# --------------------------------------------------------------------------
# step system
# --------------------------------------------------------------------------

class StepSystem:
    """Scaled implicit-Euler step residual and Jacobian for one model."""

    def __init__(self, model, x0, options=None):
        self.model = model
        self.opts = options or SimOptions()
        m = model
        self.nx, self.ny, self.nz = m.nx, m.ny, m.nz
        self.m = m.nx + m.ny + m.nz
        x0 = np.asarray(x0, float)
        off = 1 if m.thermal else 0
        Ntot = x0[:, off:].sum(-1)
        xs = np.repeat(Ntot[:, None], m.nx, -1)
        if m.thermal:
            xs[:, 0] = R * Ntot * flash.T_SCALE
        mode = "UV" if m.thermal else "VT"
        T = None if m.thermal else np.full(m.ncell, m.T_iso)
        self.xscale = xs
        self.wscale = np.concatenate([xs, flash.unknown_scales(mode, m.nc, Ntot, T)], -1)
        self.solver = LinearSolver(m.pattern.indptr, m.pattern.indices, self.opts.linear_solver,
                                   self.opts.gmres_tol, self.opts.gmres_restart, self.opts.gmres_maxiter)
        self._rows = np.repeat(np.arange(m.ncell), np.diff(m.pattern.indptr))
        self.positive = np.r_[np.zeros(m.nx, bool), flash.positive_mask(mode, m.nc)]
        self.positive[off:m.nx] = True
        self.floor = np.zeros((m.ncell, self.m))
        first = m.nx + (2 if m.thermal else 1)
        self.floor[:, first:m.nx + m.ny] = flash.FLOOR_REL * Ntot[:, None]

    def split(self, w):
        nx, ny = self.nx, self.ny
        return w[:, :nx], w[:, nx:nx + ny], w[:, nx + ny:]

    def evaluate(self, w, x_old, u, d, dt, jac=True):
        """Scaled residual (ncell, m) and, if requested, scaled Jacobian blocks."""
        model = self.model
        x, y, z = self.split(w)
        props = flash.evaluate_cells(model.fluid, model.rock, model.V_ref, *model.split_y(y),
                                     order=3 if jac else 2)
        fe = model.residual_F(y, u, d, jac=jac, props=props)
        ge = model.residual_G(x, y, z, jac=jac, props=props)
        Rx = (x - x_old - dt * fe.F) / self.xscale
        Rn = np.concatenate([Rx, ge.G], -1)
        if not jac:
            return Rn, None, fe, ge
        return Rn, self.jacobian_blocks(fe, ge, dt), fe, ge

    def jacobian_blocks(self, fe, ge, dt):
        model = self.model
        pat = model.pattern
        nx, ny = self.nx, self.ny
        rows = np.repeat(np.arange(model.ncell), np.diff(pat.indptr))
        cols = pat.indices
        blocks = np.zeros((pat.nblocks, self.m, self.m))
        blocks[:, :nx, nx:nx + ny] = -dt * fe.dFdy
        dg = pat.diag
        blocks[dg, :nx, :nx] += np.eye(nx)
        blocks[dg, nx:, :nx] = ge.dGdx
        blocks[dg, nx:, nx:] = ge.dGdw
        rs = np.concatenate([1.0 / self.xscale, np.ones((model.ncell, ny + self.nz))], -1)
        blocks *= rs[rows][:, :, None] * self.wscale[cols][:, None, :]
        return blocks

    def solve(self, blocks, rhs, transpose=False):
        """Solve the scaled step system (or its transpose) for a flat right-hand side."""
        if not self.opts.condense:
            return self.solver.solve(blocks, rhs, transpose=transpose)
        nx, m = self.nx, self.m
        n = self.model.ncell
        pat = self.model.pattern
        rhs = np.asarray(rhs, float).reshape(n, m)
        rx, rg = rhs[:, :nx], rhs[:, nx:]
        dg = pat.diag
        Gx = blocks[dg, nx:, :nx]
        Gw = blocks[dg, nx:, nx:]
        T = blocks[:, :nx, nx:]
        A = blocks[:, :nx, :nx]
        cols = pat.indices
        rows = self._rows
        try:
            K = np.linalg.solve(Gw, Gx)  # (n, nw, nx)
        except np.linalg.LinAlgError as exc:
            raise LinearSolveFailed(f"singular cell equilibrium block: {exc}") from exc
        M = A - np.einsum("bik,bkj->bij", T, K[cols])
        if not transpose:
            g = np.linalg.solve(Gw, rg[..., None])[..., 0]  # Gw^-1 rg
            red = rx.copy()
            np.add.at(red, rows, -np.einsum("bik,bk->bi", T, g[cols]))
            dx = self.solver.solve(M, red.ravel()).reshape(n, nx)
            dw = g - np.einsum("nij,nj->ni", K, dx)
            return np.concatenate([dx, dw], -1).ravel()
        h = np.linalg.solve(np.swapaxes(Gw, 1, 2), rg[..., None])[..., 0]  # Gw^-T bg
        red = rx - np.einsum("nji,nj->ni", Gx, h)
        lx = self.solver.solve(M, red.ravel(), transpose=True).reshape(n, nx)
        # lambda_g_j = Gw_j^-T (bg_j - sum_i T_ij^T lambda_x_i)
        acc = np.zeros_like(rg)
        np.add.at(acc, cols, np.einsum("bki,bk->bi", T, lx[rows]))
        lg = np.linalg.solve(np.swapaxes(Gw, 1, 2), (rg - acc)[..., None])[..., 0]
        return np.concatenate([lx, lg], -1).ravel()

    def max_step(self, w, dw):
        return flash.max_step(w, dw, self.positive[None, :]).min()

    def newton(self, x_old, y_old, z_old, u, d, dt, w0=None):
        """Solve one implicit-Euler step; returns (w, stats, fe)."""
        o = self.opts
        st = StepStats()
        w = np.concatenate([x_old, y_old, z_old], -1) if w0 is None else w0.copy()
        fe = None
        for it in range(o.max_newton + 1):
            try:
                Rn, blocks, fe, _ = self.evaluate(w, x_old, u, d, dt, jac=True)
            except (NoPhysicalRoot, FloatingPointError, ValueError) as exc:
                st.reason = f"property evaluation failed: {exc}"
                return w, st, fe
            st.function_evals += 1
            st.jacobian_evals += 1
            st.newton_iterations = it + 1
            norm = float(np.max(np.abs(Rn)))
            st.residual_norm = norm
            if not np.isfinite(norm):
                st.reason = "non-finite residual"
                return w, st, fe
            if norm < o.newton_tol:
                st.converged = True
                return w, st, fe
            if it == o.max_newton:
                break
            try:
                dws = self.solve(blocks, -Rn.ravel())
            except LinearSolveFailed as exc:
                st.reason = str(exc)
                return w, st, fe
            st.linear_solves += 1
            st.linear_iterations += self.solver.iterations
            st.direct_fallbacks = self.solver.fallbacks
            dw = dws.reshape(w.shape) * self.wscale
            alpha = self.max_step(w, dw)
            w = w + alpha * dw
            w = np.where(self.positive, np.maximum(w, self.floor), w)
        st.reason = f"no convergence in {o.max_newton} Newton iterations (|R| = {st.residual_norm:.2e})"
        return w, st, fe


# --------------------------------------------------------------------------
# time stepping
# --------------------------------------------------------------------------

def select_timestep(stats, dt, options, t=None, t_boundary=None):
    """Next step size from the last attempt's Newton statistics.

    Grow by ``options.grow`` after fast convergence, keep after moderate
    convergence, shrink otherwise; clip to [dt_min, dt_max] and to the next
    control-interval boundary.
    """
    o = options
    if not stats.converged:
        new = dt * o.shrink
        if new < o.dt_min * (1.0 - 1e-12):
            raise StepBelowMinimum(f"step size {new:.3g} s below dt_min = {o.dt_min:.3g} s "
                                   f"({stats.reason})")
        return new
    if stats.newton_iterations <= o.fast_iters:
        new = dt * o.grow
    elif stats.newton_iterations <= o.slow_iters:
        new = dt
    else:
        new = dt * o.shrink
    new = min(max(new, o.dt_min), o.dt_max)
    if t is not None and t_boundary is not None:
        new = min(new, t_boundary - t)
    return new


def _boundaries(t_grid):
    t_grid = np.asarray(t_grid, float)
    if t_grid.ndim != 1 or len(t_grid) < 1 or np.any(np.diff(t_grid) < 0):
        raise ValueError("control grid must be nondecreasing")
    return t_grid


def simulate(model, controls, t_grid, x0, y0, z0, disturbances=None, options=None,
             pinned_steps=None, system=None, on_step=None, should_stop=None):
    """Integrate from ``t_grid[0]`` to ``t_grid[-1]`` with zero-order-hold controls.

    ``controls`` has shape (nwell, N) for ``N = len(t_grid) - 1`` intervals.
    With ``pinned_steps`` (a list of (interval, dt)) the step sequence is
    reproduced exactly instead of being chosen adaptively.
    """
    o = options or SimOptions()
    t_grid = _boundaries(t_grid)
    N = len(t_grid) - 1
    controls = np.asarray(controls, float).reshape(model.nwell, N) if model.nwell else np.zeros((0, N))
    if disturbances is None:
        disturbances = np.repeat(model.default_disturbance()[:, None], N, 1)
    disturbances = np.asarray(disturbances, float).reshape(model.nwell, N) if model.nwell \
        else np.zeros((0, N))
    sys_ = system or StepSystem(model, x0, o)
    traj = Trajectory(model.mode, [t_grid[0]], [np.array(x0, float)], [np.array(y0, float)],
                      [np.array(z0, float)])
    t0 = time.perf_counter()
    x, y, z = (np.array(a, float) for a in (x0, y0, z0))
    if pinned_steps is not None:
        for k, dt in pinned_steps:
            u, d = controls[:, k], disturbances[:, k]
            w, st, fe = sys_.newton(x, y, z, u, d, dt)
            if not st.converged:
                raise SimulationFailed(traj.times[-1], st.reason)
            x, y, z = sys_.split(w)
            _record(traj, model, traj.times[-1] + dt, dt, k, u, d, x, y, z, st, fe)
            if on_step is not None:
                on_step(traj)
        traj.complete = True
        traj.wall_time = time.perf_counter() - t0
        return traj

    dt = o.dt_init
    t = t_grid[0]
    for k in range(N):
        t_end = t_grid[k + 1]
        u, d = controls[:, k], disturbances[:, k]
        while t < t_end - 1e-9 * max(1.0, abs(t_end)):
            if should_stop is not None and should_stop():
                traj.wall_time = time.perf_counter() - t0
                return traj
            h = min(dt, t_end - t)
            w, st, fe = sys_.newton(x, y, z, u, d, h)
            if not st.converged:
                traj.rejected += 1
                log.debug("step rejected at t=%.4g dt=%.4g: %s", t, h, st.reason)
                try:
                    dt = select_timestep(st, h, o)
                except StepBelowMinimum as exc:
                    raise SimulationFailed(t, str(exc)) from exc
                continue
            x, y, z = sys_.split(w)
            t_new = t_end if abs(t + h - t_end) <= 1e-9 * max(1.0, abs(t_end)) else t + h
            _record(traj, model, t_new, t_new - t, k, u, d, x, y, z, st, fe)
            t = t_new
            if on_step is not None:
                on_step(traj)
            # the growth rule acts on the intended step, not one truncated at a boundary
            dt = select_timestep(st, dt, o)
    traj.complete = True
    traj.wall_time = time.perf_counter() - t0
    return traj


def _record(traj, model, t, dt, k, u, d, x, y, z, st, fe):
    traj.times.append(t)
    traj.x.append(x.copy())
    traj.y.append(y.copy())
    traj.z.append(z.copy())
    traj.dts.append(dt)
    traj.interval.append(k)
    traj.u.append(np.array(u, float))
    traj.d.append(np.array(d, float))
    if fe is not None and model.nwell:
        rates = model.well_terms(fe.fields, u, d, jac=False)[4]
        traj.oil_rate.append(rates.prod[:, 1].copy())
        traj.water_inj.append(rates.inj_water.copy())
        traj.prod.append(rates.prod.copy())
        traj.prod_comp.append(rates.prod_components.copy())
        traj.heat.append(rates.heat.copy())
    else:
        traj.oil_rate.append(np.zeros(model.nwell))
        traj.water_inj.append(np.zeros(model.nwell))
        traj.prod.append(np.zeros((model.nwell, 3)))
        traj.prod_comp.append(np.zeros((model.nwell, model.nc)))
        traj.heat.append(np.zeros(model.nwell))
    traj.stats.append(st)


def pinned_sequence(traj):
    """The accepted (interval, dt) sequence of a trajectory."""
    return list(zip(traj.interval, traj.dts))
