"""Bound-constrained single-shooting optimization of well BHP schedules.

A projected L-BFGS iteration in MPa units: the quasi-Newton direction is
computed on the variables that are not held at a bound, trial points are
projected onto the box, and an Armijo backtracking search accepts the
step. Trial simulations reuse the step sequence of the current iterate,
so the objective is a smooth function of the controls along the search.
"""

import csv
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import adjoint, dae_sim

log = logging.getLogger(__name__)

MPA = 1.0e6


class InfeasibleStart(ValueError):
    pass


@dataclass
class OptimizerOptions:
    max_iter: int = 50
    pg_tol: float = 1e-6  # on max|P(v - g) - v| / max(1, |phi|), v in MPa
    f_rtol: float = 1e-8
    memory: int = 10
    armijo_c: float = 1e-4
    max_backtracks: int = 10
    init_step_MPa: float = 0.5

    def __post_init__(self):
        if self.max_iter < 0 or self.memory < 1 or self.max_backtracks < 0:
            raise ValueError("iteration counts must be nonnegative (memory >= 1)")
        if not (0 < self.armijo_c < 1) or self.pg_tol <= 0 or self.f_rtol < 0 or self.init_step_MPa <= 0:
            raise ValueError("bad optimizer tolerance")


@dataclass
class ControlVector:
    """BHP schedule (nwell, N) in Pa with per-well bounds."""

    u: np.ndarray
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        self.u = np.array(self.u, float)
        n = self.u.shape[0]
        self.lo = np.broadcast_to(np.asarray(self.lo, float).reshape(n, -1), self.u.shape).copy()
        self.hi = np.broadcast_to(np.asarray(self.hi, float).reshape(n, -1), self.u.shape).copy()
        if np.any(self.lo > self.hi):
            raise ValueError("lower bound above upper bound")

    @classmethod
    def midpoint(cls, lo, hi, N):
        lo, hi = np.asarray(lo, float), np.asarray(hi, float)
        return cls(np.repeat((0.5 * (lo + hi))[:, None], N, 1), lo[:, None], hi[:, None])

    def feasible(self):
        return bool(np.all(self.u >= self.lo) and np.all(self.u <= self.hi))

    def project(self, u):
        return np.clip(u, self.lo, self.hi)


@dataclass
class Iterate:
    iteration: int
    phi: float
    pg_norm: float
    step_norm: float  # max |du| in MPa
    alpha: float
    backtracks: int
    simulations: int
    gradients: int


@dataclass
class OptimizeReport:
    iterates: list
    simulations: int
    gradient_evaluations: int
    controls: np.ndarray
    phi0: float
    phi: float
    termination: str
    trajectory: object = None
    initial_trajectory: object = None
    iterations: int = 0
    wall_time: float = 0.0
    sim_kpis: list = field(default_factory=list)


class Problem:
    """Objective and gradient evaluation with bookkeeping of simulations."""

    def __init__(self, model, t_grid, x0, y0, z0, spec, options=None, disturbances=None):
        self.model = model
        self.t_grid = np.asarray(t_grid, float)
        self.x0, self.y0, self.z0 = x0, y0, z0
        self.spec = spec
        self.options = options or dae_sim.SimOptions()
        self.disturbances = disturbances
        self.system = dae_sim.StepSystem(model, x0, self.options)
        self.simulations = 0
        self.gradients = 0
        self.sim_kpis = []

    @property
    def N(self):
        return len(self.t_grid) - 1

    def simulate(self, u, pinned=None):
        self.simulations += 1
        tr = dae_sim.simulate(self.model, u, self.t_grid, self.x0, self.y0, self.z0,
                              self.disturbances, self.options, pinned_steps=pinned, system=self.system)
        self.sim_kpis.append(tr.kpis())
        return adjoint.objective(tr, self.spec), tr

    def gradient(self, u, traj):
        self.gradients += 1
        return adjoint.gradient(self.model, u, self.t_grid, self.x0, self.y0, self.z0, self.spec,
                                self.disturbances, self.options, trajectory=traj, system=self.system)


def _two_loop(g, S, Y):
    q = g.copy()
    alphas = []
    for s, y in zip(reversed(S), reversed(Y)):
        rho = 1.0 / np.dot(y, s)
        a = rho * np.dot(s, q)
        alphas.append((rho, a))
        q -= a * y
    s, y = S[-1], Y[-1]
    q *= np.dot(s, y) / np.dot(y, y)
    for (s, y), (rho, a) in zip(zip(S, Y), reversed(alphas)):
        b = rho * np.dot(y, q)
        q += (a - b) * s
    return q


def optimize(problem, u0, options=None, on_iterate=None, should_stop=None):
    """Minimize the objective over the box; ``u0`` is a ControlVector."""
    o = options or OptimizerOptions()
    t_start = time.perf_counter()
    if not u0.feasible():
        raise InfeasibleStart("initial controls violate the bounds")
    shape = u0.u.shape
    lo, hi = (u0.lo / MPA).ravel(), (u0.hi / MPA).ravel()
    v = (u0.u / MPA).ravel()

    def to_pa(vv):
        return np.clip(vv * MPA, u0.lo.ravel(), u0.hi.ravel()).reshape(shape)

    phi, traj = problem.simulate(to_pa(v))
    traj0 = traj
    g = problem.gradient(to_pa(v), traj).grad.ravel() * MPA
    phi0 = phi
    S, Y = [], []
    iterates = [Iterate(0, phi, _pg_norm(v, g, lo, hi), 0.0, 0.0, 0, problem.simulations, problem.gradients)]
    termination = "maximum iterations"
    it = 0
    for it in range(1, o.max_iter + 1):
        if should_stop is not None and should_stop():
            termination = "interrupted"
            it -= 1
            break
        pgn = _pg_norm(v, g, lo, hi)
        if pgn <= o.pg_tol * max(1.0, abs(phi)):
            termination = "projected gradient below tolerance"
            it -= 1
            break
        eps = 1e-12 * (hi - lo + 1.0)
        active = ((v <= lo + eps) & (g > 0)) | ((v >= hi - eps) & (g < 0))
        gf = np.where(active, 0.0, g)
        d = None
        if S:
            d = -_two_loop(gf, S, Y)
            d[active] = 0.0
            if np.dot(gf, d) >= -1e-14 * np.linalg.norm(gf) * np.linalg.norm(d):
                S, Y = [], []
                d = None
        if d is None:
            d = -gf * (o.init_step_MPa / max(np.max(np.abs(gf)), 1e-300))
        accepted = None
        alpha = 1.0
        pinned = dae_sim.pinned_sequence(traj)
        nbt = 0
        for nbt in range(o.max_backtracks + 1):
            vt = np.clip(v + alpha * d, lo, hi)
            if np.max(np.abs(vt - v)) < 1e-12:
                break
            try:
                phit, trt = problem.simulate(to_pa(vt), pinned)
            except dae_sim.SimulationFailed:
                try:
                    phit, trt = problem.simulate(to_pa(vt))
                except dae_sim.SimulationFailed as exc:
                    log.info("trial at alpha=%.3g failed: %s", alpha, exc)
                    alpha *= 0.5
                    continue
            if phit <= phi + o.armijo_c * np.dot(g, vt - v):
                accepted = (vt, phit, trt)
                break
            alpha *= 0.5
        if accepted is None:
            termination = "line search failed"
            it -= 1
            break
        vt, phit, trt = accepted
        gt = problem.gradient(to_pa(vt), trt).grad.ravel() * MPA
        s, yv = vt - v, gt - g
        if np.dot(s, yv) > 1e-10 * np.linalg.norm(s) * np.linalg.norm(yv):
            S.append(s)
            Y.append(yv)
            if len(S) > o.memory:
                S.pop(0)
                Y.pop(0)
        small = abs(phi - phit) <= o.f_rtol * max(1.0, abs(phi))
        step = float(np.max(np.abs(s)))
        v, g, phi, traj = vt, gt, phit, trt
        rec = Iterate(it, phi, _pg_norm(v, g, lo, hi), step, alpha, nbt, problem.simulations,
                      problem.gradients)
        iterates.append(rec)
        log.info("iter %d  phi %.10g  |pg| %.3e  step %.3e MPa  alpha %.3g", it, phi, rec.pg_norm,
                 step, alpha)
        if on_iterate is not None:
            on_iterate(rec, to_pa(v), traj)
        if small:
            termination = "relative objective change below tolerance"
            break
    return OptimizeReport(iterates, problem.simulations, problem.gradients, to_pa(v), phi0, phi,
                          termination, traj, traj0, max(it, 0), time.perf_counter() - t_start,
                          list(problem.sim_kpis))


def _pg_norm(v, g, lo, hi):
    return float(np.max(np.abs(np.clip(v - g, lo, hi) - v))) if v.size else 0.0


def bound_fractions(u, lo, hi, tol=0.05, relative_to="bound"):
    """Per-well fraction of intervals within ``tol`` of the lower and upper bounds.

    ``relative_to="bound"`` measures the distance against ``|bound|``;
    ``"width"`` against the box width ``hi - lo``.
    """
    u = np.asarray(u, float)
    lo = np.asarray(lo, float).reshape(-1, 1)
    hi = np.asarray(hi, float).reshape(-1, 1)
    if relative_to == "bound":
        near_lo = np.abs(u - lo) <= tol * np.abs(lo)
        near_hi = np.abs(u - hi) <= tol * np.abs(hi)
    elif relative_to == "width":
        near_lo = u - lo <= tol * (hi - lo)
        near_hi = hi - u <= tol * (hi - lo)
    else:
        raise ValueError(relative_to)
    return near_lo.mean(1), near_hi.mean(1)


def kpi_report(report, model, c_sto, name="", N=None):
    """Problem characteristics and optimizer counts; contains no timings, so it is reproducible."""
    counts = model.equation_counts()
    N = report.controls.shape[1] if N is None else N
    sims = report.sim_kpis
    nsim = max(1, len(sims))
    steps = sum(k["steps"] for k in sims)
    newton = sum(k["newton_iterations"] for k in sims)
    out = {
        "scenario": name,
        "mode": model.mode,
        "manipulated_inputs": int(model.nwell * N),
        "differential_equations": int(counts[0]),
        "algebraic_equations": int(counts[1]),
        "iterations": int(report.iterations),
        "simulations": int(report.simulations),
        "gradient_evaluations": int(report.gradient_evaluations),
        "steps_per_simulation": steps / nsim,
        "newton_iterations_per_simulation": newton / nsim,
        "newton_iterations_per_step": newton / max(1, steps),
        "phi_initial": report.phi0,
        "phi_final": report.phi,
        "cumulative_oil_initial_m3": -report.phi0,
        "cumulative_oil_final_m3": -report.phi,
        "improvement_percent": 100.0 * (report.phi0 - report.phi) / max(abs(report.phi0), 1e-300),
        "termination": report.termination,
        "c_sto_m3_per_mol": c_sto,
    }
    return out


def write_iterates_csv(path, report):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["iteration", "phi", "pg_norm", "step_norm_MPa", "alpha", "backtracks",
                     "simulations", "gradients"])
        for r in report.iterates:
            wr.writerow([r.iteration, f"{r.phi:.17g}", f"{r.pg_norm:.6e}", f"{r.step_norm:.6e}",
                         f"{r.alpha:.6g}", r.backtracks, r.simulations, r.gradients])


def write_schedule_csv(path, u, well_names, t_grid=None):
    """Control schedule: one row per (well, interval), BHP in Pa."""
    u = np.asarray(u, float)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        head = ["well", "interval", "bhp_Pa"]
        if t_grid is not None:
            head[2:2] = ["t_start_days", "t_end_days"]
        wr.writerow(head)
        for i, name in enumerate(well_names):
            for k in range(u.shape[1]):
                row = [name, k]
                if t_grid is not None:
                    row += [f"{t_grid[k] / 86400.0:.10g}", f"{t_grid[k + 1] / 86400.0:.10g}"]
                wr.writerow(row + [f"{u[i, k]:.17g}"])


def read_schedule_csv(path, well_names, N):
    """Inverse of :func:`write_schedule_csv`."""
    u = np.full((len(well_names), N), np.nan)
    idx = {n: i for i, n in enumerate(well_names)}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            if row["well"] not in idx:
                raise ValueError(f"unknown well '{row['well']}' in schedule")
            k = int(row["interval"])
            if not 0 <= k < N:
                raise ValueError(f"interval {k} outside 0..{N - 1}")
            u[idx[row["well"]], k] = float(row["bhp_Pa"])
    if np.isnan(u).any():
        raise ValueError("schedule does not cover every well and interval")
    return u
