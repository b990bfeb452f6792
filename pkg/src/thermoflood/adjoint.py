"""Discrete adjoint of the implicit-Euler simulation for single-shooting gradients.

The objective is the rectangle-rule integral

    phi = sum_n dt_n * Phi(y_{n+1}, u_{k(n)})

over accepted steps, which is exactly what the integrator produces. With
the unscaled step residual ``R_n(w_{n+1}, x_n, u) = 0`` the adjoint
recursion runs backward over the steps,

    J_n^T lam_n = -dt_n dPhi/dw_{n+1} + [lam_{n+1, x}; 0],

and the gradient for interval k collects
``dt_n dPhi/du - dt_n lam_{n, x}^T dF/du`` over the steps in k. The
Jacobians are re-assembled from the stored states, so nothing beyond the
trajectory needs to be kept from the forward run.
"""

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from . import dae_sim

SECONDS_PER_YEAR = 365.25 * 86400.0


@dataclass
class ObjectiveSpec:
    """Negative stock-tank oil volume produced, optionally discounted.

    ``c_sto`` converts produced oil-phase moles to stock-tank m3.
    ``discount_rate`` is an annual rate applied at the step end time
    (zero gives plain cumulative oil).
    """

    c_sto: float
    kind: str = "oil"
    discount_rate: float = 0.0
    t0: float = 0.0

    def __post_init__(self):
        if self.kind != "oil":
            raise ValueError(f"unknown objective '{self.kind}'")
        if not self.c_sto > 0:
            raise ValueError("c_sto must be positive")

    def weight(self, t):
        if self.discount_rate == 0.0:
            return 1.0
        return (1.0 + self.discount_rate) ** (-(t - self.t0) / SECONDS_PER_YEAR)

    def integrand(self, model, rates, producers):
        """Phi and its partials with respect to the well-cell algebraic states and u."""
        sel = producers.astype(float)
        val = -self.c_sto * float(np.sum(sel * rates.prod[:, 1]))
        dy = -self.c_sto * sel[:, None] * rates.d_prod_oil_dy
        du = -self.c_sto * sel * rates.d_prod_oil_du
        return val, dy, du


@dataclass
class GradientResult:
    phi: float
    grad: np.ndarray  # (nwell, N), objective units per Pa
    trajectory: object
    adjoint_residual: float = 0.0  # max relative residual of the transposed solves
    backward_jacobian_evals: int = 0
    backward_linear_solves: int = 0
    forward_linear_solves: int = 0
    wall_time: float = 0.0
    extras: dict = field(default_factory=dict)

    @property
    def cost_ratio(self):
        """Backward linear solves relative to the forward run's."""
        return self.backward_linear_solves / max(1, self.forward_linear_solves)


def objective(traj, spec):
    """Rectangle-rule objective evaluated at step ends."""
    if not traj.complete:
        raise ValueError("objective needs a complete trajectory")
    if not traj.dts:
        return 0.0
    w = np.array([spec.weight(t) for t in traj.times[1:]])
    q = np.array([np.sum(r) for r in traj.oil_rate]) if traj.oil_rate else np.zeros(len(w))
    return float(-spec.c_sto * np.sum(w * np.asarray(traj.dts) * q))


def _producers(model):
    return np.array([not wl.is_injector for wl in model.wells], bool)


def gradient(model, controls, t_grid, x0, y0, z0, spec, disturbances=None, options=None,
             trajectory=None, system=None, check_residual=False):
    """Objective and its gradient with respect to the BHP schedule.

    If ``trajectory`` is given it must be a complete run for ``controls``;
    otherwise one adaptive simulation is performed.
    """
    t_start = time.perf_counter()
    o = options or dae_sim.SimOptions()
    sys_ = system or dae_sim.StepSystem(model, x0, o)
    N = len(t_grid) - 1
    controls = np.asarray(controls, float).reshape(model.nwell, N)
    if disturbances is None:
        disturbances = np.repeat(model.default_disturbance()[:, None], N, 1)
    traj = trajectory
    if traj is None:
        traj = dae_sim.simulate(model, controls, t_grid, x0, y0, z0, disturbances, o, system=sys_)
    if not traj.complete:
        raise ValueError("gradient needs a complete trajectory")
    phi = objective(traj, spec)
    prod = _producers(model)
    cells = model.well_cells
    nx, ny = model.nx, model.ny
    grad = np.zeros((model.nwell, N))
    lam_x_next = np.zeros((model.ncell, nx))
    res_max = 0.0
    nsolve = 0
    for n in range(traj.nsteps - 1, -1, -1):
        k = traj.interval[n]
        dt = traj.dts[n]
        u, d = controls[:, k], disturbances[:, k]
        wt = spec.weight(traj.times[n + 1])
        w = np.concatenate([traj.x[n + 1], traj.y[n + 1], traj.z[n + 1]], -1)
        _, blocks, fe, _ = sys_.evaluate(w, traj.x[n], u, d, dt, jac=True)
        rates = model.well_terms(fe.fields, u, d, jac=True)[4]
        _, dphi_y, dphi_u = spec.integrand(model, rates, prod)
        b = np.zeros((model.ncell, sys_.m))
        b[:, :nx] = lam_x_next
        np.add.at(b[:, nx:nx + ny], cells, -dt * wt * dphi_y)
        # scaled system: (Dr J Dc)^T mu = Dc b, lam = Dr mu
        rhs = (b * sys_.wscale).ravel()
        mu = sys_.solve(blocks, rhs, transpose=True)
        nsolve += 1
        if check_residual:
            A = sys_.solver.matrix(blocks)
            r = A.T @ mu - rhs
            res_max = max(res_max, float(np.max(np.abs(r)) / max(np.max(np.abs(rhs)), 1e-300)))
        lam = mu.reshape(model.ncell, sys_.m)
        lam_x = lam[:, :nx] / sys_.xscale
        grad[:, k] += dt * wt * dphi_u - dt * np.einsum("ci,ciw->w", lam_x, fe.dFdu)
        lam_x_next = lam_x
    fwd = int(sum(s.linear_solves for s in traj.stats))
    return GradientResult(phi, grad, traj, res_max, traj.nsteps, nsolve, fwd,
                          time.perf_counter() - t_start)


def write_gradient_csv(path, result, well_names=None):
    """Gradient dump: one row per (well, interval)."""
    nwell, N = result.grad.shape
    names = well_names or [f"W{i}" for i in range(nwell)]
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["well", "interval", "dphi_du_per_Pa"])
        for i in range(nwell):
            for k in range(N):
                wr.writerow([names[i], k, f"{result.grad[i, k]:.17g}"])
