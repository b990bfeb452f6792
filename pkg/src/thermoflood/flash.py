"""UV and VT flash as KKT systems of the entropy / Helmholtz extremum problems.

Unknown layouts (``m`` hydrocarbon components):

* UV: ``y = (T, P, n^w, n^o, n^g)`` and ``z = (z_U, z_V, z_w, z_1..z_m)``
* VT: ``y = (P, n^w, n^o, n^g)`` and ``z = (z_V, z_w, z_1..z_m)``

The Lagrangian is ``-S + z.(constraints)`` for UV and ``A + z.(constraints)``
for VT, so at a solution ``z_U = 1/T``, ``z_V = P/T`` and ``z_k = -mu_k/T``
(UV) or ``z_V = P`` and ``z_k = -mu_k`` (VT).

Residual rows are nondimensional: stationarity rows are multiplied by the
unknown's scale and divided by ``R N`` (``R T N`` for VT), the energy row
by ``R N T_SCALE``, the volume row by ``V`` and the mole rows by ``N``,
where ``N`` is the total fluid amount of the specification.

All routines are batched over a leading axis so the reservoir model can
evaluate every cell in one call.
"""

import csv
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from . import thermo
from .thermo import R

log = logging.getLogger(__name__)

T_SCALE = 100.0  # K
P_SCALE = 1.0e6  # Pa
NEWTON_TOL = 1.0e-9
MAX_ITER = 50
FLOOR_REL = 1.0e-12


class FlashError(RuntimeError):
    pass


class MaxIterations(FlashError):
    pass


class NonphysicalSpec(FlashError):
    pass


@dataclass
class FlashSpecUV:
    U: float
    V: float
    n_w: float
    n: np.ndarray
    rock: thermo.RockSpec
    V_ref: float

    def __post_init__(self):
        self.n = np.asarray(self.n, float)
        if self.V <= 0 or self.n_w < 0 or np.any(self.n < 0) or self.n.sum() <= 0:
            raise NonphysicalSpec("need V > 0, n_w >= 0, n >= 0 and sum(n) > 0")
        if self.V <= self.V_ref:
            raise NonphysicalSpec("cell volume does not exceed the rock volume")


@dataclass
class FlashSpecVT:
    T: float
    V: float
    n_w: float
    n: np.ndarray
    rock: thermo.RockSpec
    V_ref: float

    def __post_init__(self):
        self.n = np.asarray(self.n, float)
        if self.T <= 0 or self.V <= 0 or self.n_w < 0 or np.any(self.n < 0) or self.n.sum() <= 0:
            raise NonphysicalSpec("need T > 0, V > 0, n_w >= 0, n >= 0 and sum(n) > 0")
        if self.V <= self.V_ref:
            raise NonphysicalSpec("cell volume does not exceed the rock volume")


@dataclass
class FlashResult:
    T: float
    P: float
    n_w_phase: float
    n_o: np.ndarray
    n_g: np.ndarray
    multipliers: np.ndarray
    kkt_residual_norm: float
    iterations: int
    mode: str = "UV"

    @property
    def y(self):
        head = [self.T, self.P] if self.mode == "UV" else [self.P]
        return np.concatenate([head, [self.n_w_phase], self.n_o, self.n_g])

    @property
    def z(self):
        return np.asarray(self.multipliers, float)


# --------------------------------------------------------------------------
# property evaluation for a batch of cells
# --------------------------------------------------------------------------

@dataclass
class CellProps:
    """Phase and rock properties for a batch of cells at one algebraic state."""

    T: np.ndarray
    P: np.ndarray
    nw: np.ndarray
    no: np.ndarray
    ng: np.ndarray
    water: thermo.PhaseProps
    oil: thermo.PhaseProps
    gas: thermo.PhaseProps
    rock: dict
    extras: dict = field(default_factory=dict)


def evaluate_cells(fluid, rock, V_ref, T, P, nw, no, ng, order=3):
    T = np.asarray(T, float)
    P = np.asarray(P, float)
    nw = np.asarray(nw, float)
    water = thermo.phase_props(fluid.aqueous, T, P, nw[..., None], "liquid", order=order)
    oil = thermo.phase_props(fluid.hydrocarbon, T, P, no, "liquid", order=order)
    gas = thermo.phase_props(fluid.hydrocarbon, T, P, ng, "vapor", order=order)
    rk = thermo.rock_properties(T, P, rock, V_ref)
    return CellProps(T, P, nw, np.asarray(no, float), np.asarray(ng, float), water, oil, gas, rk)


def _layout(nc, thermal):
    """Index arrays mapping each phase's (T, P, n) slots into y."""
    off = 0 if thermal else -1
    tp = [0, 1] if thermal else [None, 0]
    w = np.array(tp + [2 + off], dtype=object)
    o = np.array(tp + list(range(3 + off, 3 + off + nc)), dtype=object)
    g = np.array(tp + list(range(3 + off + nc, 3 + off + 2 * nc)), dtype=object)
    return w, o, g


def _embed(evals_and_cols, ny, with_hess):
    """Sum phase PhaseEvals into the y layout; columns set to None are dropped."""
    first = evals_and_cols[0][0]
    shape = np.shape(first.value)
    val = np.zeros(shape)
    grad = np.zeros(shape + (ny,))
    hess = np.zeros(shape + (ny, ny)) if with_hess else None
    for ev, cols in evals_and_cols:
        keep = np.array([c is not None for c in cols])
        src = np.nonzero(keep)[0]
        dst = np.array([c for c in cols if c is not None], dtype=int)
        val = val + ev.value
        grad[..., dst] += ev.grad[..., src]
        if with_hess:
            hess[..., dst[:, None], dst[None, :]] += ev.hess[..., src[:, None], src[None, :]]
    return thermo.PhaseEval(val, grad, hess)


def totals(props, names, thermal, with_hess=True):
    """Total (fluid + rock) PhaseEvals in the y layout for each named potential."""
    nc = props.no.shape[-1]
    ny = 3 + 2 * nc if thermal else 2 + 2 * nc
    w, o, g = _layout(nc, thermal)
    rock_cols = np.array([0, 1] if thermal else [None, 0], dtype=object)
    out = {}
    for name in names:
        parts = [(getattr(props.water, name), w), (getattr(props.oil, name), o),
                 (getattr(props.gas, name), g), (props.rock[name], rock_cols)]
        out[name] = _embed(parts, ny, with_hess)
    return out


# --------------------------------------------------------------------------
# KKT residuals
# --------------------------------------------------------------------------

@dataclass
class KKTEval:
    r: np.ndarray  # (B, m) scaled residual
    J: np.ndarray  # (B, m, m) d r / d (y, z), or None
    Jspec: np.ndarray  # (B, m, ns) d r / d spec, or None
    props: CellProps


def _split_y(y, nc, thermal):
    y = np.asarray(y, float)
    if thermal:
        T, P = y[..., 0], y[..., 1]
        rest = y[..., 2:]
    else:
        T, P = None, y[..., 0]
        rest = y[..., 1:]
    return T, P, rest[..., 0], rest[..., 1:1 + nc], rest[..., 1 + nc:1 + 2 * nc]


def kkt_uv(fluid, rock, V_ref, U, V, n_w, n, y, z, jac=True, props=None):
    """Scaled UV-flash KKT residual and Jacobians, batched on the leading axis.

    ``Jspec`` columns are ordered ``(U, V, n_w, n_1..n_m)``.
    """
    nc = fluid.nc
    y = np.atleast_2d(np.asarray(y, float))
    z = np.atleast_2d(np.asarray(z, float))
    U, V, n_w = (np.broadcast_to(np.asarray(a, float), y.shape[:-1]) for a in (U, V, n_w))
    n = np.broadcast_to(np.asarray(n, float), y.shape[:-1] + (nc,))
    T, P, nw, no, ng = _split_y(y, nc, True)
    if props is None:
        props = evaluate_cells(fluid, rock, V_ref, T, P, nw, no, ng, order=3 if jac else 2)
    tot = totals(props, ("S", "U", "V"), True, with_hess=jac)
    S_, U_, V_ = tot["S"], tot["U"], tot["V"]
    ny = 3 + 2 * nc
    nz = 3 + nc
    zU, zV, zw, zk = z[..., 0], z[..., 1], z[..., 2], z[..., 3:]

    stat = -S_.grad + zU[..., None] * U_.grad + zV[..., None] * V_.grad
    stat[..., 2] += zw
    stat[..., 3:3 + nc] += zk
    stat[..., 3 + nc:] += zk
    cons = np.concatenate([(U_.value - U)[..., None], (V_.value - V)[..., None],
                           (nw - n_w)[..., None], no + ng - n], axis=-1)
    raw = np.concatenate([stat, cons], axis=-1)

    Ntot = n_w + n.sum(-1)
    yscale = np.concatenate([np.full(Ntot.shape + (1,), T_SCALE), np.full(Ntot.shape + (1,), P_SCALE),
                             np.repeat(Ntot[..., None], 1 + 2 * nc, -1)], axis=-1)
    row = np.concatenate([yscale / (R * Ntot[..., None]),
                          (1.0 / (R * Ntot * T_SCALE))[..., None], (1.0 / V)[..., None],
                          np.repeat((1.0 / Ntot)[..., None], 1 + nc, -1)], axis=-1)
    r = row * raw
    if not jac:
        return KKTEval(r, None, None, props)

    m = ny + nz
    J = np.zeros(y.shape[:-1] + (m, m))
    J[..., :ny, :ny] = -S_.hess + zU[..., None, None] * U_.hess + zV[..., None, None] * V_.hess
    C = np.zeros(y.shape[:-1] + (nz, ny))
    C[..., 0, :] = U_.grad
    C[..., 1, :] = V_.grad
    C[..., 2, 2] = 1.0
    idx = np.arange(nc)
    C[..., 3 + idx, 3 + idx] = 1.0
    C[..., 3 + idx, 3 + nc + idx] = 1.0
    J[..., ny:, :ny] = C
    J[..., :ny, ny:] = np.swapaxes(C, -1, -2)
    J *= row[..., :, None]

    # d r / d spec, including the dependence of the row scales on N and V
    ns = 3 + nc
    Js = np.zeros(y.shape[:-1] + (m, ns))
    Js[..., ny, 0] = -row[..., ny]
    Js[..., ny + 1, 1] = -row[..., ny + 1]
    Js[..., ny + 2, 2] = -row[..., ny + 2]
    Js[..., ny + 3 + idx, 3 + idx] = -row[..., ny + 3 + idx]
    n_scaled = np.ones(m, bool)
    n_scaled[2:ny] = False  # mole stationarity rows scale as 1/R
    n_scaled[ny + 1] = False
    dN = -(r / Ntot[..., None]) * n_scaled
    Js[..., 2:] += dN[..., None]
    Js[..., ny + 1, 1] += -r[..., ny + 1] / V
    return KKTEval(r, J, Js, props)


def kkt_vt(fluid, rock, V_ref, T, V, n_w, n, y, z, jac=True, props=None):
    """Scaled VT-flash KKT residual and Jacobians; ``Jspec`` columns ``(V, n_w, n)``."""
    nc = fluid.nc
    y = np.atleast_2d(np.asarray(y, float))
    z = np.atleast_2d(np.asarray(z, float))
    T, V, n_w = (np.broadcast_to(np.asarray(a, float), y.shape[:-1]) for a in (T, V, n_w))
    n = np.broadcast_to(np.asarray(n, float), y.shape[:-1] + (nc,))
    _, P, nw, no, ng = _split_y(y, nc, False)
    if props is None:
        props = evaluate_cells(fluid, rock, V_ref, T, P, nw, no, ng, order=3 if jac else 2)
    tot = totals(props, ("A", "V"), False, with_hess=jac)
    A_, V_ = tot["A"], tot["V"]
    ny = 2 + 2 * nc
    nz = 2 + nc
    zV, zw, zk = z[..., 0], z[..., 1], z[..., 2:]

    stat = A_.grad + zV[..., None] * V_.grad
    stat[..., 1] += zw
    stat[..., 2:2 + nc] += zk
    stat[..., 2 + nc:] += zk
    cons = np.concatenate([(V_.value - V)[..., None], (nw - n_w)[..., None], no + ng - n], axis=-1)
    raw = np.concatenate([stat, cons], axis=-1)

    Ntot = n_w + n.sum(-1)
    RTN = R * T * Ntot
    yscale = np.concatenate([np.full(Ntot.shape + (1,), P_SCALE),
                             np.repeat(Ntot[..., None], 1 + 2 * nc, -1)], axis=-1)
    row = np.concatenate([yscale / RTN[..., None], (1.0 / V)[..., None],
                          np.repeat((1.0 / Ntot)[..., None], 1 + nc, -1)], axis=-1)
    r = row * raw
    if not jac:
        return KKTEval(r, None, None, props)

    m = ny + nz
    J = np.zeros(y.shape[:-1] + (m, m))
    J[..., :ny, :ny] = A_.hess + zV[..., None, None] * V_.hess
    C = np.zeros(y.shape[:-1] + (nz, ny))
    C[..., 0, :] = V_.grad
    C[..., 1, 1] = 1.0
    idx = np.arange(nc)
    C[..., 2 + idx, 2 + idx] = 1.0
    C[..., 2 + idx, 2 + nc + idx] = 1.0
    J[..., ny:, :ny] = C
    J[..., :ny, ny:] = np.swapaxes(C, -1, -2)
    J *= row[..., :, None]

    ns = 2 + nc
    Js = np.zeros(y.shape[:-1] + (m, ns))
    Js[..., ny, 0] = -row[..., ny]
    Js[..., ny + 1, 1] = -row[..., ny + 1]
    Js[..., ny + 2 + idx, 2 + idx] = -row[..., ny + 2 + idx]
    n_scaled = np.ones(m, bool)
    n_scaled[1:ny] = False  # mole stationarity rows scale as 1/(R T)
    n_scaled[ny] = False
    dN = -(r / Ntot[..., None]) * n_scaled
    Js[..., 1:] += dN[..., None]
    Js[..., ny, 0] += -r[..., ny] / V
    return KKTEval(r, J, Js, props)


def unknown_scales(mode, nc, Ntot, T=None):
    """Typical magnitudes of (y, z), used for column scaling in Newton."""
    Ntot = np.asarray(Ntot, float)
    one = np.ones(Ntot.shape + (1,))
    moles = np.repeat(Ntot[..., None], 1 + 2 * nc, -1)
    if mode == "UV":
        return np.concatenate([T_SCALE * one, P_SCALE * one, moles, one / T_SCALE,
                               (P_SCALE / T_SCALE) * one, np.full(Ntot.shape + (1 + nc,), R)], -1)
    T = np.asarray(T, float)
    return np.concatenate([P_SCALE * one, moles, P_SCALE * one,
                           np.repeat((R * T)[..., None], 1 + nc, -1)], -1)


def positive_mask(mode, nc):
    """Unknowns that must stay strictly positive (T, P and phase moles)."""
    ny = (3 if mode == "UV" else 2) + 2 * nc
    nz = (3 if mode == "UV" else 2) + nc
    return np.r_[np.ones(ny, bool), np.zeros(nz, bool)]


# --------------------------------------------------------------------------
# initial guesses
# --------------------------------------------------------------------------

def wilson_k(eos, T, P):
    T = np.asarray(T, float)[..., None]
    P = np.asarray(P, float)[..., None]
    return eos.Pc / P * np.exp(5.373 * (1.0 + eos.omega) * (1.0 - eos.Tc / T))


def rachford_rice(zf, K, lo=1.0e-3, hi=1.0 - 1.0e-3, iters=60):
    """Vapor fraction solving the Rachford-Rice equation, clipped to [lo, hi]."""
    zf = np.asarray(zf, float)
    K = np.asarray(K, float)
    a = np.zeros(zf.shape[:-1])
    b = np.ones(zf.shape[:-1])

    def rr(beta):
        return np.sum(zf * (K - 1.0) / (1.0 + beta[..., None] * (K - 1.0)), -1)

    # bisection on the bracket where the denominators stay positive
    kmax = K.max(-1)
    kmin = K.min(-1)
    with np.errstate(divide="ignore"):
        a = np.where(kmax > 1.0, np.maximum(0.0, 1.0 / (1.0 - kmax)), 0.0)
        b = np.where(kmin < 1.0, np.minimum(1.0, 1.0 / (1.0 - kmin)), 1.0)
    a = np.clip(a, 0.0, 1.0)
    b = np.clip(b, 0.0, 1.0)
    fa = rr(a + 1e-300)
    for _ in range(iters):
        mid = 0.5 * (a + b)
        fm = rr(mid)
        left = np.sign(fm) == np.sign(fa)
        a = np.where(left, mid, a)
        fa = np.where(left, fm, fa)
        b = np.where(left, b, mid)
    beta = 0.5 * (a + b)
    return np.clip(beta, lo, hi)


def _split(zf, N, K, beta):
    x = zf / (1.0 + beta[..., None] * (K - 1.0))
    x = x / x.sum(-1, keepdims=True)
    yv = K * x
    yv = yv / yv.sum(-1, keepdims=True)
    # distribute moles so the component balance holds exactly
    ng = beta[..., None] * N[..., None] * yv
    ng = np.minimum(ng, zf * N[..., None] * (1.0 - 1.0e-6))
    no = zf * N[..., None] - ng
    return no, ng


def pt_flash(eos, T, P, zf, iters=200, tol=1.0e-12):
    """Two-phase PT flash by successive substitution from Wilson K-values.

    Returns ``(beta, x, y, converged)``; beta is clipped inside (0, 1).
    """
    T = np.asarray(T, float)
    P = np.asarray(P, float)
    zf = np.asarray(zf, float)
    zf = zf / zf.sum(-1, keepdims=True)
    K = wilson_k(eos, T, P) * np.ones_like(zf)
    lnK = np.log(K)
    beta = rachford_rice(zf, K, 1e-10, 1 - 1e-10)
    err = np.inf
    for _ in range(iters):
        K = np.exp(lnK)
        beta = rachford_rice(zf, K, 1e-10, 1 - 1e-10)
        x = zf / (1.0 + beta[..., None] * (K - 1.0))
        x /= x.sum(-1, keepdims=True)
        yv = K * x
        yv /= yv.sum(-1, keepdims=True)
        mu_l = thermo.gibbs_jet(eos, T, P, x, "liquid", order=2).grad[..., 2:]
        mu_v = thermo.gibbs_jet(eos, T, P, yv, "vapor", order=2).grad[..., 2:]
        d = (mu_l - mu_v) / (R * np.asarray(T)[..., None])
        lnK = lnK + d
        err = np.max(np.abs(d))
        if err < tol:
            break
    return beta, x, yv, err < 1e-8


class _EquilibriumState:
    """PT-flash state carried across the 1-D initialization solves."""

    def __init__(self, eos, zf, T, P):
        self.eos = eos
        self.zf = zf
        self.lnK = np.log(wilson_k(eos, T, P) * np.ones_like(zf))

    def split(self, T, P, N, sweeps=4):
        # restart from Wilson values if substitution drifts toward x = y
        trivial = np.max(np.abs(self.lnK), -1) < 0.1
        if np.any(trivial):
            self.lnK[trivial] = np.log(wilson_k(self.eos, T, P)[trivial]
                                       * np.ones_like(self.zf[trivial]))
        for _ in range(sweeps):
            K = np.exp(self.lnK)
            beta = rachford_rice(self.zf, K)
            no, ng = _split(self.zf, N, K, beta)
            x = no / no.sum(-1, keepdims=True)
            yv = ng / ng.sum(-1, keepdims=True)
            mu_l = thermo.gibbs_jet(self.eos, T, P, x, "liquid", order=2).grad[..., 2:]
            mu_v = thermo.gibbs_jet(self.eos, T, P, yv, "vapor", order=2).grad[..., 2:]
            self.lnK = np.log(yv / x) + (mu_l - mu_v) / (R * T[..., None])
        K = np.exp(self.lnK)
        return _split(self.zf, N, K, rachford_rice(self.zf, K))


def _bracketed(f, x0, lo, hi, sign_lo, iters=30, rtol=1e-10):
    """Vectorized safeguarded Newton for a monotone scalar map.

    ``f(x)`` returns ``(value, slope)`` with the root where value = 0 and
    ``sign_lo`` is the known sign of the value at ``lo`` (the ends are not
    evaluated, since that would disturb the warm-started phase split). The
    step falls back to bisection whenever Newton leaves the bracket.
    """
    x = np.array(x0, float)
    lo = np.broadcast_to(np.asarray(lo, float), x.shape).copy()
    hi = np.broadcast_to(np.asarray(hi, float), x.shape).copy()
    flo = np.full(x.shape, float(sign_lo))
    for _ in range(iters):
        fx, dfx = f(x)
        same = np.sign(fx) == np.sign(flo)
        lo = np.where(same, x, lo)
        flo = np.where(same, fx, flo)
        hi = np.where(same, hi, x)
        with np.errstate(divide="ignore", invalid="ignore"):
            xn = x - fx / dfx
        bad = ~np.isfinite(xn) | (xn <= np.minimum(lo, hi)) | (xn >= np.maximum(lo, hi))
        xn = np.where(bad, 0.5 * (lo + hi), xn)
        if np.all(np.abs(xn - x) <= rtol * np.abs(x)):
            return xn
        x = xn
    return x


# the guess only has to land in Newton's basin; the KKT iteration does the rest
GUESS_RTOL = 1.0e-4


def _props_at(fluid, rock, V_ref, T, P, nw, eq, Nh):
    no, ng = eq.split(T, P, Nh)
    return evaluate_cells(fluid, rock, V_ref, T, P, nw, no, ng, order=2), no, ng


def _pressure_from_volume(fluid, rock, V_ref, T, V, nw, eq, Nh, P0):
    def f(lnP):
        P = np.exp(lnP)
        pr, _, _ = _props_at(fluid, rock, V_ref, T, P, nw, eq, Nh)
        Vt = pr.water.V.value + pr.oil.V.value + pr.gas.V.value + pr.rock["V"].value
        dV = (pr.water.V.grad[..., 1] + pr.oil.V.grad[..., 1] + pr.gas.V.grad[..., 1]
              + pr.rock["V"].grad[..., 1]) * P
        return (Vt - V) / V, dV / V
    return np.exp(_bracketed(f, np.log(P0), np.log(2e4), np.log(1e9), 1.0, rtol=GUESS_RTOL))


def _temperature_from_energy(fluid, rock, V_ref, U, P, nw, eq, Nh, T0):
    scale = np.abs(U) + rock.rho_rock * V_ref * rock.cp_rock * 100.0

    def f(T):
        pr, _, _ = _props_at(fluid, rock, V_ref, T, P, nw, eq, Nh)
        Ut = pr.water.U.value + pr.oil.U.value + pr.gas.U.value + pr.rock["U"].value
        dU = (pr.water.U.grad[..., 0] + pr.oil.U.grad[..., 0] + pr.gas.U.grad[..., 0]
              + pr.rock["U"].grad[..., 0])
        return (Ut - U) / scale, dU / scale
    return _bracketed(f, T0, 200.0, 900.0, -1.0, rtol=GUESS_RTOL)


def _multipliers(mode, props):
    T = props.T
    P = props.P
    mu_w = props.water.mu[..., 0]
    mu = 0.5 * (props.oil.mu + props.gas.mu)
    if mode == "UV":
        return np.concatenate([(1.0 / T)[..., None], (P / T)[..., None], (-mu_w / T)[..., None],
                               -mu / T[..., None]], -1)
    return np.concatenate([P[..., None], -mu_w[..., None], -mu], -1)


def initial_guess(fluid, spec, mode=None, warm=None, refine=1):
    """Starting point ``(y0, z0)`` for :func:`solve_uv` / :func:`solve_vt`.

    A warm start (a previous :class:`FlashResult`) is returned unchanged.
    Otherwise moles are split with Wilson K-values and Rachford-Rice at a
    heuristic (T0, P0); the split is then updated by successive
    substitution while P is matched to the volume and (UV) T to the energy
    by bracketed 1-D solves.
    """
    if mode is None:
        mode = "UV" if isinstance(spec, FlashSpecUV) else "VT"
    if warm is not None:
        return warm.y, warm.z
    b = _batch_guess(fluid, mode, spec.rock, np.atleast_1d(spec.V_ref),
                     np.atleast_1d(spec.U if mode == "UV" else spec.T),
                     np.atleast_1d(spec.V), np.atleast_1d(spec.n_w), np.atleast_2d(spec.n), refine)
    return b[0][0], b[1][0]


def _batch_guess(fluid, mode, rock, V_ref, UorT, V, n_w, n, refine=1):
    eos = fluid.hydrocarbon
    Nh = n.sum(-1)
    zf = n / Nh[..., None]
    if np.any(V - V_ref <= 0):
        raise NonphysicalSpec("cell volume does not exceed the rock volume")
    P = np.full(Nh.shape, 5.0e6)
    if mode == "UV":
        # constant-cp estimate dominated by the rock, refined below
        C = rock.rho_rock * V_ref * rock.cp_rock + (n_w + Nh) * 10.0 * R
        T = np.clip(thermo.T_REF + UorT / C, 250.0, 700.0)
    else:
        T = np.asarray(UorT, float)
    eq = _EquilibriumState(eos, zf, T, P)
    for _ in range(refine if mode == "UV" else 1):
        P = _pressure_from_volume(fluid, rock, V_ref, T, V, n_w, eq, Nh, P)
        if mode == "UV":
            T = _temperature_from_energy(fluid, rock, V_ref, UorT, P, n_w, eq, Nh, T)
    P = _pressure_from_volume(fluid, rock, V_ref, T, V, n_w, eq, Nh, P)
    props, no, ng = _props_at(fluid, rock, V_ref, T, P, n_w, eq, Nh)
    z = _multipliers(mode, props)
    if mode == "UV":
        y = np.concatenate([T[..., None], P[..., None], n_w[..., None], no, ng], -1)
    else:
        y = np.concatenate([P[..., None], n_w[..., None], no, ng], -1)
    return y, z


# --------------------------------------------------------------------------
# Newton
# --------------------------------------------------------------------------

def max_step(w, dw, positive, frac=0.99):
    """Largest alpha in (0, 1] keeping positive unknowns above (1 - frac) of their value."""
    neg = positive & (dw < 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        lim = np.where(neg, -frac * w / dw, np.inf)
    return np.minimum(1.0, lim.min(-1))


def _newton_full(resid, w0, pos, cs, floor, tol, max_iter):
    """Newton on a batch where every residual call evaluates the whole batch."""
    w = np.array(w0, float)
    r, J = resid(w, True)
    norm = np.max(np.abs(r), -1)
    B = w.shape[0]
    iters = np.zeros(B, int)
    trace = _trace_writer()
    for it in range(max_iter):
        act = norm >= tol
        if not np.any(act):
            break
        Js = J * cs[:, None, :]
        dw = np.zeros_like(w)
        try:
            dw[act] = -np.linalg.solve(Js[act], r[act][..., None])[..., 0] * cs[act]
        except np.linalg.LinAlgError:
            for k in np.nonzero(act)[0]:
                dw[k] = -np.linalg.lstsq(Js[k], r[k], rcond=None)[0] * cs[k]
        alpha = np.where(act, max_step(w, dw, pos), 0.0)
        f0 = np.sum(r ** 2, -1)
        accepted = ~act
        for _ in range(31):
            trial = w + alpha[:, None] * dw
            trial = np.where(pos, np.maximum(trial, floor), trial)
            try:
                rt, _ = resid(trial, False)
                ft = np.sum(rt ** 2, -1)
                good = np.isfinite(ft) & (ft <= (1.0 - 1e-4 * alpha) * f0)
            except (thermo.NoPhysicalRoot, FloatingPointError):
                good = np.zeros(B, bool)
            accepted = accepted | good
            if np.all(accepted):
                break
            alpha = np.where(accepted, alpha, 0.5 * alpha)
        w = np.where(pos, np.maximum(w + alpha[:, None] * dw, floor), w + alpha[:, None] * dw)
        iters += act
        r, J = resid(w, True)
        norm = np.max(np.abs(r), -1)
        if trace is not None:
            trace(it, w, norm)
    return w, norm, iters, norm < tol


def _trace_writer():
    """Optional CSV dump of flash iterates, enabled by THERMOFLOOD_FLASH_TRACE=path."""
    path = os.environ.get("THERMOFLOOD_FLASH_TRACE")
    if not path:
        return None

    def write(it, w, norm):
        with open(path, "a", newline="") as fh:
            wr = csv.writer(fh)
            for k in range(w.shape[0]):
                wr.writerow([it, k, norm[k], *w[k]])
    return write


def _result(mode, nc, w, norm, iters):
    ny = (3 if mode == "UV" else 2) + 2 * nc
    y, z = w[:ny], w[ny:]
    if mode == "UV":
        T, P, rest = y[0], y[1], y[2:]
    else:
        T, P, rest = np.nan, y[0], y[1:]
    return FlashResult(float(T), float(P), float(rest[0]), rest[1:1 + nc].copy(),
                       rest[1 + nc:].copy(), z.copy(), float(norm), int(iters), mode)


def solve_uv(fluid, spec, guess=None, tol=NEWTON_TOL, max_iter=MAX_ITER):
    """Entropy-maximizing phase split at specified (U, V, n_w, n)."""
    if guess is None:
        guess = initial_guess(fluid, spec, "UV")
    elif isinstance(guess, FlashResult):
        guess = (guess.y, guess.z)
    w0 = np.concatenate([guess[0], guess[1]])[None]
    w, norm, iters, conv = _newton_full(
        lambda w, jac: _kkt_w(fluid, "UV", spec, w, jac), w0, positive_mask("UV", fluid.nc),
        unknown_scales("UV", fluid.nc, np.atleast_1d(spec.n_w + spec.n.sum())),
        _floor("UV", fluid.nc, spec), tol, max_iter)
    if not conv[0]:
        raise MaxIterations(f"UV flash did not converge in {max_iter} iterations "
                            f"(residual {norm[0]:.3e})")
    res = _result("UV", fluid.nc, w[0], norm[0], iters[0])
    _log_condition(fluid, "UV", spec, w)
    res.T = float(w[0, 0])
    return res


def solve_vt(fluid, spec, guess=None, tol=NEWTON_TOL, max_iter=MAX_ITER):
    """Helmholtz-minimizing phase split at specified (T, V, n_w, n)."""
    if guess is None:
        guess = initial_guess(fluid, spec, "VT")
    elif isinstance(guess, FlashResult):
        guess = (guess.y if guess.mode == "VT" else guess.y[1:],
                 guess.z if guess.mode == "VT" else _uv_to_vt_z(guess))
    w0 = np.concatenate([guess[0], guess[1]])[None]
    w, norm, iters, conv = _newton_full(
        lambda w, jac: _kkt_w(fluid, "VT", spec, w, jac), w0, positive_mask("VT", fluid.nc),
        unknown_scales("VT", fluid.nc, np.atleast_1d(spec.n_w + spec.n.sum()), np.atleast_1d(spec.T)),
        _floor("VT", fluid.nc, spec), tol, max_iter)
    if not conv[0]:
        raise MaxIterations(f"VT flash did not converge in {max_iter} iterations "
                            f"(residual {norm[0]:.3e})")
    res = _result("VT", fluid.nc, w[0], norm[0], iters[0])
    res.T = float(spec.T)
    _log_condition(fluid, "VT", spec, w)
    return res


def _uv_to_vt_z(res):
    z = res.z
    T = res.T
    return np.concatenate([[z[1] * T], z[2:] * T])


def _floor(mode, nc, spec):
    ny = (3 if mode == "UV" else 2) + 2 * nc
    m = ny + (3 if mode == "UV" else 2) + nc
    f = np.zeros((1, m))
    f[0, (2 if mode == "UV" else 1):ny] = FLOOR_REL * (spec.n_w + spec.n.sum())
    return f


def _kkt_w(fluid, mode, spec, w, jac):
    nc = fluid.nc
    ny = (3 if mode == "UV" else 2) + 2 * nc
    y, z = w[..., :ny], w[..., ny:]
    if mode == "UV":
        e = kkt_uv(fluid, spec.rock, spec.V_ref, spec.U, spec.V, spec.n_w, spec.n, y, z, jac=jac)
    else:
        e = kkt_vt(fluid, spec.rock, spec.V_ref, spec.T, spec.V, spec.n_w, spec.n, y, z, jac=jac)
    return e.r, e.J


def _log_condition(fluid, mode, spec, w):
    if not log.isEnabledFor(logging.DEBUG):
        return
    _, J = _kkt_w(fluid, mode, spec, w, True)
    log.debug("%s flash KKT condition number %.3e", mode, np.linalg.cond(J[0]))


def solve_batch(fluid, mode, rock, V_ref, UorT, V, n_w, n, w0=None, tol=NEWTON_TOL,
                max_iter=MAX_ITER):
    """Flash many independent specifications at once; returns (y, z, norm, converged)."""
    V_ref = np.atleast_1d(np.asarray(V_ref, float))
    UorT = np.atleast_1d(np.asarray(UorT, float))
    V = np.atleast_1d(np.asarray(V, float))
    n_w = np.atleast_1d(np.asarray(n_w, float))
    n = np.atleast_2d(np.asarray(n, float))
    B = n.shape[0]
    V_ref, UorT, V, n_w = (np.broadcast_to(a, (B,)).copy() for a in (V_ref, UorT, V, n_w))
    if w0 is None:
        y0, z0 = _batch_guess(fluid, mode, rock, V_ref, UorT, V, n_w, n)
        w0 = np.concatenate([y0, z0], -1)
    nc = fluid.nc
    ny = (3 if mode == "UV" else 2) + 2 * nc
    Ntot = n_w + n.sum(-1)
    cs = unknown_scales(mode, nc, Ntot, None if mode == "UV" else UorT)
    floor = np.zeros_like(w0)
    floor[:, (2 if mode == "UV" else 1):ny] = (FLOOR_REL * Ntot)[:, None]

    def resid(w, jac):
        y, z = w[..., :ny], w[..., ny:]
        fn = kkt_uv if mode == "UV" else kkt_vt
        e = fn(fluid, rock, V_ref, UorT, V, n_w, n, y, z, jac=jac)
        return e.r, e.J

    w, norm, iters, conv = _newton_full(resid, w0, positive_mask(mode, nc), cs, floor, tol, max_iter)
    return w[:, :ny], w[:, ny:], norm, conv


def chemical_potential_gap(fluid, res):
    """max_k |mu_k^o - mu_k^g| at a flash result (J/mol)."""
    eos = fluid.hydrocarbon
    mo = thermo.gibbs_jet(eos, res.T, res.P, res.n_o, "liquid", order=2).grad[..., 2:]
    mg = thermo.gibbs_jet(eos, res.T, res.P, res.n_g, "vapor", order=2).grad[..., 2:]
    return float(np.max(np.abs(mo - mg)))
