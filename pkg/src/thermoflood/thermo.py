"""Peng-Robinson property stack with analytic derivatives in (T, P, n).

Every phase function returns a :class:`PhaseEval` holding the value, the
gradient and the Hessian with respect to ``(T, P, n_1..n_m)``. All inputs
may carry leading batch dimensions; outputs keep them.

Internally the Helmholtz energy ``A(T, V, n)`` of the Peng-Robinson fluid
is explicit, so its derivatives up to third order are assembled in closed
form (a small forward jet for the scalar kernel plus a chain rule through
the mixing aggregates). The Gibbs energy ``G(T, P, n)`` follows from the
Legendre transform ``G = A + P V`` at the selected volume root; its third
derivatives are what the Hessians of ``H``, ``S`` and ``V`` need.
"""

import json
from dataclasses import dataclass, field
from importlib import resources
from functools import cached_property

import numpy as np

from .kernels import cubic_root

R = 8.314462618  # J/(mol K)
T_REF = 298.15  # K
P_REF = 101325.0  # Pa

_SQRT2 = np.sqrt(2.0)
_D1 = 1.0 + _SQRT2
_D2 = 1.0 - _SQRT2
_OMEGA_A = 0.45723552892138
_OMEGA_B = 0.07779607390389


class NoPhysicalRoot(ValueError):
    """No real volume root above the covolume exists for the query."""


# --------------------------------------------------------------------------
# data
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ComponentSpec:
    name: str
    Tc: float  # K
    Pc: float  # Pa
    omega: float
    Mw: float  # kg/mol
    Vc: float  # m3/mol
    cp_ig_coeffs: tuple = (29.0, 0.0, 0.0, 0.0)  # J/(mol K), powers of T
    h_ref: float = 0.0
    s_ref: float = 0.0

    def __post_init__(self):
        for name in ("Tc", "Pc", "Mw", "Vc"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{self.name}: {name} must be positive")
        object.__setattr__(self, "cp_ig_coeffs",
                           tuple(float(c) for c in self.cp_ig_coeffs) + (0.0,) * (4 - len(self.cp_ig_coeffs)))


class PengRobinson:
    """Parameter cache for one Peng-Robinson fluid (a mixture or a pure phase)."""

    def __init__(self, components, kij=None):
        self.components = tuple(components)
        nc = len(self.components)
        if nc < 1:
            raise ValueError("need at least one component")
        c = self.components
        self.nc = nc
        self.names = [x.name for x in c]
        self.Tc = np.array([x.Tc for x in c])
        self.Pc = np.array([x.Pc for x in c])
        self.omega = np.array([x.omega for x in c])
        self.Mw = np.array([x.Mw for x in c])
        self.Vc = np.array([x.Vc for x in c])
        self.cp = np.array([x.cp_ig_coeffs for x in c])
        self.h_ref = np.array([x.h_ref for x in c])
        self.s_ref = np.array([x.s_ref for x in c])
        self.kappa = 0.37464 + 1.54226 * self.omega - 0.26992 * self.omega ** 2
        self.ac = _OMEGA_A * (R * self.Tc) ** 2 / self.Pc
        self.sqrt_ac = np.sqrt(self.ac)
        self.b = _OMEGA_B * R * self.Tc / self.Pc
        kij = np.zeros((nc, nc)) if kij is None else np.asarray(kij, float)
        if kij.shape != (nc, nc) or not np.allclose(kij, kij.T) or np.any(np.diag(kij) != 0):
            raise ValueError("kij must be symmetric with a zero diagonal")
        self.one_m_kij = 1.0 - kij

    # -- temperature functions ------------------------------------------------

    def _s_funcs(self, T):
        T = T[..., None]
        root = np.sqrt(T * self.Tc)
        kq = self.sqrt_ac * self.kappa
        s0 = self.sqrt_ac * (1.0 + self.kappa * (1.0 - np.sqrt(T / self.Tc)))
        s1 = -kq / (2.0 * root)
        s2 = kq / (4.0 * T * root)
        s3 = -3.0 * kq / (8.0 * T * T * root)
        return s0, s1, s2, s3

    def attraction(self, T):
        """a_ij(T) and its first three temperature derivatives."""
        s0, s1, s2, s3 = self._s_funcs(T)
        o = lambda p, q: p[..., :, None] * q[..., None, :]  # noqa: E731
        k = self.one_m_kij
        a0 = k * o(s0, s0)
        a1 = k * (o(s1, s0) + o(s0, s1))
        a2 = k * (o(s2, s0) + 2.0 * o(s1, s1) + o(s0, s2))
        a3 = k * (o(s3, s0) + 3.0 * o(s2, s1) + 3.0 * o(s1, s2) + o(s0, s3))
        return a0, a1, a2, a3

    def ideal_g(self, T):
        """Standard-state molar Gibbs energy g°(T) and derivatives, per component."""
        T = np.asarray(T, float)[..., None]
        c0, c1, c2, c3 = self.cp.T
        Tr = T_REF
        cp = c0 + T * (c1 + T * (c2 + T * c3))
        dcp = c1 + T * (2.0 * c2 + 3.0 * c3 * T)
        h = (self.h_ref + c0 * (T - Tr) + c1 / 2 * (T ** 2 - Tr ** 2)
             + c2 / 3 * (T ** 3 - Tr ** 3) + c3 / 4 * (T ** 4 - Tr ** 4))
        s = (self.s_ref + c0 * np.log(T / Tr) + c1 * (T - Tr)
             + c2 / 2 * (T ** 2 - Tr ** 2) + c3 / 3 * (T ** 3 - Tr ** 3))
        return h - T * s, -s, -cp / T, -dcp / T + cp / T ** 2


@dataclass
class MixtureSpec:
    components: list
    water: ComponentSpec
    kij: np.ndarray = None

    def __post_init__(self):
        nc = len(self.components)
        if nc < 1:
            raise ValueError("mixture needs at least one component")
        if self.kij is None:
            self.kij = np.zeros((nc, nc))
        self.kij = np.asarray(self.kij, float)

    @property
    def nc(self):
        return len(self.components)

    @cached_property
    def hydrocarbon(self):
        return PengRobinson(self.components, self.kij)

    @cached_property
    def aqueous(self):
        return PengRobinson([self.water])


@dataclass(frozen=True)
class RockSpec:
    phi: float = 0.25
    cr: float = 0.0  # 1/Pa
    cp_rock: float = 920.0  # J/(kg K)
    rho_rock: float = 2650.0  # kg/m3
    kT_rock: float = 2.5  # W/(m K)

    def __post_init__(self):
        if not 0.0 < self.phi < 1.0:
            raise ValueError("porosity must lie in (0, 1)")
        if self.cp_rock <= 0 or self.kT_rock < 0 or self.cr < 0:
            raise ValueError("invalid rock parameters")


@dataclass
class PhaseEval:
    """Value, gradient and Hessian w.r.t. (T, P, n...) of one function."""

    value: np.ndarray
    grad: np.ndarray
    hess: np.ndarray = field(default=None)

    def __add__(self, other):
        return PhaseEval(self.value + other.value, self.grad + other.grad,
                         None if self.hess is None else self.hess + other.hess)

    def __sub__(self, other):
        return PhaseEval(self.value - other.value, self.grad - other.grad,
                         None if self.hess is None else self.hess - other.hess)

    def scaled(self, c):
        return PhaseEval(c * self.value, c * self.grad, None if self.hess is None else c * self.hess)


# --------------------------------------------------------------------------
# third-order forward jets over a handful of scalar variables
# --------------------------------------------------------------------------

class _Jet:
    __slots__ = ("v", "g", "h", "t")

    def __init__(self, v, g, h, t):
        self.v, self.g, self.h, self.t = v, g, h, t

    @classmethod
    def var(cls, value, i, k):
        value = np.asarray(value, float)
        bshape = value.shape
        g = np.zeros(bshape + (k,))
        g[..., i] = 1.0
        return cls(value, g, np.zeros(bshape + (k, k)), np.zeros(bshape + (k, k, k)))

    def __add__(self, o):
        if isinstance(o, _Jet):
            return _Jet(self.v + o.v, self.g + o.g, self.h + o.h, self.t + o.t)
        return _Jet(self.v + o, self.g, self.h, self.t)

    __radd__ = __add__

    def __neg__(self):
        return _Jet(-self.v, -self.g, -self.h, -self.t)

    def __sub__(self, o):
        return self + (-o)

    def __rsub__(self, o):
        return (-self) + o

    def __mul__(self, o):
        if not isinstance(o, _Jet):
            return _Jet(self.v * o, self.g * o, self.h * o, self.t * o)
        a, b = self, o
        v = a.v * b.v
        av, bv = a.v[..., None], b.v[..., None]
        g = a.g * bv + b.g * av
        ag, bg = a.g, b.g
        outer = ag[..., :, None] * bg[..., None, :]
        h = a.h * bv[..., None] + b.h * av[..., None] + outer + np.swapaxes(outer, -1, -2)
        t = (a.t * bv[..., None, None] + b.t * av[..., None, None]
             + _sym_mv(a.h, bg) + _sym_mv(b.h, ag))
        return _Jet(v, g, h, t)

    __rmul__ = __mul__

    def apply(self, f0, f1, f2, f3):
        g1 = self.g
        gg = g1[..., :, None] * g1[..., None, :]
        ggg = gg[..., None] * g1[..., None, None, :]
        e1, e2, e3 = f1[..., None], f2[..., None], f3[..., None]
        return _Jet(f0, e1 * g1, e2[..., None] * gg + e1[..., None] * self.h,
                    e3[..., None, None] * ggg + e2[..., None, None] * _sym_mv(self.h, g1)
                    + e1[..., None, None] * self.t)

    def log(self):
        x = self.v
        return self.apply(np.log(x), 1.0 / x, -1.0 / x ** 2, 2.0 / x ** 3)

    def recip(self):
        x = self.v
        return self.apply(1.0 / x, -1.0 / x ** 2, 2.0 / x ** 3, -6.0 / x ** 4)


def _sym_mv(M, a):
    """(M_ij a_l + M_il a_j + M_jl a_i) for symmetric M."""
    return (M[..., :, :, None] * a[..., None, None, :]
            + M[..., :, None, :] * a[..., None, :, None]
            + M[..., None, :, :] * a[..., :, None, None])


def _sym_baa(b, a):
    """(b_i a_j a_l + a_i b_j a_l + a_i a_j b_l)."""
    ai, aj, al = a[..., :, None, None], a[..., None, :, None], a[..., None, None, :]
    bi, bj, bl = b[..., :, None, None], b[..., None, :, None], b[..., None, None, :]
    return bi * aj * al + ai * bj * al + ai * aj * bl


# --------------------------------------------------------------------------
# cubic
# --------------------------------------------------------------------------

def _as_batch(T, P, n):
    T = np.asarray(T, float)
    P = np.asarray(P, float)
    n = np.asarray(n, float)
    if n.ndim == 0:
        n = n[None]
    shape = np.broadcast_shapes(T.shape, P.shape, n.shape[:-1])
    return (np.broadcast_to(T, shape), np.broadcast_to(P, shape),
            np.broadcast_to(n, shape + n.shape[-1:]))


def _is_liquid(root):
    if isinstance(root, str):
        if root not in ("liquid", "vapor"):
            raise ValueError(f"unknown root hint {root!r}")
        return root == "liquid"
    return np.asarray(root, bool)


def _compressibility(eos, T, P, x, root):
    """Selected compressibility factor plus mixture a, b per mole."""
    if np.any(T <= 0) or np.any(P <= 0):
        raise NoPhysicalRoot("temperature and pressure must be positive")
    a0 = eos.attraction(T)[0]
    am = np.einsum("...i,...ij,...j->...", x, a0, x)
    bm = x @ eos.b
    A = am * P / (R * T) ** 2
    B = bm * P / (R * T)
    z, ok = cubic_root(-(1.0 - B), A - 3.0 * B * B - 2.0 * B,
                       -(A * B - B * B - B ** 3), B, _is_liquid(root))
    if not np.all(ok):
        raise NoPhysicalRoot("no volume root above the covolume")
    return z, am, bm


def pr_molar_volume(eos, T, P, x, root="vapor"):
    """Molar volume (m3/mol) on the requested Peng-Robinson root."""
    T, P, x = _as_batch(T, P, x)
    if np.any(x < 0):
        raise ValueError("mole fractions must be nonnegative")
    x = x / x.sum(-1, keepdims=True)
    z, _, _ = _compressibility(eos, T, P, x, root)
    return z * R * T / P


def pr_pressure(eos, T, v, x):
    """Peng-Robinson pressure at molar volume ``v``."""
    T, v, x = _as_batch(T, v, x)
    a0 = eos.attraction(T)[0]
    am = np.einsum("...i,...ij,...j->...", x, a0, x)
    bm = x @ eos.b
    return R * T / (v - bm) - am / (v * (v + bm) + bm * (v - bm))


# --------------------------------------------------------------------------
# Gibbs jet
# --------------------------------------------------------------------------

@dataclass
class GibbsJet:
    """Gibbs energy and its derivatives in (T, P, n...) at one root."""

    value: np.ndarray
    grad: np.ndarray
    hess: np.ndarray
    third: np.ndarray  # None when only second order was requested
    V: np.ndarray

    @property
    def dim(self):
        return self.grad.shape[-1]


def gibbs_jet(eos, T, P, n, root="vapor", order=3):
    """G(T, P, n) with derivatives up to ``order`` (2 or 3)."""
    T, P, n = _as_batch(T, P, n)
    if n.shape[-1] != eos.nc:
        raise ValueError(f"expected {eos.nc} mole numbers, got {n.shape[-1]}")
    if np.any(n < 0):
        raise ValueError("mole numbers must be nonnegative")
    N = n.sum(-1)
    if np.any(N <= 0):
        raise ValueError("phase must contain a positive amount")
    x = n / N[..., None]
    z, am, bm = _compressibility(eos, T, P, x, root)
    V = z * R * T / P * N
    Bx = bm * N
    D = am * N * N

    # scalar kernel f(T, V, N, Bx, D)
    k = 5
    jT = _Jet.var(T, 0, k)
    jV = _Jet.var(V, 1, k)
    jN = _Jet.var(N, 2, k)
    jB = _Jet.var(Bx, 3, k)
    jD = _Jet.var(D, 4, k)
    const = np.log(R / P_REF) - 1.0
    f = (R * jN * jT) * (jT.log() + const - (jV - jB).log())
    lr = (jV + _D1 * jB).log() - (jV + _D2 * jB).log()
    f = f - jD * lr * (jB * (2.0 * _SQRT2)).recip()

    # chain rule to w = (T, n_1..n_m, V)
    m = eos.nc
    d = m + 2
    bshape = T.shape
    a0, a1, a2, a3 = eos.attraction(T)
    an0 = np.einsum("...ij,...j->...i", a0, n)
    an1 = np.einsum("...ij,...j->...i", a1, n)
    an2 = np.einsum("...ij,...j->...i", a2, n)
    J = np.zeros(bshape + (k, d))
    J[..., 0, 0] = 1.0
    J[..., 1, d - 1] = 1.0
    J[..., 2, 1:m + 1] = 1.0
    J[..., 3, 1:m + 1] = eos.b
    J[..., 4, 0] = np.einsum("...i,...i->...", n, an1)
    J[..., 4, 1:m + 1] = 2.0 * an0
    Dh = np.zeros(bshape + (d, d))
    Dh[..., 0, 0] = np.einsum("...i,...i->...", n, an2)
    Dh[..., 0, 1:m + 1] = 2.0 * an1
    Dh[..., 1:m + 1, 0] = 2.0 * an1
    Dh[..., 1:m + 1, 1:m + 1] = 2.0 * a0

    fa = f.g
    A1 = np.einsum("...a,...ai->...i", fa, J)
    A2 = np.einsum("...ab,...ai,...bj->...ij", f.h, J, J) + fa[..., 4, None, None] * Dh

    # ideal part in w
    g0, g1, g2, g3 = eos.ideal_g(T)
    lnn = np.log(n)
    RT = R * T
    Aval = f.v + np.einsum("...i,...i->...", n, g0) + RT * np.einsum("...i,...i->...", n, lnn)
    A1[..., 0] += np.einsum("...i,...i->...", n, g1) + R * np.einsum("...i,...i->...", n, lnn)
    A1[..., 1:m + 1] += g0 + RT[..., None] * (lnn + 1.0)
    A2[..., 0, 0] += np.einsum("...i,...i->...", n, g2)
    cross = g1 + R * (lnn + 1.0)
    A2[..., 0, 1:m + 1] += cross
    A2[..., 1:m + 1, 0] += cross
    idx = np.arange(1, m + 1)
    A2[..., idx, idx] += RT[..., None] / n

    A3 = None
    if order >= 3:
        Dt = np.zeros(bshape + (d, d, d))
        Dt[..., 0, 0, 0] = np.einsum("...i,...ij,...j->...", n, a3, n)
        Dt[..., 0, 0, 1:m + 1] = 2.0 * an2
        Dt[..., 0, 1:m + 1, 0] = 2.0 * an2
        Dt[..., 1:m + 1, 0, 0] = 2.0 * an2
        Dt[..., 0, 1:m + 1, 1:m + 1] = 2.0 * a1
        Dt[..., 1:m + 1, 0, 1:m + 1] = 2.0 * a1
        Dt[..., 1:m + 1, 1:m + 1, 0] = 2.0 * a1
        fD = f.h[..., :, 4]
        A3 = (np.einsum("...abc,...ai,...bj,...cl->...ijl", f.t, J, J, J, optimize=True)
              + _sym_mv(Dh, np.einsum("...a,...al->...l", fD, J))
              + fa[..., 4, None, None, None] * Dt)
        A3[..., 0, 0, 0] += np.einsum("...i,...i->...", n, g3)
        A3[..., 0, 0, 1:m + 1] += g2
        A3[..., 0, 1:m + 1, 0] += g2
        A3[..., 1:m + 1, 0, 0] += g2
        A3[..., 0, idx, idx] += R / n
        A3[..., idx, 0, idx] += R / n
        A3[..., idx, idx, 0] += R / n
        A3[..., idx, idx, idx] += -RT[..., None] / n ** 2

    return _legendre(Aval, A1, A2, A3, P, V)


def _legendre(Aval, A1, A2, A3, P, V):
    """Swap the last variable V for P via G = A + P V at A_V = -P.

    Output variables are ordered (T, P, n...) given inputs in (T, n..., V).
    """
    d = A1.shape[-1]
    mx = d - 1
    Avv = A2[..., mx, mx]
    kk = 1.0 / Avv
    a = np.concatenate([A2[..., :mx, mx], np.ones(Avv.shape + (1,))], axis=-1)
    Psi2 = np.zeros_like(A2)
    Psi2[..., :mx, :mx] = A2[..., :mx, :mx]
    G2 = Psi2 - kk[..., None, None] * a[..., :, None] * a[..., None, :]
    G1 = np.concatenate([A1[..., :mx], V[..., None]], axis=-1)
    G0 = Aval + P * V
    G3 = None
    if A3 is not None:
        Psi3 = np.zeros_like(A3)
        Psi3[..., :mx, :mx, :mx] = A3[..., :mx, :mx, :mx]
        PsiV = np.zeros_like(A2)
        PsiV[..., :mx, :mx] = A3[..., :mx, :mx, mx]
        PsiVV = np.zeros_like(A1)
        PsiVV[..., :mx] = A3[..., :mx, mx, mx]
        Avvv = A3[..., mx, mx, mx]
        aaa = a[..., :, None, None] * a[..., None, :, None] * a[..., None, None, :]
        G3 = (Psi3 - kk[..., None, None, None] * _sym_mv(PsiV, a)
              + (kk ** 2)[..., None, None, None] * _sym_baa(PsiVV, a)
              - (kk ** 3 * Avvv)[..., None, None, None] * aaa)
    perm = np.r_[0, mx, 1:mx]
    G1 = G1[..., perm]
    G2 = G2[..., perm, :][..., :, perm]
    if G3 is not None:
        G3 = G3[..., perm, :, :][..., :, perm, :][..., :, :, perm]
    return GibbsJet(G0, G1, G2, G3, V)


# --------------------------------------------------------------------------
# phase functions
# --------------------------------------------------------------------------

def _unit(shape, d, i):
    e = np.zeros(shape + (d,))
    e[..., i] = 1.0
    return e


def _outer(a, b):
    return a[..., :, None] * b[..., None, :]


def entropy_from(jet):
    third = jet.third
    return PhaseEval(-jet.grad[..., 0], -jet.hess[..., 0, :],
                     None if third is None else -third[..., 0, :, :])


def volume_from(jet):
    third = jet.third
    return PhaseEval(jet.grad[..., 1], jet.hess[..., 1, :],
                     None if third is None else third[..., 1, :, :])


def enthalpy_from(jet, T):
    T = np.asarray(T, float)
    GT = jet.grad[..., 0]
    gT = jet.hess[..., 0, :]
    eT = _unit(GT.shape, jet.dim, 0)
    grad = jet.grad - eT * GT[..., None] - T[..., None] * gT
    hess = None
    if jet.third is not None:
        hess = jet.hess - _outer(eT, gT) - _outer(gT, eT) - T[..., None, None] * jet.third[..., 0, :, :]
    return PhaseEval(jet.value - T * GT, grad, hess)


def phase_enthalpy(eos, T, P, n, root="vapor"):
    """H(T, P, n) in J: ideal-gas part plus Peng-Robinson residual."""
    T, P, n = _as_batch(T, P, n)
    return enthalpy_from(gibbs_jet(eos, T, P, n, root), T)


def phase_entropy(eos, T, P, n, root="vapor"):
    """S(T, P, n) in J/K including the ideal mixing term."""
    return entropy_from(gibbs_jet(eos, T, P, n, root))


def phase_volume(eos, T, P, n, root="vapor"):
    """V(T, P, n) in m3."""
    return volume_from(gibbs_jet(eos, T, P, n, root))


def derived_potentials(H, S, V, T, P):
    """U = H - PV, G = H - TS and A = U - TS with chain-ruled derivatives.

    Gradients are ordered (T, P, ...) so the product-rule corrections hit
    slots 0 and 1.
    """
    T = np.asarray(T, float)
    P = np.asarray(P, float)
    d = H.grad.shape[-1]
    shape = np.shape(H.value)
    eT = _unit(shape, d, 0)
    eP = _unit(shape, d, 1)
    with_hess = H.hess is not None

    def combine(F, c, X, e):
        # F - c * X where c is the variable in slot e
        val = F.value - c * X.value
        grad = F.grad - e * X.value[..., None] - c[..., None] * X.grad
        hess = None
        if with_hess:
            hess = F.hess - _outer(e, X.grad) - _outer(X.grad, e) - c[..., None, None] * X.hess
        return PhaseEval(val, grad, hess)

    U = combine(H, P, V, eP)
    G = combine(H, T, S, eT)
    A = combine(U, T, S, eT)
    return U, G, A


@dataclass
class PhaseProps:
    """Everything the flash and flux code needs from one phase evaluation."""

    H: PhaseEval
    S: PhaseEval
    V: PhaseEval
    U: PhaseEval
    G: PhaseEval
    A: PhaseEval
    jet: GibbsJet

    @property
    def mu(self):
        """Chemical potentials dG/dn."""
        return self.jet.grad[..., 2:]


def phase_props(eos, T, P, n, root="vapor", order=3):
    T, P, n = _as_batch(T, P, n)
    jet = gibbs_jet(eos, T, P, n, root, order=order)
    H = enthalpy_from(jet, T)
    S = entropy_from(jet)
    V = volume_from(jet)
    U, G, A = derived_potentials(H, S, V, T, P)
    return PhaseProps(H, S, V, U, G, A, jet)


# --------------------------------------------------------------------------
# rock
# --------------------------------------------------------------------------

def rock_properties(T, P, rock, V_ref):
    """Rock U, S, V, H, A as PhaseEvals in (T, P).

    Temperature-independent volume ``V_ref exp(cr (P - P_REF))`` and a
    constant heat capacity; the reference state is (T_REF, P_REF).
    """
    T = np.asarray(T, float)
    P = np.asarray(P, float)
    T, P = np.broadcast_arrays(T, P)
    V_ref = np.broadcast_to(np.asarray(V_ref, float), T.shape)
    mass = rock.rho_rock * V_ref
    C = mass * rock.cp_rock
    cr = rock.cr
    dP = P - P_REF
    ex = np.exp(cr * dP)
    V = V_ref * ex
    VP = cr * V
    VPP = cr * VP
    if cr > 0:
        work = V_ref * np.expm1(cr * dP) / cr
    else:
        work = V_ref * dP
    z = np.zeros_like(T)
    shape = T.shape

    def pe(val, gT, gP, hTT, hTP, hPP):
        g = np.stack([gT, gP], axis=-1)
        h = np.stack([np.stack([hTT, hTP], -1), np.stack([hTP, hPP], -1)], -2)
        return PhaseEval(val, g, h)

    lnT = np.log(T / T_REF)
    Hr = pe(C * (T - T_REF) + work, C + z, V, z, z, VP)
    Sr = pe(C * lnT, C / T, z, -C / T ** 2, z, z)
    Vr = pe(V, z, VP, z, z, VPP)
    Ur, Gr, Ar = derived_potentials(Hr, Sr, Vr, T, P)
    del shape
    return {"U": Ur, "S": Sr, "V": Vr, "H": Hr, "A": Ar, "G": Gr}


# --------------------------------------------------------------------------
# component database
# --------------------------------------------------------------------------

def component_database():
    """Bundled component constants keyed by name."""
    text = resources.files("thermoflood").joinpath("data/components.json").read_text()
    raw = json.loads(text)
    return {k: v for k, v in raw.items() if not k.startswith("_")}


def load_component(name, overrides=None):
    db = component_database()
    if name not in db:
        raise KeyError(f"unknown component '{name}'")
    data = dict(db[name])
    data.update(overrides or {})
    return ComponentSpec(name=name, **data)


def make_mixture(names, kij=None, water="water"):
    comps = [load_component(n) if isinstance(n, str) else n for n in names]
    w = load_component(water) if isinstance(water, str) else water
    return MixtureSpec(comps, w, kij)
