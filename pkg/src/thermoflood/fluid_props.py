"""Closure models: saturations, Stone II relative permeability, LBC and water viscosity.

Derivatives are returned with respect to the cell algebraic layout
``y = (T, P, n^w, n^o_1..n^o_m, n^g_1..n^g_m)`` (length ``3 + 2m``) for
the three-phase quantities, and with respect to ``(T, P, n^alpha)`` for
single-phase quantities.
"""

from dataclasses import dataclass

import numpy as np

from . import thermo

# Jossi-Stiel-Thodos polynomial coefficients
LBC_COEFFS = (0.1023, 0.023364, 0.058533, -0.040758, 0.0093324)
LBC_BRANCH_TR = 1.5
SMOOTH_BAND = 1.0e-3


@dataclass(frozen=True)
class RelPermSpec:
    Sc_w: float = 0.1
    Sc_g: float = 0.0
    Smax_w: float = 0.2
    Smax_g: float = 0.2
    kr0_w: float = 0.6
    kr0_ow: float = 1.0
    kr0_g: float = 0.8
    kr0_og: float = 1.0
    m_w: float = 2.0
    m_ow: float = 2.0
    m_g: float = 2.0
    m_og: float = 2.0
    kr_c: float = 1.0

    def __post_init__(self):
        for name in ("Sc_w", "Sc_g", "Smax_w", "Smax_g", "kr0_w", "kr0_ow", "kr0_g", "kr0_og"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if min(self.m_w, self.m_ow, self.m_g, self.m_og) < 1.0:
            raise ValueError("Corey exponents must be >= 1")
        if self.kr_c <= 0:
            raise ValueError("kr_c must be positive")
        if self.Sc_w + self.Smax_w >= 1.0 or self.Sc_g + self.Smax_g >= 1.0:
            raise ValueError("connate plus maximum saturation must stay below 1")


@dataclass(frozen=True)
class ViscositySpec:
    lbc_coeffs: tuple = LBC_COEFFS
    mu_w_ref: float = 5.0e-4  # Pa s
    c_mu_w: float = 0.0  # 1/Pa

    def __post_init__(self):
        if len(self.lbc_coeffs) != 5 or not np.all(np.isfinite(self.lbc_coeffs)):
            raise ValueError("need five finite LBC coefficients")
        if self.mu_w_ref <= 0:
            raise ValueError("mu_w_ref must be positive")


# --------------------------------------------------------------------------
# smoothing helpers
# --------------------------------------------------------------------------

def smooth_clamp01(s, band=SMOOTH_BAND):
    """C1 clamp of ``s`` to [0, 1], exact at both ends; returns (value, slope).

    Inside ``[0, band]`` the identity is replaced by the cubic Hermite
    ``2 s^2/band - s^3/band^2`` (and mirrored near 1).
    """
    s = np.asarray(s, float)
    w = band
    lo = np.clip(s, 0.0, w)
    hi = np.clip(1.0 - s, 0.0, w)
    val = np.clip(s, 0.0, 1.0)
    der = ((s > 0.0) & (s < 1.0)).astype(float)
    in_lo = (s > 0.0) & (s < w)
    in_hi = (s < 1.0) & (s > 1.0 - w)
    p_lo = 2.0 * lo ** 2 / w - lo ** 3 / w ** 2
    d_lo = 4.0 * lo / w - 3.0 * lo ** 2 / w ** 2
    p_hi = 2.0 * hi ** 2 / w - hi ** 3 / w ** 2
    d_hi = 4.0 * hi / w - 3.0 * hi ** 2 / w ** 2
    val = np.where(in_lo, p_lo, val)
    der = np.where(in_lo, d_lo, der)
    val = np.where(in_hi, 1.0 - p_hi, val)
    der = np.where(in_hi, d_hi, der)
    return val, der


def smooth_pos(x, band=SMOOTH_BAND):
    """C1 version of max(x, 0), exact outside (0, band); returns (value, slope)."""
    x = np.asarray(x, float)
    w = band
    c = np.clip(x, 0.0, w)
    inside = (x > 0.0) & (x < w)
    val = np.where(inside, 2.0 * c ** 2 / w - c ** 3 / w ** 2, np.maximum(x, 0.0))
    der = np.where(inside, 4.0 * c / w - 3.0 * c ** 2 / w ** 2, (x >= w).astype(float))
    return val, der


# --------------------------------------------------------------------------
# saturations and relative permeability
# --------------------------------------------------------------------------

def _phase_to_cell(grad_w, grad_o, grad_g, nc):
    """Embed per-phase (T, P, n^alpha) gradients into the cell y layout."""
    shape = grad_w.shape[:-1]
    ny = 3 + 2 * nc
    out = []
    for g, cols in ((grad_w, [2]), (grad_o, list(range(3, 3 + nc))),
                    (grad_g, list(range(3 + nc, 3 + 2 * nc)))):
        full = np.zeros(shape + (ny,))
        full[..., 0:2] = g[..., 0:2]
        full[..., cols] = g[..., 2:]
        out.append(full)
    return out


def saturations_from_volumes(Vw, Vo, Vg, nc):
    """Saturations and their y-gradients from phase volume PhaseEvals."""
    dVw, dVo, dVg = _phase_to_cell(Vw.grad, Vo.grad, Vg.grad, nc)
    Vf = Vw.value + Vo.value + Vg.value
    dVf = dVw + dVo + dVg
    sats, grads = [], []
    for V, dV in ((Vw.value, dVw), (Vo.value, dVo), (Vg.value, dVg)):
        s = V / Vf
        sats.append(s)
        grads.append(dV / Vf[..., None] - (s / Vf)[..., None] * dVf)
    return np.stack(sats, -1), np.stack(grads, -2)


def saturations(fluid, T, P, nw, no, ng):
    """(S^w, S^o, S^g) with gradients w.r.t. y, from the property stack."""
    Vw = thermo.phase_props(fluid.aqueous, T, P, np.asarray(nw, float)[..., None], "liquid", order=2).V
    Vo = thermo.phase_props(fluid.hydrocarbon, T, P, no, "liquid", order=2).V
    Vg = thermo.phase_props(fluid.hydrocarbon, T, P, ng, "vapor", order=2).V
    return saturations_from_volumes(Vw, Vo, Vg, fluid.nc)


def stone2_from_saturations(S, dS, spec):
    """Stone II relative permeabilities ``(krw, kro, krg)`` and y-gradients.

    ``S``/``dS`` are saturations (..., 3) and their gradients (..., 3, ny).
    """
    Sw, Sg = S[..., 0], S[..., 2]
    dSw, dSg = dS[..., 0, :], dS[..., 2, :]
    nw_ = (Sw - spec.Sc_w) / (1.0 - spec.Sc_w - spec.Smax_w)
    ng_ = (Sg - spec.Sc_g) / (1.0 - spec.Sc_g - spec.Smax_g)
    bw, dbw = smooth_clamp01(nw_)
    bg, dbg = smooth_clamp01(ng_)
    dbw = (dbw / (1.0 - spec.Sc_w - spec.Smax_w))[..., None] * dSw
    dbg = (dbg / (1.0 - spec.Sc_g - spec.Smax_g))[..., None] * dSg

    def corey(k0, base, dbase, m):
        val = k0 * base ** m
        der = k0 * m * base ** (m - 1.0)
        return val, der[..., None] * dbase

    krw, dkrw = corey(spec.kr0_w, bw, dbw, spec.m_w)
    krow, dkrow = corey(spec.kr0_ow, 1.0 - bw, -dbw, spec.m_ow)
    krg, dkrg = corey(spec.kr0_g, bg, dbg, spec.m_g)
    krog, dkrog = corey(spec.kr0_og, 1.0 - bg, -dbg, spec.m_og)

    c = spec.kr_c
    f1 = krow / c + krw
    f2 = krog / c + krg
    raw = c * (f1 * f2 - (krw + krg))
    draw = c * ((dkrow / c + dkrw) * f2[..., None] + f1[..., None] * (dkrog / c + dkrg)
                - (dkrw + dkrg))
    kro, s = smooth_pos(raw)
    dkro = s[..., None] * draw
    kr = np.stack([krw, kro, krg], -1)
    dkr = np.stack([dkrw, dkro, dkrg], -2)
    return kr, dkr


def stone2_relperm(fluid, T, P, nw, no, ng, spec):
    S, dS = saturations(fluid, T, P, nw, no, ng)
    return stone2_from_saturations(S, dS, spec)


# --------------------------------------------------------------------------
# viscosity
# --------------------------------------------------------------------------

def lbc_units(eos):
    """Critical data in the correlation's native units (K, atm, g/mol)."""
    return eos.Tc, eos.Pc / 101325.0, eos.Mw * 1000.0


def cp_to_pas(mu_cp):
    return 1.0e-3 * mu_cp


def lbc_reference_viscosity(eos, T):
    """Pure-component dilute viscosities (cP) and dT derivatives, per component."""
    Tc, Pc, Mw = lbc_units(eos)
    T = np.asarray(T, float)[..., None]
    tau = Tc ** (1.0 / 6.0) * Mw ** -0.5 * Pc ** (-2.0 / 3.0)
    Tr = T / Tc
    low = Tr < LBC_BRANCH_TR
    base = np.where(low, 1.0, 4.58 * Tr - 1.67)
    mu_low = 34.0e-5 * Tr ** 0.94 / tau
    mu_high = 17.78e-5 * base ** 0.625 / tau
    mu = np.where(low, mu_low, mu_high)
    dmu = np.where(low, 0.94 * mu_low / T, 0.625 * 4.58 / Tc / base * mu_high)
    return mu, dmu


def lbc_from_volume(eos, T, n, Veval, coeffs=LBC_COEFFS):
    """LBC viscosity (Pa s) and its (T, P, n) gradient given the phase volume."""
    Tc, Pc, Mw = lbc_units(eos)
    n = np.asarray(n, float)
    T = np.asarray(T, float)
    N = n.sum(-1)
    x = n / N[..., None]
    m = eos.nc
    shape = N.shape
    d = 2 + m

    def lin(c):
        val = x @ c
        g = np.zeros(shape + (d,))
        g[..., 2:] = (c - val[..., None]) / N[..., None]
        return val, g

    Tcm, dTcm = lin(Tc)
    Pcm, dPcm = lin(Pc)
    Mwm, dMwm = lin(Mw)
    tau = Tcm ** (1.0 / 6.0) * Mwm ** -0.5 * Pcm ** (-2.0 / 3.0)
    dlntau = (dTcm / (6.0 * Tcm[..., None]) - dMwm / (2.0 * Mwm[..., None])
              - 2.0 * dPcm / (3.0 * Pcm[..., None]))

    V = Veval.value
    rho_r = (n @ eos.Vc) / V
    drho = np.zeros(shape + (d,))
    drho[..., 2:] = eos.Vc / V[..., None]
    drho -= (rho_r / V)[..., None] * Veval.grad

    c = np.asarray(coeffs, float)
    a = c[0] + rho_r * (c[1] + rho_r * (c[2] + rho_r * (c[3] + rho_r * c[4])))
    da = c[1] + rho_r * (2 * c[2] + rho_r * (3 * c[3] + rho_r * 4 * c[4]))
    term = (a ** 4 - 1.0e-4) / tau
    dterm = (4.0 * a ** 3 * da / tau)[..., None] * drho - term[..., None] * dlntau

    muk, dmuk = lbc_reference_viscosity(eos, T)
    sq = np.sqrt(Mw)
    num = (n * muk * sq).sum(-1)
    den = n @ sq
    mubar = num / den
    dmubar = np.zeros(shape + (d,))
    dmubar[..., 0] = (n * dmuk * sq).sum(-1) / den
    dmubar[..., 2:] = (muk * sq - mubar[..., None] * sq) / den[..., None]

    mu = mubar + term
    return cp_to_pas(mu), cp_to_pas(dmubar + dterm)


def lbc_viscosity(eos, T, P, n, root="liquid", coeffs=LBC_COEFFS):
    """LBC viscosity of an oil or gas phase from the property stack."""
    T, P, n = thermo._as_batch(T, P, n)
    Veval = thermo.phase_props(eos, T, P, n, root, order=2).V
    return lbc_from_volume(eos, T, n, Veval, coeffs)


def water_viscosity(P, spec):
    """Water viscosity (Pa s) and dmu/dP from a constant viscosibility."""
    P = np.asarray(P, float)
    mu = spec.mu_w_ref * np.exp(spec.c_mu_w * (P - thermo.P_REF))
    return mu, spec.c_mu_w * mu
