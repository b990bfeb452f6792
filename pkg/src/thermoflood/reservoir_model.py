"""Finite-volume right-hand side F and per-cell equilibrium residual G.

State layout per cell:

* thermal: ``x = (U, n_w, n_1..n_m)``, ``y = (T, P, n^w, n^o, n^g)``
* isothermal: ``x = (n_w, n_1..n_m)``, ``y = (P, n^w, n^o, n^g)``

Every phase moves with a *carrier* vector ``C^a`` with one entry per row
of ``x``: the energy row carries ``H^a kr^a / (V^a mu^a)``, the water row
``n^w kr^w / (V^w mu^w)`` and component rows ``n^a_k kr^a / (V^a mu^a)``.
The molar flux of phase ``a`` across a face is then ``Gamma C^a dPhi^a``
with ``C^a`` taken upstream. Upstream selection is blended by a cubic over
``|dPhi| < UPWIND_BAND`` so the right-hand side is differentiable.

Jacobians with respect to ``y`` are returned as blocks on the cell
adjacency pattern (see :class:`BlockPattern`).
"""

from dataclasses import dataclass, field

import numpy as np

from . import flash, thermo
from .fluid_props import (RelPermSpec, ViscositySpec, _phase_to_cell, lbc_from_volume,
                          saturations_from_volumes, smooth_pos, stone2_from_saturations,
                          water_viscosity)
from .grid import build_connections

GRAVITY = 9.80665  # m/s2
UPWIND_BAND = 10.0  # Pa
WELL_BAND = 1.0e2  # Pa


class ModelError(RuntimeError):
    pass


@dataclass
class WellSpec:
    name: str
    kind: str  # "injector" or "producer"
    cell: int
    WI: float  # m3
    bhp_lo: float  # Pa
    bhp_hi: float  # Pa
    T_inj: float = None  # K, injectors only

    def __post_init__(self):
        if self.kind not in ("injector", "producer"):
            raise ValueError(f"well {self.name}: kind must be injector or producer")
        if self.WI < 0:
            raise ValueError(f"well {self.name}: WI must be nonnegative")
        if not self.bhp_lo <= self.bhp_hi:
            raise ValueError(f"well {self.name}: BHP bounds out of order")
        if self.kind == "injector" and self.T_inj is None:
            raise ValueError(f"injector {self.name} needs T_inj")

    @property
    def is_injector(self):
        return self.kind == "injector"


@dataclass
class SurroundingsSpec:
    T_s: float = 323.15
    kT_rs: np.ndarray = 0.0  # W/K per cell

    def __post_init__(self):
        if np.any(np.asarray(self.kT_rs) < 0):
            raise ValueError("kT_rs must be nonnegative")


@dataclass
class CellState:
    """Differential variables for every cell, shape (ncell, nx)."""

    x: np.ndarray
    mode: str

    def __post_init__(self):
        self.x = np.asarray(self.x, float)

    @property
    def U(self):
        return self.x[:, 0] if self.mode == "thermal" else None

    @property
    def n_w(self):
        return self.x[:, 1 if self.mode == "thermal" else 0]

    @property
    def n(self):
        return self.x[:, 2:] if self.mode == "thermal" else self.x[:, 1:]


@dataclass
class CellAlgebraic:
    """Algebraic variables and multipliers for every cell."""

    y: np.ndarray
    z: np.ndarray
    mode: str
    T_iso: float = None

    @property
    def T(self):
        return self.y[:, 0] if self.mode == "thermal" else np.full(len(self.y), self.T_iso)

    @property
    def P(self):
        return self.y[:, 1 if self.mode == "thermal" else 0]


class BlockPattern:
    """Cell adjacency (with self loops) in CSR form, used for block matrices."""

    def __init__(self, ncell, fi, fj):
        rows = np.concatenate([np.arange(ncell), fi, fj])
        cols = np.concatenate([np.arange(ncell), fj, fi])
        key = rows * ncell + cols
        order = np.argsort(key, kind="stable")
        key = key[order]
        self.ncell = ncell
        self.indices = (key % ncell).astype(np.int64)
        counts = np.bincount(key // ncell, minlength=ncell)
        self.indptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        self._key = key
        self.diag = self.position(np.arange(ncell), np.arange(ncell))
        self.ij = self.position(fi, fj)
        self.ji = self.position(fj, fi)

    @property
    def nblocks(self):
        return len(self.indices)

    def position(self, r, c):
        return np.searchsorted(self._key, np.asarray(r) * self.ncell + np.asarray(c))

    def to_bsr(self, blocks):
        import scipy.sparse as sp
        b = blocks.shape[1:]
        return sp.bsr_matrix((blocks, self.indices, self.indptr),
                             shape=(self.ncell * b[0], self.ncell * b[1]))


@dataclass
class CellFields:
    """Per-cell properties and transport carriers at one algebraic state."""

    T: np.ndarray
    P: np.ndarray
    props: flash.CellProps
    carrier: np.ndarray  # (ncell, 3, nx)
    dcarrier: np.ndarray  # (ncell, 3, nx, ny)
    rho_mass: np.ndarray  # (ncell, 3)
    drho_mass: np.ndarray  # (ncell, 3, ny)
    sat: np.ndarray  # (ncell, 3)
    kr: np.ndarray
    mu: np.ndarray
    extras: dict = field(default_factory=dict)


@dataclass
class FEval:
    F: np.ndarray  # (ncell, nx)
    dFdy: np.ndarray  # (nblocks, nx, ny) or None
    dFdu: np.ndarray  # (ncell, nx, nwell) or None
    dFdd: np.ndarray  # (ncell, nx, nwell) or None
    fields: CellFields


@dataclass
class GEval:
    G: np.ndarray  # (ncell, ny + nz)
    dGdx: np.ndarray  # (ncell, ny + nz, nx)
    dGdw: np.ndarray  # (ncell, ny + nz, ny + nz)
    props: flash.CellProps


@dataclass
class WellRates:
    """Molar phase rates (mol/s) and heat flows (W) for each well."""

    inj_water: np.ndarray  # (nwell,)
    prod: np.ndarray  # (nwell, 3) phase molar rates w, o, g
    prod_components: np.ndarray  # (nwell, m)
    heat: np.ndarray  # (nwell,) net energy into the reservoir
    d_prod_oil_dy: np.ndarray = None  # (nwell, ny)
    d_prod_oil_du: np.ndarray = None  # (nwell,)


def upwind_weight(dphi, band=UPWIND_BAND):
    """Weight of the j-side value: 1 when dPhi >= band, 0 when dPhi <= -band."""
    s = np.clip(np.asarray(dphi, float) / band, -1.0, 1.0)
    w = 0.5 + 0.75 * s - 0.25 * s ** 3
    dw = np.where(np.abs(dphi) < band, 0.75 * (1.0 - s ** 2) / band, 0.0)
    return w, dw


class ReservoirModel:
    """Discretized thermal or isothermal compositional flow model."""

    def __init__(self, grid, fluid, rock, relperm=None, viscosity=None, wells=(),
                 mode="thermal", surroundings=None, T_iso=None, gravity=GRAVITY):
        if mode not in ("thermal", "isothermal"):
            raise ValueError("mode must be 'thermal' or 'isothermal'")
        if mode == "isothermal" and T_iso is None:
            raise ValueError("isothermal mode needs T_iso")
        self.grid = grid
        self.fluid = fluid
        self.rock = rock
        self.relperm = relperm or RelPermSpec()
        self.viscosity = viscosity or ViscositySpec()
        self.wells = list(wells)
        for w in self.wells:
            if not 0 <= w.cell < grid.ncell:
                raise ValueError(f"well {w.name} cell {w.cell} outside the grid")
        self.mode = mode
        self.surroundings = surroundings or SurroundingsSpec()
        self.T_iso = T_iso
        self.gravity = gravity
        self.conn = build_connections(grid)
        self.V_bulk = grid.volumes
        self.V_ref = self.V_bulk * (1.0 - rock.phi)
        self.pattern = BlockPattern(grid.ncell, self.conn.i, self.conn.j)
        nc = fluid.nc
        self.nc = nc
        self.thermal = mode == "thermal"
        self.nx = (2 if self.thermal else 1) + nc
        self.ny = (3 if self.thermal else 2) + 2 * nc
        self.nz = (3 if self.thermal else 2) + nc
        self.kT_rs = np.broadcast_to(np.asarray(self.surroundings.kT_rs, float), (grid.ncell,))
        self.well_cells = np.array([w.cell for w in self.wells], dtype=int)
        self.well_WI = np.array([w.WI for w in self.wells], float)
        self.is_inj = np.array([w.is_injector for w in self.wells], bool)

    # ------------------------------------------------------------------
    # sizes
    # ------------------------------------------------------------------
    @property
    def ncell(self):
        return self.grid.ncell

    @property
    def nwell(self):
        return len(self.wells)

    def equation_counts(self):
        """(differential, algebraic) equation totals."""
        return self.ncell * self.nx, self.ncell * (self.ny + self.nz)

    def default_disturbance(self):
        return np.array([w.T_inj if w.is_injector else np.nan for w in self.wells], float)

    # ------------------------------------------------------------------
    # cell properties
    # ------------------------------------------------------------------
    def split_y(self, y):
        y = np.asarray(y, float)
        nc = self.nc
        if self.thermal:
            T, P, rest = y[:, 0], y[:, 1], y[:, 2:]
        else:
            T, P, rest = np.full(len(y), self.T_iso, float), y[:, 0], y[:, 1:]
        return T, P, rest[:, 0], rest[:, 1:1 + nc], rest[:, 1 + nc:]

    def _drop_T(self, a):
        """Remove the temperature column of full-layout gradients in isothermal mode."""
        return a if self.thermal else a[..., 1:]

    def cell_fields(self, y, order=3, props=None):
        T, P, nw, no, ng = self.split_y(y)
        fl = self.fluid
        nc = self.nc
        if props is None:
            props = flash.evaluate_cells(fl, self.rock, self.V_ref, T, P, nw, no, ng, order=order)
        pw, po, pg = props.water, props.oil, props.gas
        S, dS = saturations_from_volumes(pw.V, po.V, pg.V, nc)
        kr, dkr = stone2_from_saturations(S, dS, self.relperm)

        # viscosities with full-layout gradients
        mu_w, dmu_w_dP = water_viscosity(P, self.viscosity)
        gw = np.zeros(P.shape + (3,))
        gw[:, 1] = dmu_w_dP
        mu_o, gmo = lbc_from_volume(fl.hydrocarbon, T, no, po.V, self.viscosity.lbc_coeffs)
        mu_g, gmg = lbc_from_volume(fl.hydrocarbon, T, ng, pg.V, self.viscosity.lbc_coeffs)
        dmu = _phase_to_cell(gw, gmo, gmg, nc)
        dV = _phase_to_cell(pw.V.grad, po.V.grad, pg.V.grad, nc)
        dH = _phase_to_cell(pw.H.grad, po.H.grad, pg.H.grad, nc)
        mus = (mu_w, mu_o, mu_g)
        Vs = (pw.V.value, po.V.value, pg.V.value)
        Hs = (pw.H.value, po.H.value, pg.H.value)
        nfull = 3 + 2 * nc
        cols = ([2], list(range(3, 3 + nc)), list(range(3 + nc, 3 + 2 * nc)))
        moles = (nw[:, None], no, ng)
        mw_all = (np.array([fl.water.Mw]), fl.hydrocarbon.Mw, fl.hydrocarbon.Mw)

        ncell = len(P)
        off = 1 if self.thermal else 0
        carrier = np.zeros((ncell, 3, self.nx))
        dcarrier = np.zeros((ncell, 3, self.nx, nfull))
        rho_m = np.zeros((ncell, 3))
        drho_m = np.zeros((ncell, 3, nfull))
        for a in range(3):
            V, mu = Vs[a], mus[a]
            inv = 1.0 / (V * mu)
            base = kr[:, a] * inv
            dbase = dkr[:, a] * inv[:, None] - (base[:, None]) * (dV[a] / V[:, None] + dmu[a] / mu[:, None])
            if self.thermal:
                carrier[:, a, 0] = Hs[a] * base
                dcarrier[:, a, 0] = dH[a] * base[:, None] + Hs[a][:, None] * dbase
            rows = [off] if a == 0 else list(range(off + 1, off + 1 + nc))
            nk = moles[a]
            carrier[:, a, rows] = nk * base[:, None]
            dcarrier[:, a, rows] = nk[:, :, None] * dbase[:, None, :]
            dcarrier[:, a, rows, cols[a]] += base[:, None]
            mass = nk @ mw_all[a]
            rho_m[:, a] = mass / V
            drho_m[:, a, cols[a]] = mw_all[a][None, :] / V[:, None]
            drho_m[:, a] -= (rho_m[:, a] / V)[:, None] * dV[a]
        return CellFields(T, P, props, carrier, self._drop_T(dcarrier), rho_m, self._drop_T(drho_m),
                          S, kr, np.stack(mus, -1), {"dS": self._drop_T(dS)})

    # ------------------------------------------------------------------
    # fluxes and wells
    # ------------------------------------------------------------------
    def face_fluxes(self, fields, jac=True):
        """Flux into cell i of every face (i < j) and its Jacobians w.r.t. y_i and y_j.

        Returns ``(flux (nf, nx), d_i (nf, nx, ny), d_j (nf, nx, ny), dphi (nf, 3))``.
        """
        c = self.conn
        i, j = c.i, c.j
        g = self.gravity
        Pcol = 1 if self.thermal else 0
        rho_face = 0.5 * (fields.rho_mass[i] + fields.rho_mass[j])
        dphi = (fields.P[j] - fields.P[i])[:, None] - rho_face * g * c.dz[:, None]
        w, dw = upwind_weight(dphi)
        Ci, Cj = fields.carrier[i], fields.carrier[j]
        Cup = w[:, :, None] * Cj + (1.0 - w[:, :, None]) * Ci
        flux = c.gamma[:, None] * np.einsum("fa,fak->fk", dphi, Cup)
        if self.thermal:
            flux[:, 0] += c.gamma_T * (fields.T[j] - fields.T[i])
        if not jac:
            return flux, None, None, dphi
        nf = len(i)
        ny = self.ny
        dphi_i = np.zeros((nf, 3, ny))
        dphi_j = np.zeros((nf, 3, ny))
        half = -0.5 * g * c.dz[:, None, None]
        dphi_i[:] = half * fields.drho_mass[i]
        dphi_j[:] = half * fields.drho_mass[j]
        dphi_i[:, :, Pcol] -= 1.0
        dphi_j[:, :, Pcol] += 1.0
        # d(Cup * dphi) = w dCj dphi + (1-w) dCi dphi + [(Cj - Ci) dw dphi + Cup] ddphi
        coef = (Cj - Ci) * (dw * dphi)[:, :, None] + Cup  # (nf, 3, nx)
        gam = c.gamma[:, None, None]
        di = gam * (np.einsum("fa,fakl->fkl", (1.0 - w) * dphi, fields.dcarrier[i])
                    + np.einsum("fak,fal->fkl", coef, dphi_i))
        dj = gam * (np.einsum("fa,fakl->fkl", w * dphi, fields.dcarrier[j])
                    + np.einsum("fak,fal->fkl", coef, dphi_j))
        if self.thermal:
            di[:, 0, 0] -= c.gamma_T
            dj[:, 0, 0] += c.gamma_T
        return flux, di, dj, dphi

    def injection_enthalpy(self, T_inj, P):
        """Molar enthalpy of injected water at (T_inj, cell P) and its (T, P) gradient."""
        pr = thermo.phase_props(self.fluid.aqueous, T_inj, P, np.ones(np.shape(P) + (1,)), "liquid", order=2)
        return pr.H.value, pr.H.grad[..., :2]

    def well_terms(self, fields, u, d, jac=True):
        """Source vectors per well (into the cell, already multiplied by V).

        Returns ``(src (nwell, nx), d_y (nwell, nx, ny), d_u (nwell, nx), d_d (nwell, nx), rates)``.
        """
        nwl = self.nwell
        nx, ny = self.nx, self.ny
        src = np.zeros((nwl, nx))
        dsy = np.zeros((nwl, nx, ny))
        dsu = np.zeros((nwl, nx))
        dsd = np.zeros((nwl, nx))
        inj_water = np.zeros(nwl)
        prod = np.zeros((nwl, 3))
        prod_comp = np.zeros((nwl, self.nc))
        heat = np.zeros(nwl)
        d_oil_dy = np.zeros((nwl, ny))
        d_oil_du = np.zeros(nwl)
        if nwl == 0:
            return src, dsy, dsu, dsd, WellRates(inj_water, prod, prod_comp, heat, d_oil_dy, d_oil_du)
        u = np.asarray(u, float)
        Pcol = 1 if self.thermal else 0
        off = 1 if self.thermal else 0
        cells = self.well_cells
        P = fields.P[cells]
        WI = self.well_WI
        C = fields.carrier[cells]  # (nwell, 3, nx)
        dC = fields.dcarrier[cells]
        inj = self.is_inj
        # producers
        s, ds = smooth_pos(P - u, WELL_BAND)
        s = np.where(inj, 0.0, s)
        ds = np.where(inj, 0.0, ds)
        Ctot = C.sum(1)
        src -= (WI * s)[:, None] * Ctot
        dsy -= (WI * s)[:, None, None] * dC.sum(1)
        dsy[:, :, Pcol] -= (WI * ds)[:, None] * Ctot
        dsu += (WI * ds)[:, None] * Ctot
        # phase molar rates: total moles carried by each phase
        Mph = np.stack([C[:, 0, off], C[:, 1, off + 1:].sum(-1), C[:, 2, off + 1:].sum(-1)], -1)
        prod = (WI * s)[:, None] * Mph
        prod_comp = (WI * s)[:, None] * (C[:, 1, off + 1:] + C[:, 2, off + 1:])
        dMo = dC[:, 1, off + 1:].sum(1)
        d_oil_dy = (WI * s)[:, None] * dMo
        d_oil_dy[:, Pcol] += WI * ds * Mph[:, 1]
        d_oil_du = -WI * ds * Mph[:, 1]
        if self.thermal:
            heat -= WI * s * Ctot[:, 0]
        # injectors: water at the cell's water mobility, enthalpy at (T_inj, P)
        si, dsi = smooth_pos(u - P, WELL_BAND)
        si = np.where(inj, si, 0.0)
        dsi = np.where(inj, dsi, 0.0)
        Mw = C[:, 0, off]
        dMw = dC[:, 0, off]
        q = WI * si * Mw
        inj_water = q
        vec = np.zeros((nwl, nx))
        vec[:, off] = 1.0
        dvec_P = np.zeros((nwl, nx))
        dvec_d = np.zeros((nwl, nx))
        if self.thermal:
            Tinj = np.where(inj, np.nan_to_num(np.asarray(d, float), nan=300.0), 300.0)
            h, dh = self.injection_enthalpy(Tinj, P)
            vec[:, 0] = h
            dvec_P[:, 0] = dh[:, 1]
            dvec_d[:, 0] = dh[:, 0]
            heat += q * h
        src += q[:, None] * vec
        dsy += (WI * si)[:, None, None] * vec[:, :, None] * dMw[:, None, :]
        dsy[:, :, Pcol] += (-WI * dsi * Mw)[:, None] * vec + q[:, None] * dvec_P
        dsu += (WI * dsi * Mw)[:, None] * vec
        dsd += q[:, None] * dvec_d
        rates = WellRates(inj_water, prod, prod_comp, heat, d_oil_dy, d_oil_du)
        return src, dsy, dsu, dsd, rates

    def well_rates(self, y, u, d=None):
        """Well rates at algebraic state ``y`` and BHPs ``u``."""
        fields = self.cell_fields(y, order=2)
        d = self.default_disturbance() if d is None else d
        return self.well_terms(fields, u, d, jac=False)[4]

    # ------------------------------------------------------------------
    # assembled residuals
    # ------------------------------------------------------------------
    def residual_F(self, y, u, d=None, jac=True, fields=None, props=None):
        """Right-hand side ``dx/dt = F(y, u, d)`` and its Jacobians."""
        if fields is None:
            fields = self.cell_fields(y, order=3 if jac else 2, props=props)
        d = self.default_disturbance() if d is None else np.asarray(d, float)
        n, nx, ny = self.ncell, self.nx, self.ny
        c = self.conn
        flux, di, dj, _ = self.face_fluxes(fields, jac)
        F = np.zeros((n, nx))
        np.add.at(F, c.i, flux)
        np.add.at(F, c.j, -flux)
        src, dsy, dsu, dsd, _ = self.well_terms(fields, u, d, jac)
        np.add.at(F, self.well_cells, src)
        if self.thermal:
            F[:, 0] += self.kT_rs * (self.surroundings.T_s - fields.T)
        if not jac:
            return FEval(F, None, None, None, fields)
        pat = self.pattern
        blocks = np.zeros((pat.nblocks, nx, ny))
        np.add.at(blocks, pat.diag[c.i], di)
        blocks[pat.ij] += dj
        blocks[pat.ji] -= di
        np.add.at(blocks, pat.diag[c.j], -dj)
        np.add.at(blocks, pat.diag[self.well_cells], dsy)
        if self.thermal:
            blocks[pat.diag, 0, 0] -= self.kT_rs
        dFdu = np.zeros((n, nx, self.nwell))
        dFdd = np.zeros((n, nx, self.nwell))
        for k, cell in enumerate(self.well_cells):
            dFdu[cell, :, k] += dsu[k]
            dFdd[cell, :, k] += dsd[k]
        return FEval(F, blocks, dFdu, dFdd, fields)

    def residual_G(self, x, y, z, jac=True, props=None):
        """Stacked per-cell KKT residuals; block diagonal Jacobians."""
        x = np.asarray(x, float)
        fl = self.fluid
        if self.thermal:
            e = flash.kkt_uv(fl, self.rock, self.V_ref, x[:, 0], self.V_bulk, x[:, 1], x[:, 2:],
                             y, z, jac=jac, props=props)
            dGdx = None if not jac else np.concatenate([e.Jspec[..., :1], e.Jspec[..., 2:]], -1)
        else:
            e = flash.kkt_vt(fl, self.rock, self.V_ref, self.T_iso, self.V_bulk, x[:, 0], x[:, 1:],
                             y, z, jac=jac, props=props)
            dGdx = None if not jac else e.Jspec[..., 1:]
        return GEval(e.r, dGdx, e.J, e.props)

    # ------------------------------------------------------------------
    # initialization
    # ------------------------------------------------------------------
    def initial_state(self, T0, P0, zfeed, Sw0):
        """Consistent (x, y, z) from per-cell (T, P, overall composition, water saturation).

        A PT flash fixes the hydrocarbon split; amounts are scaled so the
        phases fill the pore volume; a final flash in the model's own mode
        (UV or VT) polishes the state to the KKT tolerance.
        """
        n = self.ncell
        T0 = np.broadcast_to(np.asarray(T0, float), (n,)).copy()
        P0 = np.broadcast_to(np.asarray(P0, float), (n,)).copy()
        Sw0 = np.broadcast_to(np.asarray(Sw0, float), (n,)).copy()
        zf = np.broadcast_to(np.asarray(zfeed, float), (n, self.nc))
        zf = zf / zf.sum(-1, keepdims=True)
        if self.mode == "isothermal" and not np.allclose(T0, self.T_iso):
            raise ModelError("isothermal initial temperature must equal T_iso")
        eos = self.fluid.hydrocarbon
        beta, xo, yg, ok = flash.pt_flash(eos, T0, P0, zf)
        if not np.all(ok):
            raise ModelError("initial PT flash did not converge in cells "
                             f"{np.nonzero(~ok)[0].tolist()}")
        vo = thermo.pr_molar_volume(eos, T0, P0, xo, "liquid")
        vg = thermo.pr_molar_volume(eos, T0, P0, yg, "vapor")
        vw = thermo.pr_molar_volume(self.fluid.aqueous, T0, P0, np.ones((n, 1)), "liquid")
        Vp = self.V_bulk - self.V_ref
        nw = Sw0 * Vp / vw
        Nh = (1.0 - Sw0) * Vp / ((1.0 - beta) * vo + beta * vg)
        no = ((1.0 - beta) * Nh)[:, None] * xo
        ng = (beta * Nh)[:, None] * yg
        props = flash.evaluate_cells(self.fluid, self.rock, self.V_ref, T0, P0, nw, no, ng, order=2)
        ntot = no + ng
        mode = "UV" if self.thermal else "VT"
        if self.thermal:
            U = (props.water.U.value + props.oil.U.value + props.gas.U.value + props.rock["U"].value)
            y0 = np.concatenate([T0[:, None], P0[:, None], nw[:, None], no, ng], -1)
            x = np.concatenate([U[:, None], nw[:, None], ntot], -1)
            spec = U
        else:
            y0 = np.concatenate([P0[:, None], nw[:, None], no, ng], -1)
            x = np.concatenate([nw[:, None], ntot], -1)
            spec = T0
        z0 = flash._multipliers(mode, props)
        w0 = np.concatenate([y0, z0], -1)
        y, z, norm, conv = flash.solve_batch(self.fluid, mode, self.rock, self.V_ref, spec,
                                             self.V_bulk, nw, ntot, w0=w0)
        if not np.all(conv):
            raise ModelError(f"initial equilibrium failed in cells {np.nonzero(~conv)[0].tolist()}")
        return x, y, z


def stock_tank_factor(fluid, x_oil):
    """Stock-tank oil volume (m3) per mole of reservoir oil of composition ``x_oil``.

    The oil is flashed at the reference conditions; the liquid part is
    measured at its molar volume there.
    """
    eos = fluid.hydrocarbon
    x_oil = np.asarray(x_oil, float)
    x_oil = x_oil / x_oil.sum()
    T, P = thermo.T_REF, thermo.P_REF
    beta, xl, _, ok = flash.pt_flash(eos, T, P, x_oil)
    vl = thermo.pr_molar_volume(eos, T, P, xl, "liquid")
    return float((1.0 - beta) * vl)
