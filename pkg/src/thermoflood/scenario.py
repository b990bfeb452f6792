"""Scenario files: JSON parsing, validation, canonical form and model construction.

Keys carry their units as suffixes (``_K``, ``_Pa``, ``_m``, ``_days``,
``_md``); everything is converted to SI on load. A scenario round-trips
through :meth:`Scenario.to_dict` unchanged, and :meth:`Scenario.digest`
hashes the canonical form together with the contents of referenced files.
"""

import copy
import hashlib
import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from . import thermo
from .dae_sim import SimOptions
from .flash import pt_flash
from .fluid_props import RelPermSpec, ViscositySpec
from .grid import MILLIDARCY, StructuredGrid, load_permeability
from .reservoir_model import ReservoirModel, SurroundingsSpec, WellSpec, stock_tank_factor

DAY = 86400.0


class ScenarioError(ValueError):
    """Invalid scenario; ``code`` is a stable machine-readable identifier."""

    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


DEFAULTS = {
    "name": "unnamed",
    "mode": "thermal",
    "grid": {"nx": 1, "ny": 1, "nz": 1, "dx_m": 10.0, "dy_m": 10.0, "dz_m": 10.0, "top_m": 1000.0,
             "permeability_md": 100.0, "permeability_file": None},
    "rock": {"phi": 0.25, "cr_per_Pa": 0.0, "cp_J_per_kgK": 920.0, "rho_kg_per_m3": 2650.0,
             "kT_W_per_mK": 2.5},
    "components": {"names": ["methane", "ethane", "propane", "n-heptane", "h2s"], "kij": None,
                   "overrides": {}},
    "relperm": {},
    "viscosity": {},
    "wells": [],
    "initial": {"T_K": 323.15, "P_Pa": 1.0e7, "composition": None, "Sw": 0.2},
    "horizon": {"t0_days": 0.0, "tf_days": 1095.0, "intervals": 36},
    "surroundings": {"T_K": 323.15, "kT_rs_W_per_K": 0.0},
    "simulation": {},
    "optimizer": {},
}

WELL_DEFAULTS = {"name": None, "kind": None, "i": 0, "j": 0, "k": 0, "WI_m3": None,
                 "bhp_lo_Pa": None, "bhp_hi_Pa": None, "T_inj_K": None, "rw_m": 0.1, "skin": 0.0}

SIM_KEYS = {"newton_tol", "max_newton", "dt_init_days", "dt_min_s", "dt_max_days", "grow", "shrink",
            "linear_solver", "gmres_tol", "gmres_restart", "gmres_maxiter"}
OPT_KEYS = {"max_iter", "pg_tol", "f_rtol", "memory", "armijo_c", "max_backtracks", "init_step_MPa"}


def _merge(default, given, where):
    out = copy.deepcopy(default)
    for k, v in given.items():
        if k not in default:
            raise ScenarioError("UNKNOWN_FIELD", f"unknown field '{where}{k}'")
        if isinstance(default[k], dict) and default[k] and isinstance(v, dict):
            out[k] = _merge(default[k], v, f"{where}{k}.")
        else:
            out[k] = v
    return out


def _num(value, where, lo=None, hi=None, strict_lo=False, integer=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ScenarioError("BAD_VALUE", f"{where} must be a number")
    if integer and int(value) != value:
        raise ScenarioError("BAD_VALUE", f"{where} must be an integer")
    if not math.isfinite(value):
        raise ScenarioError("BAD_VALUE", f"{where} must be finite")
    if lo is not None and (value < lo or (strict_lo and value == lo)):
        raise ScenarioError("BAD_VALUE", f"{where} must be {'>' if strict_lo else '>='} {lo}")
    if hi is not None and value > hi:
        raise ScenarioError("BAD_VALUE", f"{where} must be <= {hi}")
    return int(value) if integer else float(value)


@dataclass
class Scenario:
    data: dict
    base_dir: Path

    # ------------------------------------------------------------------
    # construction
    # ------------------------------------------------------------------
    @classmethod
    def from_dict(cls, raw, base_dir="."):
        if not isinstance(raw, dict):
            raise ScenarioError("BAD_VALUE", "scenario must be a JSON object")
        data = _merge(DEFAULTS, raw, "")
        data["wells"] = [_merge(WELL_DEFAULTS, w, f"wells[{i}].") for i, w in enumerate(raw.get("wells", []))]
        sc = cls(data, Path(base_dir))
        sc.validate()
        return sc

    @classmethod
    def load(cls, path):
        path = Path(path)
        if not path.is_file():
            raise ScenarioError("CONFIG_NOT_FOUND", f"scenario file not found: {path}")
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ScenarioError("CONFIG_PARSE_ERROR", f"{path}: {exc}") from exc
        return cls.from_dict(raw, path.parent)

    def to_dict(self):
        return copy.deepcopy(self.data)

    def dumps(self):
        return json.dumps(self.data, indent=2, sort_keys=True) + "\n"

    def save(self, path):
        Path(path).write_text(self.dumps())

    def with_mode(self, mode):
        d = self.to_dict()
        d["mode"] = mode
        return Scenario.from_dict(d, self.base_dir)

    def digest(self):
        """SHA-256 of the canonical form plus referenced file contents."""
        h = hashlib.sha256(json.dumps(self.data, sort_keys=True, separators=(",", ":")).encode())
        pf = self.permeability_path()
        if pf is not None:
            h.update(pf.read_bytes())
        return h.hexdigest()

    # ------------------------------------------------------------------
    # validation
    # ------------------------------------------------------------------
    def permeability_path(self):
        ref = self.data["grid"]["permeability_file"]
        if ref is None:
            return None
        p = Path(ref)
        if not p.is_absolute():
            p = self.base_dir / p
            if not p.is_file():
                packaged = resources.files("thermoflood").joinpath("data", ref)
                if packaged.is_file():
                    p = Path(str(packaged))
        return p

    def validate(self):
        d = self.data
        if d["mode"] not in ("thermal", "isothermal"):
            raise ScenarioError("BAD_VALUE", "mode must be 'thermal' or 'isothermal'")
        g = d["grid"]
        for k in ("nx", "ny", "nz"):
            _num(g[k], f"grid.{k}", 1, integer=True)
        for k in ("dx_m", "dy_m", "dz_m"):
            _num(g[k], f"grid.{k}", 0, strict_lo=True)
        _num(g["top_m"], "grid.top_m")
        if g["permeability_file"] is not None:
            pf = self.permeability_path()
            if not pf.is_file():
                raise ScenarioError("CONFIG_NOT_FOUND", f"permeability file not found: {pf}")
        else:
            perm = np.asarray(g["permeability_md"], float)
            if np.any(perm <= 0):
                raise ScenarioError("BAD_VALUE", "grid.permeability_md must be positive")
        r = d["rock"]
        _num(r["phi"], "rock.phi", 0, 1, strict_lo=True)
        _num(r["cr_per_Pa"], "rock.cr_per_Pa", 0)
        _num(r["cp_J_per_kgK"], "rock.cp_J_per_kgK", 0, strict_lo=True)
        _num(r["rho_kg_per_m3"], "rock.rho_kg_per_m3", 0, strict_lo=True)
        _num(r["kT_W_per_mK"], "rock.kT_W_per_mK", 0)
        names = d["components"]["names"]
        db = thermo.component_database()
        if not names:
            raise ScenarioError("BAD_VALUE", "components.names must be nonempty")
        for n in names:
            if n not in db and n not in d["components"]["overrides"]:
                raise ScenarioError("BAD_VALUE", f"unknown component '{n}'")
        kij = d["components"]["kij"]
        if kij is not None:
            k = np.asarray(kij, float)
            if k.shape != (len(names), len(names)) or not np.allclose(k, k.T) or np.any(np.diag(k) != 0):
                raise ScenarioError("BAD_VALUE", "components.kij must be symmetric with zero diagonal")
        try:
            RelPermSpec(**d["relperm"])
            ViscositySpec(**d["viscosity"])
        except (TypeError, ValueError) as exc:
            raise ScenarioError("BAD_VALUE", str(exc)) from exc
        ini = d["initial"]
        _num(ini["T_K"], "initial.T_K", 0, strict_lo=True)
        _num(ini["P_Pa"], "initial.P_Pa", 0, strict_lo=True)
        _num(ini["Sw"], "initial.Sw", 0, 1, strict_lo=True)
        comp = ini["composition"]
        if comp is None or len(comp) != len(names) or np.any(np.asarray(comp, float) < 0) \
                or float(np.sum(comp)) <= 0:
            raise ScenarioError("BAD_VALUE", "initial.composition needs one nonnegative entry per component")
        hz = d["horizon"]
        _num(hz["t0_days"], "horizon.t0_days")
        _num(hz["tf_days"], "horizon.tf_days", hz["t0_days"])
        _num(hz["intervals"], "horizon.intervals", 1, integer=True)
        s = d["surroundings"]
        _num(s["T_K"], "surroundings.T_K", 0, strict_lo=True)
        _num(s["kT_rs_W_per_K"], "surroundings.kT_rs_W_per_K", 0)
        unknown = set(d["simulation"]) - SIM_KEYS
        if unknown:
            raise ScenarioError("UNKNOWN_FIELD", f"unknown simulation option(s) {sorted(unknown)}")
        unknown = set(d["optimizer"]) - OPT_KEYS
        if unknown:
            raise ScenarioError("UNKNOWN_FIELD", f"unknown optimizer option(s) {sorted(unknown)}")
        try:
            self.sim_options()
        except (TypeError, ValueError) as exc:
            raise ScenarioError("BAD_VALUE", f"simulation: {exc}") from exc
        seen = set()
        for i, w in enumerate(d["wells"]):
            where = f"wells[{i}]"
            if not w["name"] or w["name"] in seen:
                raise ScenarioError("BAD_VALUE", f"{where}.name must be unique and nonempty")
            seen.add(w["name"])
            if w["kind"] not in ("injector", "producer"):
                raise ScenarioError("BAD_VALUE", f"{where}.kind must be injector or producer")
            for ax, n in (("i", g["nx"]), ("j", g["ny"]), ("k", g["nz"])):
                _num(w[ax], f"{where}.{ax}", 0, n - 1, integer=True)
            lo = _num(w["bhp_lo_Pa"], f"{where}.bhp_lo_Pa", 0, strict_lo=True)
            hi = _num(w["bhp_hi_Pa"], f"{where}.bhp_hi_Pa", lo)
            del hi
            if w["WI_m3"] is not None:
                _num(w["WI_m3"], f"{where}.WI_m3", 0)
            if w["kind"] == "injector":
                _num(w["T_inj_K"], f"{where}.T_inj_K", 0, strict_lo=True)

    # ------------------------------------------------------------------
    # accessors
    # ------------------------------------------------------------------
    @property
    def mode(self):
        return self.data["mode"]

    @property
    def name(self):
        return self.data["name"]

    def sim_options(self):
        s = dict(self.data["simulation"])
        kw = {}
        for k, v in s.items():
            if k == "dt_init_days":
                kw["dt_init"] = v * DAY
            elif k == "dt_max_days":
                kw["dt_max"] = v * DAY
            elif k == "dt_min_s":
                kw["dt_min"] = v
            else:
                kw[k] = v
        return SimOptions(**kw)

    def optimizer_options(self):
        return dict(self.data["optimizer"])

    def time_grid(self):
        hz = self.data["horizon"]
        return np.linspace(hz["t0_days"], hz["tf_days"], hz["intervals"] + 1) * DAY

    def build_grid(self):
        g = self.data["grid"]
        n = g["nx"] * g["ny"] * g["nz"]
        if g["permeability_file"] is not None:
            grid0 = StructuredGrid(g["nx"], g["ny"], g["nz"], g["dx_m"], g["dy_m"], g["dz_m"])
            perm = load_permeability(self.permeability_path(), grid0)
        else:
            perm = np.broadcast_to(np.asarray(g["permeability_md"], float) * MILLIDARCY, (n,))
        return StructuredGrid(g["nx"], g["ny"], g["nz"], g["dx_m"], g["dy_m"], g["dz_m"], perm=perm,
                              kT=self.data["rock"]["kT_W_per_mK"], top=g["top_m"])

    def build_fluid(self):
        c = self.data["components"]
        comps = [thermo.load_component(n, c["overrides"].get(n)) if n in thermo.component_database()
                 else thermo.ComponentSpec(name=n, **c["overrides"][n]) for n in c["names"]]
        return thermo.MixtureSpec(comps, thermo.load_component("water"), c["kij"])

    def build_rock(self):
        r = self.data["rock"]
        return thermo.RockSpec(phi=r["phi"], cr=r["cr_per_Pa"], cp_rock=r["cp_J_per_kgK"],
                               rho_rock=r["rho_kg_per_m3"], kT_rock=r["kT_W_per_mK"])

    def build_wells(self, grid):
        wells = []
        for w in self.data["wells"]:
            cell = int(grid.index(w["i"], w["j"], w["k"]))
            WI = w["WI_m3"]
            if WI is None:
                WI = peaceman_wi(grid, cell, w["rw_m"], w["skin"])
            wells.append(WellSpec(w["name"], w["kind"], cell, WI, w["bhp_lo_Pa"], w["bhp_hi_Pa"],
                                  w["T_inj_K"]))
        return wells

    def build(self, mode=None):
        """Model, consistent initial state and stock-tank factor for this scenario."""
        sc = self if mode is None or mode == self.mode else self.with_mode(mode)
        grid = sc.build_grid()
        fluid = sc.build_fluid()
        rock = sc.build_rock()
        ini = sc.data["initial"]
        sur = sc.data["surroundings"]
        model = ReservoirModel(grid, fluid, rock, RelPermSpec(**sc.data["relperm"]),
                               ViscositySpec(**sc.data["viscosity"]), sc.build_wells(grid), sc.mode,
                               SurroundingsSpec(sur["T_K"], sur["kT_rs_W_per_K"]),
                               T_iso=ini["T_K"])
        x0, y0, z0 = model.initial_state(ini["T_K"], ini["P_Pa"], ini["composition"], ini["Sw"])
        _, x_oil, _, _ = pt_flash(fluid.hydrocarbon, ini["T_K"], ini["P_Pa"], np.asarray(ini["composition"], float))
        c_sto = stock_tank_factor(fluid, x_oil)
        return Built(sc, model, x0, y0, z0, sc.time_grid(), c_sto)

    def bounds(self):
        lo = np.array([w["bhp_lo_Pa"] for w in self.data["wells"]], float)
        hi = np.array([w["bhp_hi_Pa"] for w in self.data["wells"]], float)
        return lo, hi

    def midpoint_controls(self):
        lo, hi = self.bounds()
        N = self.data["horizon"]["intervals"]
        return np.repeat((0.5 * (lo + hi))[:, None], N, 1)


@dataclass
class Built:
    scenario: Scenario
    model: ReservoirModel
    x0: np.ndarray
    y0: np.ndarray
    z0: np.ndarray
    t_grid: np.ndarray
    c_sto: float


def peaceman_wi(grid, cell, rw=0.1, skin=0.0):
    """Peaceman well index (m3) of a vertical well in an isotropic-in-plane cell."""
    kx, ky = grid.perm[cell, 0], grid.perm[cell, 1]
    dx, dy, dz = grid.dx, grid.dy, grid.dz
    ro = 0.28 * math.sqrt(math.sqrt(ky / kx) * dx ** 2 + math.sqrt(kx / ky) * dy ** 2) \
        / ((ky / kx) ** 0.25 + (kx / ky) ** 0.25)
    return 2.0 * math.pi * math.sqrt(kx * ky) * dz / (math.log(ro / rw) + skin)


def channel_field(nx, ny, seed=7, base_md=40.0, channel_md=800.0, tight_md=2.0):
    """Synthetic heterogeneous permeability (mD) with a meandering high-permeability channel.

    The two corners ``(0, ny-1)`` and ``(nx-1, ny-1)`` fall in a tight zone.
    """
    rng = np.random.default_rng(seed)
    i, j = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    logk = np.log(base_md) + 0.35 * rng.standard_normal((nx, ny))
    centre = 0.5 * (ny - 1) + 0.25 * ny * np.sin(2.0 * np.pi * i / nx)
    dist = np.abs(j - centre)
    logk += (np.log(channel_md) - np.log(base_md)) * np.exp(-(dist / 1.3) ** 2)
    tight = j >= ny - 3
    logk = np.where(tight, np.log(tight_md) + 0.2 * rng.standard_normal((nx, ny)), logk)
    # cell index runs fastest in x, so flatten in Fortran order
    return np.exp(logk).ravel(order="F")


def shipped_scenario(name):
    """Path of a scenario bundled with the package (e.g. ``"waterflood_11x11_thermal"``)."""
    p = resources.files("thermoflood").joinpath("data", f"{name}.json")
    if not p.is_file():
        raise ScenarioError("CONFIG_NOT_FOUND", f"no bundled scenario '{name}'")
    return Path(str(p))
