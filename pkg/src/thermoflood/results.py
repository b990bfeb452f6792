"""Plot-ready output files and run-level checks for simulated trajectories."""

import csv
from pathlib import Path

import numpy as np

DAY = 86400.0
WATER_MOLAR_VOLUME_SC = 18.015e-3 / 999.0  # m3/mol of liquid water at surface conditions
GAS_MOLAR_VOLUME_SC = 8.314462618 * 288.15 / 101325.0  # m3/mol, ideal gas at 15 C, 1 atm


def _stack(a, shape):
    return np.asarray(a, float) if len(a) else np.zeros(shape)


def step_sources(traj, model):
    """Net inflow rate of every conserved quantity per accepted step, shape (nsteps, nx).

    Includes well terms and, for thermal runs, heat exchange with the
    surroundings evaluated at the step end state.
    """
    ns, nw = traj.nsteps, model.nwell
    inj = _stack(traj.water_inj, (ns, nw))
    prod = _stack(traj.prod, (ns, nw, 3))
    comp = _stack(traj.prod_comp, (ns, nw, model.nc))
    src = np.zeros((ns, model.nx))
    off = 1 if model.thermal else 0
    src[:, off] = inj.sum(1) - prod[:, :, 0].sum(1)
    src[:, off + 1:] = -comp.sum(1)
    if model.thermal:
        heat = _stack(traj.heat, (ns, nw)).sum(1)
        T = np.array([y[:, 0] for y in traj.y[1:]]).reshape(ns, -1)
        src[:, 0] = heat + (model.kT_rs * (model.surroundings.T_s - T)).sum(1)
    return src


def conservation_errors(traj, model):
    """Relative imbalance ``|sum x_end - sum x_0 - sum dt * sources| / |sum x_0|`` per quantity."""
    x0 = np.asarray(traj.x[0]).sum(0)
    x1 = np.asarray(traj.x[-1]).sum(0)
    dts = np.asarray(traj.dts, float)
    inflow = (dts[:, None] * step_sources(traj, model)).sum(0) if traj.nsteps else 0.0
    scale = np.maximum(np.abs(x0), 1e-300)
    return np.abs(x1 - x0 - inflow) / scale


def cumulative_volumes(traj, c_sto):
    """Cumulative oil (stock-tank m3), injected water, produced water and gas (surface m3)."""
    ns = traj.nsteps
    dts = np.asarray(traj.dts, float)
    nw = len(traj.oil_rate[0]) if ns else 0
    oil = _stack(traj.oil_rate, (ns, nw)).sum(1)
    inj = _stack(traj.water_inj, (ns, nw)).sum(1)
    prod = _stack(traj.prod, (ns, nw, 3)).sum(1)
    cum = lambda q: np.concatenate([[0.0], np.cumsum(dts * q)])  # noqa: E731
    return {
        "t_days": np.asarray(traj.times, float) / DAY,
        "oil_m3": c_sto * cum(oil),
        "water_injected_m3": WATER_MOLAR_VOLUME_SC * cum(inj),
        "water_produced_m3": WATER_MOLAR_VOLUME_SC * cum(prod[:, 0]),
        "gas_produced_m3": GAS_MOLAR_VOLUME_SC * cum(prod[:, 2]),
    }


def write_cumulative_csv(path, traj, c_sto):
    cv = cumulative_volumes(traj, c_sto)
    keys = list(cv)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(keys)
        for row in zip(*(cv[k] for k in keys)):
            wr.writerow([f"{v:.12g}" for v in row])


def write_trajectory_csv(path, traj, model, c_sto, mode_label=None):
    """Per-step time series: BHPs, per-well rates, cumulative volumes and the objective."""
    names = [w.name for w in model.wells]
    cv = cumulative_volumes(traj, c_sto)
    with open(path, "w", newline="") as fh:
        fh.write(f"# mode: {mode_label or model.mode}\n")
        wr = csv.writer(fh)
        head = ["t_days", "interval", "dt_days"]
        for n in names:
            head += [f"{n}_bhp_Pa", f"{n}_oil_m3_per_day", f"{n}_water_inj_mol_per_s",
                     f"{n}_water_prod_mol_per_s", f"{n}_gas_prod_mol_per_s"]
        head += ["cum_oil_m3", "cum_water_injected_m3", "cum_gas_produced_m3", "objective"]
        wr.writerow(head)
        for n in range(traj.nsteps):
            row = [f"{traj.times[n + 1] / DAY:.10g}", traj.interval[n], f"{traj.dts[n] / DAY:.10g}"]
            for i in range(model.nwell):
                row += [f"{traj.u[n][i]:.10g}", f"{c_sto * traj.oil_rate[n][i] * DAY:.10g}",
                        f"{traj.water_inj[n][i]:.10g}", f"{traj.prod[n][i][0]:.10g}",
                        f"{traj.prod[n][i][2]:.10g}"]
            oil = cv["oil_m3"][n + 1]
            row += [f"{oil:.12g}", f"{cv['water_injected_m3'][n + 1]:.12g}",
                    f"{cv['gas_produced_m3'][n + 1]:.12g}", f"{-oil:.12g}"]
            wr.writerow(row)


def snapshot_indices(traj, t_grid):
    """Trajectory indices whose time is a control-interval boundary."""
    times = np.asarray(traj.times, float)
    out = []
    for t in t_grid:
        k = int(np.argmin(np.abs(times - t)))
        if abs(times[k] - t) <= 1e-6 * max(1.0, abs(t)):
            out.append(k)
    return out


def write_field(path, grid, values, label, t_days):
    """One cell field in grid layout: ``ny`` rows of ``nx`` values per layer."""
    v = np.asarray(values, float).reshape(grid.nz, grid.ny, grid.nx)
    with open(path, "w") as fh:
        fh.write(f"# {label} t_days={t_days:.10g} nx={grid.nx} ny={grid.ny} nz={grid.nz}\n")
        for k in range(grid.nz):
            if k:
                fh.write("\n")
            for j in range(grid.ny):
                fh.write(" ".join(f"{x:.8g}" for x in v[k, j]) + "\n")


def write_snapshots(out_dir, traj, model, t_grid):
    """Pressure, temperature, oil and gas saturation at each control boundary reached."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for n, idx in enumerate(snapshot_indices(traj, t_grid)):
        f = model.cell_fields(traj.y[idx], order=2)
        t_days = traj.times[idx] / DAY
        for label, vals in (("P", f.P), ("T", f.T), ("So", f.sat[:, 1]), ("Sg", f.sat[:, 2])):
            p = out / f"snapshot_{n:03d}_{label}.txt"
            write_field(p, model.grid, vals, label, t_days)
            written.append(p)
    return written
