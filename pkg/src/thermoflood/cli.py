"""Command-line front end: ``simulate``, ``optimize``, ``flash`` and ``check``."""

import argparse
import json
import logging
import os
import platform
import signal
import sys
import time
from pathlib import Path

import numpy as np
import scipy

from . import __version__, adjoint, dae_sim, flash, optimizer, results
from ._accel import numba, numba_enabled
from .reservoir_model import ModelError
from .scenario import Scenario, ScenarioError, shipped_scenario
from .thermo import NoPhysicalRoot, R

log = logging.getLogger("thermoflood")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_INTERRUPTED = 0, 2, 3, 130


class _Interrupt:
    """SIGINT latch: the first signal asks the run to stop at the next safe point."""

    def __init__(self):
        self.flag = False
        self._old = None

    def __enter__(self):
        def handler(signum, frame):
            if self.flag:
                raise KeyboardInterrupt
            self.flag = True
            log.warning("interrupt received; flushing partial results")
        try:
            self._old = signal.signal(signal.SIGINT, handler)
        except ValueError:  # not in the main thread
            self._old = None
        return self

    def __exit__(self, *exc):
        if self._old is not None:
            signal.signal(signal.SIGINT, self._old)
        return False

    def __call__(self):
        return self.flag


def _error(code, message, exit_code):
    sys.stderr.write(json.dumps({"error": code, "message": str(message)}) + "\n")
    return exit_code


def _load(args):
    path = args.scenario
    if not Path(path).exists() and not path.endswith(".json"):
        try:
            path = shipped_scenario(path)
        except ScenarioError:
            pass
    sc = Scenario.load(path)
    if getattr(args, "mode", None):
        sc = sc.with_mode(args.mode)
    if getattr(args, "linear_solver", None):
        d = sc.to_dict()
        d["simulation"]["linear_solver"] = args.linear_solver
        sc = Scenario.from_dict(d, sc.base_dir)
    return sc


def _versions():
    return {
        "thermoflood": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "numba": getattr(numba, "__version__", None),
        "numba_enabled": numba_enabled(),
    }


def _manifest(out, command, sc, complete, extra):
    data = {
        "command": command,
        "scenario": sc.name,
        "mode": sc.mode,
        "config_sha256": sc.digest(),
        "versions": _versions(),
        "seeds": {},  # every computation is deterministic; no random state is drawn
        "complete": bool(complete),
    }
    data.update(extra)
    (out / "manifest.json").write_text(json.dumps(data, indent=2, sort_keys=True, default=float) + "\n")


def _write_trajectory(out, traj, built):
    model = built.model
    results.write_trajectory_csv(out / "trajectory.csv", traj, model, built.c_sto)
    results.write_cumulative_csv(out / "cumulative.csv", traj, built.c_sto)
    results.write_snapshots(out / "snapshots", traj, model, built.t_grid)


def _set_threads(n):
    if not n:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)
    if numba is not None:
        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def cmd_check(args):
    sc = _load(args)
    built = sc.build()
    nd, na = built.model.equation_counts()
    print(json.dumps({"scenario": sc.name, "mode": sc.mode, "valid": True,
                      "differential_equations": nd, "algebraic_equations": na,
                      "manipulated_inputs": built.model.nwell * (len(built.t_grid) - 1),
                      "config_sha256": sc.digest()}, indent=2))
    return EXIT_OK


def cmd_simulate(args):
    sc = _load(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    built = sc.build()
    model = built.model
    wells = [w.name for w in model.wells]
    N = len(built.t_grid) - 1
    if args.controls:
        try:
            u = optimizer.read_schedule_csv(args.controls, wells, N)
        except FileNotFoundError as exc:
            raise ScenarioError("CONFIG_NOT_FOUND", f"controls file not found: {args.controls}") from exc
        except (ValueError, KeyError) as exc:
            raise ScenarioError("BAD_VALUE", f"controls file: {exc}") from exc
    else:
        u = sc.midpoint_controls()
    sc.save(out / "scenario.json")
    optimizer.write_schedule_csv(out / "controls.csv", u, wells, built.t_grid)
    t0 = time.perf_counter()
    with _Interrupt() as stop:
        traj = dae_sim.simulate(model, u, built.t_grid, built.x0, built.y0, built.z0,
                                options=sc.sim_options(), should_stop=stop)
    _write_trajectory(out, traj, built)
    err = results.conservation_errors(traj, model)
    spec = adjoint.ObjectiveSpec(built.c_sto)
    phi = adjoint.objective(traj, spec) if traj.complete else None
    _manifest(out, "simulate", sc, traj.complete, {
        "kpis": traj.kpis(), "objective": phi, "conservation_max_rel_error": float(np.max(err)),
        "wall_time": time.perf_counter() - t0})
    print(json.dumps({"complete": traj.complete, "objective": phi, "steps": traj.nsteps,
                      "conservation_max_rel_error": float(np.max(err))}))
    return EXIT_OK if traj.complete else EXIT_INTERRUPTED


def cmd_optimize(args):
    sc = _load(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    built = sc.build()
    model = built.model
    wells = [w.name for w in model.wells]
    lo, hi = sc.bounds()
    N = len(built.t_grid) - 1
    opts = optimizer.OptimizerOptions(**sc.optimizer_options())
    if args.max_iter is not None:
        opts.max_iter = args.max_iter
    spec = adjoint.ObjectiveSpec(built.c_sto)
    prob = optimizer.Problem(model, built.t_grid, built.x0, built.y0, built.z0, spec, sc.sim_options())
    sc.save(out / "scenario.json")
    t0 = time.perf_counter()

    def on_iterate(rec, u, traj):
        optimizer.write_schedule_csv(out / "controls.csv", u, wells, built.t_grid)

    with _Interrupt() as stop:
        report = optimizer.optimize(prob, optimizer.ControlVector.midpoint(lo, hi, N), opts,
                                    on_iterate=on_iterate, should_stop=stop)
    complete = report.termination != "interrupted"
    kpi = optimizer.kpi_report(report, model, built.c_sto, sc.name)
    optimizer.write_iterates_csv(out / "iterates.csv", report)
    optimizer.write_schedule_csv(out / "controls.csv", report.controls, wells, built.t_grid)
    (out / "kpi.json").write_text(json.dumps(kpi, indent=2, sort_keys=True) + "\n")
    (out / "summary.txt").write_text(_summary(kpi, report, wells, lo, hi))
    _write_trajectory(out, report.trajectory, built)
    results.write_cumulative_csv(out / "cumulative_initial.csv", report.initial_trajectory, built.c_sto)
    _manifest(out, "optimize", sc, complete, {"wall_time": time.perf_counter() - t0,
                                              "termination": report.termination})
    print(json.dumps({"complete": complete, "phi_initial": report.phi0, "phi_final": report.phi,
                      "iterations": report.iterations, "termination": report.termination}))
    return EXIT_OK if complete else EXIT_INTERRUPTED


def _summary(kpi, report, wells, lo, hi):
    lines = [f"scenario            {kpi['scenario']} ({kpi['mode']})",
             f"manipulated inputs  {kpi['manipulated_inputs']}",
             f"differential eqs    {kpi['differential_equations']}",
             f"algebraic eqs       {kpi['algebraic_equations']}",
             f"iterations          {kpi['iterations']}",
             f"simulations         {kpi['simulations']}",
             f"gradient evals      {kpi['gradient_evaluations']}",
             f"Newton per step     {kpi['newton_iterations_per_step']:.3f}",
             f"cumulative oil      {kpi['cumulative_oil_initial_m3']:.6g} -> "
             f"{kpi['cumulative_oil_final_m3']:.6g} m3 ({kpi['improvement_percent']:+.3f} %)",
             f"termination         {kpi['termination']}", "",
             "fraction of intervals within 5% of a bound (lower / upper):"]
    flo, fhi = optimizer.bound_fractions(report.controls, lo, hi)
    for name, a, b in zip(wells, flo, fhi):
        lines.append(f"  {name:<10s} {a:6.3f} / {b:6.3f}")
    return "\n".join(lines) + "\n"


def cmd_flash(args):
    sc = _load(args)
    d = sc.to_dict()
    d["grid"].update(nx=1, ny=1, nz=1, permeability_file=None)
    d["wells"] = []
    if args.T_K is not None:
        d["initial"]["T_K"] = args.T_K
    if args.P_Pa is not None:
        d["initial"]["P_Pa"] = args.P_Pa
    cell = Scenario.from_dict(d, sc.base_dir)
    built = cell.build()
    m = built.model
    x = built.x0[0]
    V = float(np.atleast_1d(m.V_bulk)[0])
    V_ref = float(np.atleast_1d(m.V_ref)[0])
    if cell.mode == "thermal":
        fs = flash.FlashSpecUV(x[0], V, x[1], x[2:], m.rock, V_ref)
        res = flash.solve_uv(m.fluid, fs)
    else:
        fs = flash.FlashSpecVT(m.T_iso, V, x[0], x[1:], m.rock, V_ref)
        res = flash.solve_vt(m.fluid, fs)
    gap = flash.chemical_potential_gap(m.fluid, res)
    print(json.dumps({
        "mode": res.mode, "T_K": res.T, "P_Pa": res.P, "water_moles": res.n_w_phase,
        "oil_moles": list(map(float, res.n_o)), "gas_moles": list(map(float, res.n_g)),
        "kkt_residual": res.kkt_residual_norm, "iterations": res.iterations,
        "max_mu_gap_over_RT": float(gap / (R * res.T))}, indent=2))
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="thermoflood", description=__doc__)
    p.add_argument("--log-level", default="WARNING",
                   choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    p.add_argument("--threads", type=int, default=None, help="worker threads for numeric kernels")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out=True):
        sp.add_argument("scenario", help="scenario JSON file or the name of a bundled scenario")
        sp.add_argument("--mode", choices=["thermal", "isothermal"], help="override the scenario mode")
        sp.add_argument("--linear-solver", choices=["direct", "gmres_ilu1"])
        if out:
            sp.add_argument("--out", default="out", help="output directory")

    s = sub.add_parser("simulate", help="run one simulation")
    common(s)
    s.add_argument("--controls", help="BHP schedule CSV (well, interval, bhp_Pa); default mid-bound")
    s.set_defaults(func=cmd_simulate)
    o = sub.add_parser("optimize", help="optimize the BHP schedule for cumulative oil")
    common(o)
    o.add_argument("--max-iter", type=int, default=None)
    o.set_defaults(func=cmd_optimize)
    f = sub.add_parser("flash", help="single-cell flash at the scenario's initial state")
    common(f, out=False)
    f.add_argument("--T-K", type=float, default=None, dest="T_K")
    f.add_argument("--P-Pa", type=float, default=None, dest="P_Pa")
    f.set_defaults(func=cmd_flash)
    c = sub.add_parser("check", help="validate a scenario and print its dimensions")
    common(c, out=False)
    c.set_defaults(func=cmd_check)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    _set_threads(args.threads)
    try:
        return args.func(args)
    except ScenarioError as exc:
        return _error(exc.code, exc, EXIT_CONFIG)
    except (dae_sim.SimulationError, flash.FlashError, ModelError, NoPhysicalRoot) as exc:
        return _error("NUMERICAL_FAILURE", exc, EXIT_NUMERICAL)


if __name__ == "__main__":
    sys.exit(main())
