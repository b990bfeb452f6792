"""Shared builders for the test suite."""

import numpy as np

from thermoflood import flash, thermo

FEED5 = np.array([0.5, 0.08, 0.07, 0.3, 0.05])
NAMES5 = ["methane", "ethane", "propane", "n-heptane", "h2s"]
BULK = 1000.0  # m3


def mixture(names=NAMES5):
    return thermo.make_mixture(list(names))


def cell_volumes(rock, bulk=BULK):
    V_ref = bulk * (1.0 - rock.phi)
    return bulk, V_ref, bulk - V_ref


def constructed_equilibrium(fluid, rock, T, P, zf, Sw, bulk=BULK, min_split=0.05):
    """Two-phase state at (T, P) filling the pore volume; ``None`` if the feed is not split.

    Returns a dict with the flash specifications (U, V, n_w, n) and the
    true T, P and phase moles.
    """
    eos = fluid.hydrocarbon
    beta, x, y, ok = flash.pt_flash(eos, T, P, zf)
    if not ok or not 0.02 < beta < 0.98 or np.max(np.abs(x - y)) < min_split:
        return None
    V, V_ref, Vp = cell_volumes(rock, bulk)
    vo = thermo.pr_molar_volume(eos, T, P, x, "liquid")
    vg = thermo.pr_molar_volume(eos, T, P, y, "vapor")
    vw = thermo.pr_molar_volume(fluid.aqueous, T, P, np.array([1.0]), "liquid")
    nw = float(Sw * Vp / vw)
    Nh = float((1.0 - Sw) * Vp / ((1.0 - beta) * vo + beta * vg))
    no, ng = (1.0 - beta) * Nh * x, beta * Nh * y
    pr = flash.evaluate_cells(fluid, rock, V_ref, T, P, nw, no, ng, order=2)
    U = float(pr.water.U.value + pr.oil.U.value + pr.gas.U.value + pr.rock["U"].value)
    Vtot = float(pr.water.V.value + pr.oil.V.value + pr.gas.V.value + pr.rock["V"].value)
    return {"T": T, "P": P, "U": U, "V": Vtot, "n_w": nw, "n": no + ng, "n_o": no, "n_g": ng,
            "V_ref": V_ref, "beta": beta}


def random_equilibria(fluid, rock, count, seed=1, T=(310.0, 380.0), P=(6e6, 14e6), feed=FEED5):
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < count:
        Tt = rng.uniform(*T)
        Pt = rng.uniform(*P)
        zf = 0.5 * rng.dirichlet(np.ones(len(feed))) + 0.5 * feed
        st = constructed_equilibrium(fluid, rock, Tt, Pt, zf, rng.uniform(0.1, 0.6))
        if st is not None:
            out.append(st)
    return out


POTENTIALS = ("H", "S", "V", "U", "G", "A")


def random_phase_states(eos, count, seed=0):
    """Random (T, P, n, root) tuples spread over liquid-like and vapor-like conditions."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(count):
        T = rng.uniform(280.0, 450.0)
        P = np.exp(rng.uniform(np.log(1e6), np.log(3e7)))
        n = rng.dirichlet(np.ones(eos.nc)) * rng.uniform(0.5, 50.0)
        out.append((T, P, n, "liquid" if i % 2 else "vapor"))
    return out


def _flat(T, P, n):
    return np.r_[T, P, n]


def scaled_rel_error(approx, exact, w):
    """Entrywise relative error with a floor for entries far below the dominant sensitivity.

    An entry of a derivative array is compared relative to itself unless it
    is smaller than 1e-3 of the largest variable-scaled entry, in which case
    that threshold is used as the denominator.
    """
    if exact.ndim == 1:
        scale = np.abs(w)
    else:
        scale = np.abs(np.outer(w, w))
    M = np.max(np.abs(exact) * scale)
    denom = np.maximum(np.abs(exact), 1e-3 * M / scale)
    return float(np.max(np.abs(approx - exact) / denom))


def derivative_errors(eos, T, P, n, root, h_rel=1e-6):
    """Worst relative FD mismatch of gradients and Hessians over the six potentials."""
    w0 = _flat(T, P, n)

    def props(w, order=2):
        return thermo.phase_props(eos, w[0], w[1], w[2:], root, order=order)

    base = props(w0, order=3)
    d = len(w0)
    G = np.zeros((len(POTENTIALS), d))
    Hs = np.zeros((len(POTENTIALS), d, d))
    for k in range(d):
        h = h_rel * abs(w0[k])
        wp, wm = w0.copy(), w0.copy()
        wp[k] += h
        wm[k] -= h
        pp, pm = props(wp), props(wm)
        for j, name in enumerate(POTENTIALS):
            a, b = getattr(pp, name), getattr(pm, name)
            G[j, k] = np.squeeze(a.value - b.value) / (2 * h)
            Hs[j, :, k] = np.squeeze(a.grad - b.grad) / (2 * h)
    worst = 0.0
    for j, name in enumerate(POTENTIALS):
        ev = getattr(base, name)
        worst = max(worst, scaled_rel_error(G[j], np.squeeze(ev.grad), w0),
                    scaled_rel_error(Hs[j], np.squeeze(ev.hess), w0))
    return worst


def euler_errors(eos, T, P, n, root):
    """Worst relative residual of extensivity and Gibbs-Duhem identities."""
    p = thermo.phase_props(eos, T, P, n, root, order=3)
    p3 = thermo.phase_props(eos, T, P, 3.0 * n, root, order=2)
    worst = 0.0
    for name in POTENTIALS:
        F = float(np.squeeze(getattr(p, name).value))
        Fn = np.squeeze(getattr(p, name).grad)[2:] * n
        # homogeneous of degree one at fixed T, P: sum n_i dF/dn_i = F
        worst = max(worst, abs(Fn.sum() - F) / max(abs(F), np.abs(Fn).sum()))
        F3 = float(np.squeeze(getattr(p3, name).value))
        worst = max(worst, abs(F3 - 3.0 * F) / max(abs(F), np.abs(Fn).sum()))
    Gh = np.squeeze(p.G.hess)
    S = float(np.squeeze(p.S.value))
    V = float(np.squeeze(p.V.value))
    # sum_i n_i dmu_i = -S dT + V dP
    Gnn = Gh[2:, 2:]
    worst = max(worst, np.max(np.abs(Gnn @ n)) / np.max(np.abs(Gnn) * n[None, :]))
    worst = max(worst, abs(Gh[0, 2:] @ n + S) / np.abs(Gh[0, 2:] * n).sum())
    worst = max(worst, abs(Gh[1, 2:] @ n - V) / np.abs(Gh[1, 2:] * n).sum())
    return worst
