"""Compare the numba and numpy backends of the hot kernels.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Each kernel is timed with both backends on the same inputs (the numba
time excludes compilation) and the largest difference in results is
reported.
"""

import argparse
import os
import timeit

import numpy as np
import scipy.sparse as sp

from thermoflood import kernels
from thermoflood._accel import numba


def _cubics(n, rng):
    r = np.sort(rng.uniform(0.01, 1.5, (n, 3)), 1)
    c2 = -r.sum(1)
    c1 = r[:, 0] * r[:, 1] + r[:, 0] * r[:, 2] + r[:, 1] * r[:, 2]
    c0 = -r.prod(1)
    return c2, c1, c0, np.full(n, 1e-3), rng.random(n) < 0.5


def _grid_blocks(nx, ny, bs, rng):
    """Diagonally dominant block matrix on a 5-point grid pattern."""
    lap = sp.kronsum(sp.diags([1, 1], [-1, 1], (nx, nx)), sp.diags([1, 1], [-1, 1], (ny, ny)))
    pat = (lap + sp.eye(nx * ny)).tocsr()
    pat.sort_indices()
    blocks = rng.standard_normal((pat.nnz, bs, bs))
    rows = np.repeat(np.arange(nx * ny), np.diff(pat.indptr))
    blocks[rows == pat.indices] += 10.0 * bs * np.eye(bs)
    return pat.indptr, pat.indices, blocks


def _cases(rng):
    c = _cubics(100_000, rng)
    indptr, indices, blocks = _grid_blocks(11, 11, 12, rng)
    rhs = rng.standard_normal((len(indptr) - 1, 12))

    def cubic():
        return kernels.cubic_root(*c)[0]

    def ilu():
        return kernels.BlockILU1(indptr, indices).factor(blocks).solve(rhs)

    return {"cubic_root (1e5 cubics)": cubic, "block ILU(1) factor+solve (121 x 12x12)": ilu}


def run(repeat):
    results = {}
    for flag in ("1", "0"):
        os.environ["THERMOFLOOD_NUMBA"] = flag
        for name, fn in _cases(np.random.default_rng(0)).items():
            out = fn()  # warm-up, includes numba compilation
            t = min(timeit.repeat(fn, number=1, repeat=repeat))
            results.setdefault(name, {})[flag] = (t, out)
    print(f"{'kernel':42s} {'numba [ms]':>11s} {'numpy [ms]':>11s} {'speedup':>8s} {'max diff':>9s}")
    for name, r in results.items():
        (tn, on), (tp, op) = r["1"], r["0"]
        print(f"{name:42s} {1e3 * tn:11.2f} {1e3 * tp:11.2f} {tp / tn:8.1f} {np.max(np.abs(on - op)):9.1e}")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if numba is None:
        print("numba is not installed; only the numpy backend is available")
        return
    run(args.repeat)


if __name__ == "__main__":
    main()
