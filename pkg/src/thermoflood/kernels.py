"""Hot numerical kernels with a numba path and a pure-numpy fallback.

Two kernel families live here:

* batched cubic-root selection for the Peng-Robinson compressibility factor,
* block ILU(1) factorization and triangular solves on a block-sparse
  (BSR-layout) matrix, used as the GMRES preconditioner.

The public entry points pick the backend through
:func:`thermoflood._accel.numba_enabled`; both backends are kept
numerically equivalent and are compared in ``tests/test_kernels.py``.
"""

import math

import numpy as np

from ._accel import njit, numba_enabled

_TWO_PI_3 = 2.0 * math.pi / 3.0


# --------------------------------------------------------------------------
# cubic roots
# --------------------------------------------------------------------------

def _cubic_numpy(c2, c1, c0, bmin, liquid):
    c2, c1, c0, bmin = np.broadcast_arrays(
        np.asarray(c2, float), np.asarray(c1, float),
        np.asarray(c0, float), np.asarray(bmin, float))
    liquid = np.broadcast_to(np.asarray(liquid, bool), c2.shape)
    p = c1 - c2 * c2 / 3.0
    q = 2.0 * c2 ** 3 / 27.0 - c2 * c1 / 3.0 + c0
    disc = 0.25 * q * q + p ** 3 / 27.0
    shift = c2 / 3.0

    # one real root
    sq = np.sqrt(np.maximum(disc, 0.0))
    a = -np.sign(q) * np.cbrt(np.abs(q) / 2.0 + sq)
    a = np.where(a == 0.0, 1.0e-300, a)
    single = a - p / (3.0 * a) - shift

    # three real roots
    pm = np.minimum(p, -1.0e-300)
    m = 2.0 * np.sqrt(-pm / 3.0)
    with np.errstate(divide="ignore", invalid="ignore"):  # pm * m underflows on the one-root branch
        arg = np.clip(3.0 * q / (pm * m), -1.0, 1.0)
    phi = np.arccos(np.nan_to_num(arg)) / 3.0
    r_hi = m * np.cos(phi) - shift
    r_lo = m * np.cos(phi - 2.0 * _TWO_PI_3) - shift

    three = disc < 0.0
    hi = np.where(three, r_hi, single)
    lo = np.where(three, np.where(r_lo > bmin, r_lo, r_hi), single)
    # the middle root is mechanically unstable and never returned
    z = np.where(liquid, lo, hi)
    for _ in range(3):
        f = ((z + c2) * z + c1) * z + c0
        df = (3.0 * z + 2.0 * c2) * z + c1
        df = np.where(df == 0.0, 1.0, df)
        z = z - f / df
    ok = z > bmin
    return z, ok


@njit
def _cubic_numba(c2, c1, c0, bmin, liquid):
    n = c2.shape[0]
    z = np.empty(n)
    ok = np.empty(n, dtype=np.bool_)
    for i in range(n):
        a2 = c2[i]
        a1 = c1[i]
        a0 = c0[i]
        p = a1 - a2 * a2 / 3.0
        q = 2.0 * a2 ** 3 / 27.0 - a2 * a1 / 3.0 + a0
        disc = 0.25 * q * q + p ** 3 / 27.0
        shift = a2 / 3.0
        if disc >= 0.0:
            s = math.sqrt(disc)
            base = abs(q) / 2.0 + s
            a = math.copysign(base ** (1.0 / 3.0), -q) if base > 0.0 else 0.0
            if a == 0.0:
                a = 1.0e-300
            root = a - p / (3.0 * a) - shift
            hi = root
            lo = root
        else:
            m = 2.0 * math.sqrt(-p / 3.0)
            arg = 3.0 * q / (p * m)
            if arg > 1.0:
                arg = 1.0
            elif arg < -1.0:
                arg = -1.0
            phi = math.acos(arg) / 3.0
            hi = m * math.cos(phi) - shift
            lo = m * math.cos(phi - 2.0 * _TWO_PI_3) - shift
            if lo <= bmin[i]:
                lo = hi
        r = lo if liquid[i] else hi
        for _ in range(3):
            f = ((r + a2) * r + a1) * r + a0
            df = (3.0 * r + 2.0 * a2) * r + a1
            if df != 0.0:
                r = r - f / df
        z[i] = r
        ok[i] = r > bmin[i]
    return z, ok


def cubic_root(c2, c1, c0, bmin, liquid):
    """Select a real root of ``Z**3 + c2 Z**2 + c1 Z + c0`` above ``bmin``.

    ``liquid`` picks the smallest admissible root, otherwise the largest.
    Returns ``(z, ok)``; ``ok`` is False where no root exceeds ``bmin``.
    """
    if numba_enabled():
        shape = np.broadcast(c2, c1, c0, bmin, liquid).shape
        args = [np.ascontiguousarray(np.broadcast_to(np.asarray(v, float), shape)).ravel()
                for v in (c2, c1, c0, bmin)]
        liq = np.ascontiguousarray(np.broadcast_to(np.asarray(liquid, bool), shape)).ravel()
        z, ok = _cubic_numba(args[0], args[1], args[2], args[3], liq)
        return z.reshape(shape), ok.reshape(shape)
    return _cubic_numpy(c2, c1, c0, bmin, liquid)


# --------------------------------------------------------------------------
# block ILU(1)
# --------------------------------------------------------------------------

def ilu1_pattern(indptr, indices):
    """Symbolic level-1 fill pattern of a block-sparse matrix.

    ``indptr``/``indices`` describe the block pattern (CSR over blocks,
    column indices sorted, diagonal present). Returns the extended pattern
    plus a map from original blocks into it.
    """
    nb = len(indptr) - 1
    rows = []
    for i in range(nb):
        lev = {int(j): 0 for j in indices[indptr[i]:indptr[i + 1]]}
        # IKJ elimination with level bookkeeping
        k_done = set()
        while True:
            ks = sorted(k for k in lev if k < i and k not in k_done)
            if not ks:
                break
            k = ks[0]
            k_done.add(k)
            lk = lev[k]
            for j, lkj in rows[k].items():
                if j <= k:
                    continue
                new = lk + lkj + 1
                if new <= 1 and new < lev.get(j, 2):
                    lev[j] = new
        rows.append(lev)
    new_ptr = np.zeros(nb + 1, dtype=np.int64)
    cols = []
    for i, lev in enumerate(rows):
        c = sorted(lev)
        cols.extend(c)
        new_ptr[i + 1] = new_ptr[i] + len(c)
    new_idx = np.asarray(cols, dtype=np.int64)
    diag = np.empty(nb, dtype=np.int64)
    for i in range(nb):
        seg = new_idx[new_ptr[i]:new_ptr[i + 1]]
        diag[i] = new_ptr[i] + int(np.searchsorted(seg, i))
    src = np.empty(len(indices), dtype=np.int64)
    for i in range(nb):
        seg = new_idx[new_ptr[i]:new_ptr[i + 1]]
        for p in range(indptr[i], indptr[i + 1]):
            src[p] = new_ptr[i] + int(np.searchsorted(seg, indices[p]))
    return new_ptr, new_idx, diag, src


def _ilu1_factor_numpy(ptr, idx, diag, lu):
    nb = len(ptr) - 1
    for i in range(nb):
        row_cols = idx[ptr[i]:ptr[i + 1]]
        pos = {int(c): ptr[i] + t for t, c in enumerate(row_cols)}
        for p in range(ptr[i], diag[i]):
            k = int(idx[p])
            lu[p] = lu[p] @ lu[diag[k]]  # lu[diag[k]] stores inv(U_kk)
            for q in range(diag[k] + 1, ptr[k + 1]):
                j = int(idx[q])
                t = pos.get(j)
                if t is not None:
                    lu[t] -= lu[p] @ lu[q]
        lu[diag[i]] = np.linalg.inv(lu[diag[i]])
    return lu


@njit
def _ilu1_factor_numba(ptr, idx, diag, lu):
    nb = ptr.shape[0] - 1
    for i in range(nb):
        for p in range(ptr[i], diag[i]):
            k = idx[p]
            lu[p] = lu[p] @ lu[diag[k]]
            for q in range(diag[k] + 1, ptr[k + 1]):
                j = idx[q]
                # binary search for column j in row i
                lo = ptr[i]
                hi = ptr[i + 1] - 1
                t = -1
                while lo <= hi:
                    mid = (lo + hi) // 2
                    if idx[mid] == j:
                        t = mid
                        break
                    elif idx[mid] < j:
                        lo = mid + 1
                    else:
                        hi = mid - 1
                if t >= 0:
                    lu[t] -= lu[p] @ lu[q]
        lu[diag[i]] = np.linalg.inv(lu[diag[i]])
    return lu


def _ilu1_solve_numpy(ptr, idx, diag, lu, rhs):
    nb = len(ptr) - 1
    bs = lu.shape[1]
    y = rhs.reshape(nb, bs).copy()
    for i in range(nb):
        for p in range(ptr[i], diag[i]):
            y[i] -= lu[p] @ y[idx[p]]
    for i in range(nb - 1, -1, -1):
        for p in range(diag[i] + 1, ptr[i + 1]):
            y[i] -= lu[p] @ y[idx[p]]
        y[i] = lu[diag[i]] @ y[i]
    return y.ravel()


@njit
def _ilu1_solve_numba(ptr, idx, diag, lu, rhs):
    nb = ptr.shape[0] - 1
    bs = lu.shape[1]
    y = rhs.copy().reshape((nb, bs))
    for i in range(nb):
        for p in range(ptr[i], diag[i]):
            y[i] -= lu[p] @ y[idx[p]]
    for i in range(nb - 1, -1, -1):
        for p in range(diag[i] + 1, ptr[i + 1]):
            y[i] -= lu[p] @ y[idx[p]]
        y[i] = lu[diag[i]] @ y[i]
    return y.ravel()


class BlockILU1:
    """Block ILU(1) of a square BSR matrix with square blocks.

    The block pattern (not the scalar one) drives the fill: blocks are the
    per-cell unknown groups, so fill appears between cells two faces apart.
    """

    def __init__(self, indptr, indices):
        self.indptr = np.asarray(indptr, dtype=np.int64)
        self.indices = np.asarray(indices, dtype=np.int64)
        self.ptr, self.idx, self.diag, self.src = ilu1_pattern(self.indptr, self.indices)
        self.lu = None

    @property
    def nnz_blocks(self):
        return len(self.idx)

    def factor(self, blocks):
        blocks = np.asarray(blocks, float)
        bs = blocks.shape[1]
        lu = np.zeros((len(self.idx), bs, bs))
        lu[self.src] = blocks
        if numba_enabled():
            self.lu = _ilu1_factor_numba(self.ptr, self.idx, self.diag, lu)
        else:
            self.lu = _ilu1_factor_numpy(self.ptr, self.idx, self.diag, lu)
        if not np.all(np.isfinite(self.lu)):
            raise np.linalg.LinAlgError("non-finite block ILU factor")
        return self

    def solve(self, rhs):
        rhs = np.ascontiguousarray(rhs, dtype=float)
        if numba_enabled():
            return _ilu1_solve_numba(self.ptr, self.idx, self.diag, self.lu, rhs)
        return _ilu1_solve_numpy(self.ptr, self.idx, self.diag, self.lu, rhs)
