import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from thermoflood import kernels
from thermoflood._accel import numba as numba_module


def _with_backend(monkeypatch, flag, fn):
    monkeypatch.setenv("THERMOFLOOD_NUMBA", flag)
    return fn()


def _random_cubics(rng, n):
    # build cubics from known roots so some have one and some three real roots
    r = rng.uniform(0.01, 2.0, size=(n, 3))
    single = rng.random(n) < 0.4
    r[single, 1] = r[single, 0]  # placeholder, replaced with a complex pair below
    c2 = -(r[:, 0] + r[:, 1] + r[:, 2])
    c1 = r[:, 0] * r[:, 1] + r[:, 0] * r[:, 2] + r[:, 1] * r[:, 2]
    c0 = -r[:, 0] * r[:, 1] * r[:, 2]
    # complex pair a +- bi with real root r0
    a, b = rng.uniform(0.1, 1.0, n), rng.uniform(0.1, 1.0, n)
    r0 = r[:, 0]
    c2 = np.where(single, -(r0 + 2 * a), c2)
    c1 = np.where(single, 2 * a * r0 + a * a + b * b, c1)
    c0 = np.where(single, -r0 * (a * a + b * b), c0)
    return c2, c1, c0, np.full(n, 1e-3)


@pytest.mark.skipif(numba_module is None, reason="numba not installed")
@pytest.mark.parametrize("liquid", [True, False])
def test_cubic_backends_agree(monkeypatch, liquid):
    rng = np.random.default_rng(0)
    c2, c1, c0, bmin = _random_cubics(rng, 500)
    zn, okn = _with_backend(monkeypatch, "1", lambda: kernels.cubic_root(c2, c1, c0, bmin, liquid))
    zp, okp = _with_backend(monkeypatch, "0", lambda: kernels.cubic_root(c2, c1, c0, bmin, liquid))
    np.testing.assert_array_equal(okn, okp)
    np.testing.assert_allclose(zn, zp, rtol=1e-12)


@settings(max_examples=60, deadline=None)
@given(roots=st.lists(st.floats(0.05, 3.0), min_size=3, max_size=3, unique=True))
def test_cubic_picks_extreme_roots(roots):
    r = np.sort(roots)
    c2 = -r.sum()
    c1 = r[0] * r[1] + r[0] * r[2] + r[1] * r[2]
    c0 = -r.prod()
    zl, okl = kernels.cubic_root(c2, c1, c0, 0.0, True)
    zv, okv = kernels.cubic_root(c2, c1, c0, 0.0, False)
    assert okl and okv
    assert zl == pytest.approx(r[0], rel=1e-8, abs=1e-10)
    assert zv == pytest.approx(r[2], rel=1e-8, abs=1e-10)


def test_cubic_no_admissible_root():
    # single real root 0.5 below bmin = 1
    z, ok = kernels.cubic_root(-(0.5 + 2 * 0.2), 2 * 0.2 * 0.5 + 0.2 ** 2 + 0.3 ** 2,
                               -0.5 * (0.2 ** 2 + 0.3 ** 2), 1.0, False)
    assert not ok


def _block_laplacian(n, bs, rng):
    """Block pentadiagonal 2-D pattern, diagonally dominant."""
    side = int(np.sqrt(n))
    rows, cols = [], []
    for c in range(n):
        i, j = c % side, c // side
        nb = [c] + [d for d, ok in ((c - 1, i > 0), (c + 1, i < side - 1),
                                     (c - side, j > 0), (c + side, j < side - 1)) if ok]
        for d in sorted(nb):
            rows.append(c)
            cols.append(d)
    rows, cols = np.array(rows), np.array(cols)
    indptr = np.searchsorted(rows, np.arange(n + 1))
    blocks = rng.normal(size=(len(rows), bs, bs)) * 0.2
    diag = rows == cols
    blocks[diag] += np.eye(bs) * (4.0 + bs)
    return indptr, cols, blocks


@pytest.mark.skipif(numba_module is None, reason="numba not installed")
def test_ilu1_backends_agree(monkeypatch):
    rng = np.random.default_rng(1)
    indptr, indices, blocks = _block_laplacian(25, 4, rng)
    rhs = rng.normal(size=100)

    def run():
        return kernels.BlockILU1(indptr, indices).factor(blocks).solve(rhs)

    a = _with_backend(monkeypatch, "1", run)
    b = _with_backend(monkeypatch, "0", run)
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-14)


def test_ilu1_exact_on_tridiagonal():
    """Level-1 fill is enough for an exact factorization of a block-tridiagonal matrix."""
    rng = np.random.default_rng(2)
    n, bs = 12, 3
    rows = np.concatenate([[i] * len([j for j in (i - 1, i, i + 1) if 0 <= j < n]) for i in range(n)])
    cols = np.concatenate([[j for j in (i - 1, i, i + 1) if 0 <= j < n] for i in range(n)])
    indptr = np.searchsorted(rows, np.arange(n + 1))
    blocks = rng.normal(size=(len(rows), bs, bs))
    blocks[rows == cols] += 6 * np.eye(bs)
    A = sp.bsr_matrix((blocks, cols, indptr), shape=(n * bs, n * bs)).toarray()
    rhs = rng.normal(size=n * bs)
    x = kernels.BlockILU1(indptr, cols).factor(blocks).solve(rhs)
    np.testing.assert_allclose(A @ x, rhs, atol=1e-10)


def test_ilu1_fill_pattern_grows():
    rng = np.random.default_rng(3)
    indptr, indices, _ = _block_laplacian(16, 2, rng)
    ilu = kernels.BlockILU1(indptr, indices)
    assert ilu.nnz_blocks > len(indices)
