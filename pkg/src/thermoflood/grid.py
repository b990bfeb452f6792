"""Structured Cartesian grid with two-point geometric and thermal transmissibilities."""

from dataclasses import dataclass, field

import numpy as np

MILLIDARCY = 9.869233e-16  # m2


class DimensionMismatch(ValueError):
    pass


class NonPositivePermeability(ValueError):
    pass


@dataclass
class StructuredGrid:
    """Box of ``nx * ny * nz`` equal cells; cell index ``i + nx*(j + ny*k)``.

    ``perm`` holds the diagonal permeability tensor per cell, shape
    ``(ncell, 3)`` in m2. ``top`` is the depth of the top face (m), depth
    increases with ``k``.
    """

    nx: int
    ny: int
    nz: int
    dx: float
    dy: float
    dz: float
    perm: np.ndarray = None
    kT: np.ndarray = None
    top: float = 0.0
    cell_centers: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if min(self.nx, self.ny, self.nz) < 1 or min(self.dx, self.dy, self.dz) <= 0:
            raise ValueError("grid dimensions must be positive")
        n = self.ncell
        self.perm = _as_tensor(1.0e-13 if self.perm is None else self.perm, n)
        if np.any(self.perm <= 0):
            raise NonPositivePermeability("permeability must be positive")
        kT = 0.0 if self.kT is None else self.kT
        self.kT = np.broadcast_to(np.asarray(kT, float), (n,)).copy()
        if np.any(self.kT < 0):
            raise ValueError("thermal conductivity must be nonnegative")
        i, j, k = self.ijk(np.arange(n))
        self.cell_centers = np.stack([(i + 0.5) * self.dx, (j + 0.5) * self.dy,
                                      self.top + (k + 0.5) * self.dz], axis=-1)

    @property
    def ncell(self):
        return self.nx * self.ny * self.nz

    @property
    def shape(self):
        return (self.nx, self.ny, self.nz)

    @property
    def volumes(self):
        return np.full(self.ncell, self.dx * self.dy * self.dz)

    @property
    def depths(self):
        return self.cell_centers[:, 2]

    def index(self, i, j, k=0):
        return i + self.nx * (j + self.ny * k)

    def ijk(self, c):
        c = np.asarray(c)
        return c % self.nx, (c // self.nx) % self.ny, c // (self.nx * self.ny)

    def face_area(self, axis):
        return (self.dy * self.dz, self.dx * self.dz, self.dx * self.dy)[axis]

    def spacing(self, axis):
        return (self.dx, self.dy, self.dz)[axis]


def _as_tensor(perm, n):
    perm = np.asarray(perm, float)
    if perm.ndim == 0:
        return np.full((n, 3), float(perm))
    if perm.shape == (n,):
        return np.repeat(perm[:, None], 3, axis=1)
    if perm.shape == (n, 3):
        return perm.copy()
    raise DimensionMismatch(f"permeability shape {perm.shape} does not match {n} cells")


@dataclass
class FaceConnection:
    cell_i: int
    cell_j: int
    area: float
    gamma: float  # m3
    gamma_T: float  # W/K
    dz: float


@dataclass
class Connections:
    """Vectorized face list: one entry per interior face, ``i < j``."""

    i: np.ndarray
    j: np.ndarray
    area: np.ndarray
    gamma: np.ndarray
    gamma_T: np.ndarray
    dz: np.ndarray

    def __len__(self):
        return len(self.i)

    def __getitem__(self, f):
        return FaceConnection(int(self.i[f]), int(self.j[f]), float(self.area[f]),
                              float(self.gamma[f]), float(self.gamma_T[f]), float(self.dz[f]))


def _harmonic(a, b):
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a * b / (a + b)
    return np.where((a > 0) & (b > 0), out, 0.0)


def build_connections(grid):
    """Interior faces with harmonic-mean transmissibilities.

    For axis-aligned faces the one-sided transmissibility reduces to
    ``K_axis / (h/2)``; the face value is ``A (1/t_i + 1/t_j)^-1``.
    Boundary faces carry no connection (closed box).
    """
    ii, jj, aa, gg, gt, dzz = [], [], [], [], [], []
    cells = np.arange(grid.ncell)
    ci, cj, ck = grid.ijk(cells)
    counts = (grid.nx, grid.ny, grid.nz)
    coord = (ci, cj, ck)
    for axis in range(3):
        mask = coord[axis] < counts[axis] - 1
        left = cells[mask]
        step = (1, grid.nx, grid.nx * grid.ny)[axis]
        right = left + step
        half = 0.5 * grid.spacing(axis)
        area = grid.face_area(axis)
        ti = grid.perm[left, axis] / half
        tj = grid.perm[right, axis] / half
        hi = grid.kT[left] / half
        hj = grid.kT[right] / half
        ii.append(left)
        jj.append(right)
        aa.append(np.full(len(left), area))
        gg.append(area * _harmonic(ti, tj))
        gt.append(area * _harmonic(hi, hj))
        dzz.append(grid.depths[right] - grid.depths[left])
    cat = np.concatenate
    order = np.lexsort((cat(jj), cat(ii)))
    return Connections(cat(ii)[order], cat(jj)[order], cat(aa)[order], cat(gg)[order],
                       cat(gt)[order], cat(dzz)[order])


def load_permeability(path, grid=None):
    """Read a permeability file: header ``nx ny nz`` then one value per line (mD).

    Returns permeabilities in m2, shape ``(ncell,)``.
    """
    with open(path) as fh:
        tokens = fh.read().split()
    if len(tokens) < 3:
        raise DimensionMismatch("permeability file lacks a 'nx ny nz' header")
    nx, ny, nz = (int(t) for t in tokens[:3])
    values = np.array([float(t) for t in tokens[3:]])
    if values.size != nx * ny * nz:
        raise DimensionMismatch(f"header says {nx * ny * nz} cells, file has {values.size} values")
    if grid is not None and (nx, ny, nz) != grid.shape:
        raise DimensionMismatch(f"file grid {(nx, ny, nz)} does not match {grid.shape}")
    if np.any(values <= 0):
        raise NonPositivePermeability("permeability values must be positive")
    return values * MILLIDARCY


def write_permeability(path, shape, values_md):
    values_md = np.asarray(values_md, float).ravel()
    with open(path, "w") as fh:
        fh.write("{} {} {}\n".format(*shape))
        for v in values_md:
            fh.write(f"{v:.10g}\n")
