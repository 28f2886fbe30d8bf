"""Control-volume discretization of the fiber operator -d_x^2 + (p + Bx)^2 - d_z^2.

Grid nodes sit at x_i = i * hx (so every p shares one x-lattice and x -> -x
maps nodes onto nodes) and on z-lines that hit z = 0, d1, -d2 exactly.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import reduce
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .model import (
    DOUBLE_LAYER,
    NEUMANN_WINDOW,
    ONE_SIDED,
    GeometryConfig,
    PhysicalConfig,
    catalog_energy_for,
    lower_bound,
)

logger = logging.getLogger(__name__)

INTERIOR, DIRICHLET, NEUMANN, BARRIER, WINDOW = 0, 1, 2, 3, 4
UNKNOWN_CLASSES = (INTERIOR, NEUMANN, WINDOW)
CLASS_NAMES = {INTERIOR: "interior", DIRICHLET: "dirichlet", NEUMANN: "neumann_window",
               BARRIER: "barrier", WINDOW: "window"}

MIN_CELLS = 8


class GridError(ValueError):
    pass


class AssemblyError(RuntimeError):
    pass


@dataclass(frozen=True)
class FiberProblem:
    geometry: GeometryConfig
    physics: PhysicalConfig
    p: float
    e_max: float

    def __post_init__(self):
        if not math.isfinite(self.p):
            raise ValueError("momentum p must be finite")
        floor = lower_bound(self.geometry, self.physics.B)
        if not self.e_max > floor:
            raise ValueError(f"E_max={self.e_max} must exceed the spectral lower bound {floor:.6g}")

    @classmethod
    def for_levels(cls, geometry, physics, p, count) -> "FiberProblem":
        return cls(geometry, physics, float(p), catalog_energy_for(geometry, physics.B, count))

    def at(self, p: float) -> "FiberProblem":
        return FiberProblem(self.geometry, self.physics, float(p), self.e_max)


@dataclass(frozen=True, eq=False)
class GridSpec:
    hx: float
    i_lo: int
    i_hi: int
    z: np.ndarray
    hz1: float
    hz2: float
    n_window: int
    node_class: np.ndarray  # (nx, nz) int8, column i - i_lo, row j

    @property
    def x(self) -> np.ndarray:
        return np.arange(self.i_lo, self.i_hi + 1) * self.hx

    @property
    def x_lo(self) -> float:
        return self.i_lo * self.hx

    @property
    def x_hi(self) -> float:
        return self.i_hi * self.hx

    @property
    def shape(self) -> tuple:
        return self.node_class.shape

    @property
    def n_unknowns(self) -> int:
        return int(np.isin(self.node_class, UNKNOWN_CLASSES).sum())

    def is_mirror_of(self, other: "GridSpec") -> bool:
        return (self.hx == other.hx and self.i_lo == -other.i_hi and self.i_hi == -other.i_lo
                and np.array_equal(self.z, other.z)
                and np.array_equal(self.node_class, other.node_class[::-1]))


@dataclass(frozen=True, eq=False)
class FiberMatrix:
    """Symmetric pencil (A, diag(mdiag)) on the unknown nodes of ``grid``."""

    A: sp.csr_matrix
    mdiag: np.ndarray
    potential: np.ndarray
    index: np.ndarray  # (nx, nz) unknown number or -1
    grid: GridSpec
    problem: FiberProblem
    kdiag: Optional[np.ndarray] = None  # diagonal of the kinetic part alone

    @property
    def dimension(self) -> int:
        return self.A.shape[0]

    @property
    def lower_bound(self) -> float:
        return lower_bound(self.problem.geometry, self.problem.physics.B)

    def node_coords(self) -> tuple:
        ii, jj = np.nonzero(self.index >= 0)
        order = np.argsort(self.index[ii, jj])
        return self.grid.x[ii[order]], self.grid.z[jj[order]]

    def extended_diagonal(self) -> np.ndarray:
        """Diagonal of A rebuilt in extended precision from its kinetic and potential parts."""
        if self.kdiag is None:
            return self.A.diagonal().astype(np.longdouble)
        ii, _ = np.nonzero(self.index >= 0)
        order = np.argsort(self.index[self.index >= 0])
        i = (ii[order] + self.grid.i_lo).astype(np.longdouble)
        B, p = self.problem.physics.B, self.problem.p
        x = i * np.longdouble(self.grid.hx)
        v = (np.longdouble(p) + np.longdouble(B) * x) ** 2
        return self.kdiag.astype(np.longdouble) + v * self.mdiag.astype(np.longdouble)

    def to_grid(self, v: np.ndarray) -> np.ndarray:
        """Scatter a vector on unknowns to a full (nx, nz) array, zero elsewhere."""
        out = np.zeros(self.index.shape, dtype=np.result_type(v, float))
        mask = self.index >= 0
        out[mask] = v[self.index[mask]]
        return out


def _z_cells(geometry: GeometryConfig, resolution: float) -> tuple:
    widths = geometry.widths
    if len({w.scale for w in widths}) == 1:
        # shared scale: one spacing for every layer so z = 0 and commensurate
        # transverse modes are resolved identically
        lcm = reduce(lambda a, b: a * b // math.gcd(a, b), (int(w.ratio.denominator) for w in widths))
        unit = widths[0].scale / lcm
        q = max(1, int(round(unit * resolution)))
        cells = [int(w.ratio * lcm) * q for w in widths]
        if any(Fraction(c) != w.ratio * lcm * q for c, w in zip(cells, widths)):
            raise GridError("width ratio is not integral on the shared lattice")
        h = unit / q
    else:
        cells = [max(1, int(round(w.value * resolution))) for w in widths]
        h = None
    if min(cells) < MIN_CELLS:
        raise GridError(f"resolution {resolution:g} gives {min(cells)} cells across the "
                        f"narrowest layer; at least {MIN_CELLS} are required")
    return tuple(cells), h


def build_grid(problem: FiberProblem, resolution: float, padding: Optional[float] = None,
               margin: float = 0.0, symmetric: bool = False) -> GridSpec:
    """Truncated boundary-conforming grid for one fiber problem.

    ``resolution`` is cells per unit length; ``padding`` (default 6/sqrt(B))
    is added beyond the classical turning point sqrt(E_max + margin)/B and
    around the window edges.
    """
    geometry, B = problem.geometry, problem.physics.B
    if padding is None:
        padding = 6.0 / math.sqrt(B)
    if padding < 0 or margin < 0:
        raise GridError("padding and margin must be non-negative")
    cells, h_shared = _z_cells(geometry, resolution)
    if geometry.kind == NEUMANN_WINDOW:
        hz1 = hz2 = h_shared
        z = np.arange(cells[0] + 1) * hz1
    else:
        n1, n2 = cells
        if h_shared is not None:
            hz1 = hz2 = h_shared
        else:
            hz1, hz2 = geometry.d1.value / n1, geometry.d2.value / n2
        z = np.concatenate([np.arange(-n2, 0) * hz2, [0.0], np.arange(1, n1 + 1) * hz1])

    h_target = min(hz1, hz2)
    a = geometry.a or 0.0
    if a > 0:
        n_window = int(round(a / h_target))
        if n_window < 2:
            raise GridError(f"window half-width a={a:g} spans fewer than 4 nodes at spacing "
                            f"{h_target:.4g}; raise the resolution")
        hx = a / n_window  # x = +-a fall exactly on nodes
    else:
        n_window, hx = 0, h_target

    w = math.sqrt(problem.e_max + margin) / B + padding
    center = -problem.p / B
    x_lo = min(center - w, -a - padding)
    x_hi = max(center + w, a + padding)
    if symmetric:
        x_hi = max(-x_lo, x_hi)
        x_lo = -x_hi
    eps = 1e-9
    i_lo = -int(math.ceil(-x_lo / hx - eps))
    i_hi = int(math.ceil(x_hi / hx - eps))

    i = np.arange(i_lo, i_hi + 1)
    nodes = np.full((len(i), len(z)), INTERIOR, dtype=np.int8)
    nodes[[0, -1], :] = DIRICHLET
    nodes[:, 0] = DIRICHLET
    if geometry.kind == NEUMANN_WINDOW:
        nodes[:, -1] = np.where(np.abs(i) < n_window, NEUMANN, DIRICHLET)
        nodes[[0, -1], -1] = DIRICHLET
    else:
        nodes[:, -1] = DIRICHLET
        j0 = cells[1]
        if geometry.kind == DOUBLE_LAYER:
            open_ = np.abs(i) < n_window
        else:
            open_ = i > 0  # barrier on x <= 0
        nodes[:, j0] = np.where(open_, WINDOW, BARRIER)
        nodes[[0, -1], j0] = DIRICHLET
    return GridSpec(hx, i_lo, i_hi, z, hz1, hz2, n_window, nodes)


def _row_volumes(grid: GridSpec) -> np.ndarray:
    dz = np.diff(grid.z)
    vz = np.zeros(len(grid.z))
    vz[1:-1] = 0.5 * (dz[:-1] + dz[1:])
    vz[-1] = 0.5 * dz[-1]  # only used by Neumann nodes on the top line
    return vz


def assemble(problem: FiberProblem, grid: GridSpec) -> FiberMatrix:
    nodes = grid.node_class
    if not np.all(nodes[[0, -1]] == DIRICHLET):
        raise AssemblyError("truncation columns must be Dirichlet")
    if np.any(np.isin(nodes[:, 0], UNKNOWN_CLASSES)):
        raise AssemblyError("bottom boundary must be Dirichlet")
    top = nodes[:, -1]
    if np.any(np.isin(top, (INTERIOR, WINDOW))):
        raise AssemblyError("top boundary holds an interior node")
    if problem.geometry.kind != NEUMANN_WINDOW and np.any(top == NEUMANN):
        raise AssemblyError("Neumann nodes outside the Neumann-window geometry")
    if np.any(nodes[:, 1:-1] == NEUMANN):
        raise AssemblyError("Neumann node off the top boundary")

    unknown = np.isin(nodes, UNKNOWN_CLASSES)
    index = np.full(nodes.shape, -1, dtype=np.int64)
    index[unknown] = np.arange(int(unknown.sum()))
    n = int(unknown.sum())
    hx = grid.hx
    x = grid.x
    vz = _row_volumes(grid)
    dz = np.diff(grid.z)

    mass2d = hx * np.broadcast_to(vz, nodes.shape)
    diag = np.zeros(nodes.shape)
    rows, cols, vals = [], [], []

    def couple(ia, ib, g):
        both = (ia >= 0) & (ib >= 0)
        rows.append(ia[both]); cols.append(ib[both]); vals.append(-g[both])
        rows.append(ib[both]); cols.append(ia[both]); vals.append(-g[both])

    # x-edges: conductance (row volume)/hx, Neumann rows carry half height
    gx = np.broadcast_to(vz / hx, (nodes.shape[0] - 1, nodes.shape[1])).copy()
    ia, ib = index[:-1, :], index[1:, :]
    diag[:-1, :] += np.where(ia >= 0, gx, 0.0)
    diag[1:, :] += np.where(ib >= 0, gx, 0.0)
    couple(ia, ib, gx)
    # z-edges: conductance hx/dz
    gz = np.broadcast_to(hx / dz, (nodes.shape[0], nodes.shape[1] - 1)).copy()
    ia, ib = index[:, :-1], index[:, 1:]
    diag[:, :-1] += np.where(ia >= 0, gz, 0.0)
    diag[:, 1:] += np.where(ib >= 0, gz, 0.0)
    couple(ia, ib, gz)

    B, p = problem.physics.B, problem.p
    pot = np.broadcast_to(((p + B * x) ** 2)[:, None], nodes.shape)
    potential = pot[unknown]
    mdiag = mass2d[unknown].copy()
    if np.any(mdiag <= 0):
        raise AssemblyError("non-positive control volume")
    dvals = diag[unknown] + potential * mdiag
    order = index[unknown]
    rows.append(order); cols.append(order); vals.append(dvals)
    A = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    A.sum_duplicates()
    kdiag = np.empty(n)
    kdiag[order] = diag[unknown]
    return FiberMatrix(A, mdiag, potential.copy(), index, grid, problem, kdiag)


def mirror_x(matrix: FiberMatrix) -> FiberMatrix:
    """Reflect x -> -x: the pencil of momentum -p on the mirrored grid."""
    problem, grid = matrix.problem, matrix.grid
    if not problem.geometry.mirror_symmetric:
        raise GridError("one-sided barrier is not mirror symmetric; reflect the geometry as well")
    nodes = grid.node_class[::-1].copy()
    mirrored = GridSpec(grid.hx, -grid.i_hi, -grid.i_lo, grid.z, grid.hz1, grid.hz2, grid.n_window, nodes)
    new_index = np.full(nodes.shape, -1, dtype=np.int64)
    unknown = matrix.index[::-1] >= 0
    new_index[unknown] = np.arange(int(unknown.sum()))
    # perm[new] = old
    perm = np.empty(matrix.dimension, dtype=np.int64)
    perm[new_index[unknown]] = matrix.index[::-1][unknown]
    A = matrix.A[perm][:, perm].tocsr()
    A.sort_indices()
    kdiag = None if matrix.kdiag is None else matrix.kdiag[perm]
    return FiberMatrix(A, matrix.mdiag[perm], matrix.potential[perm], new_index, mirrored,
                       problem.at(-problem.p), kdiag)


def dump(matrix: FiberMatrix, prefix: str) -> tuple:
    """Write ``<prefix>_matrix.txt`` (row col value) and ``<prefix>_nodes.csv``."""
    coo = matrix.A.tocoo()
    mpath, npath = f"{prefix}_matrix.txt", f"{prefix}_nodes.csv"
    with open(mpath, "w", newline="\n") as fh:
        fh.write(f"% {matrix.dimension} {matrix.dimension} {coo.nnz}\n")
        for r, c, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{r} {c} {v:.17g}\n")
    x, z = matrix.node_coords()
    with open(npath, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "x", "z", "mass", "class"])
        cls = matrix.grid.node_class[matrix.index >= 0]
        flat_order = matrix.index[matrix.index >= 0]
        names = np.empty(matrix.dimension, dtype=object)
        names[flat_order] = [CLASS_NAMES[int(c)] for c in cls]
        for k in range(matrix.dimension):
            w.writerow([k, f"{x[k]:.17g}", f"{z[k]:.17g}", f"{matrix.mdiag[k]:.17g}", names[k]])
    return mpath, npath
