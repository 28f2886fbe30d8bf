"""Momentum sweeps: dispersion tables, band edges, flat bands, gaps and currents."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from joblib import Parallel, delayed

from .convergence import error_estimate
from .discretize import FiberMatrix, FiberProblem, GridError, assemble, build_grid
from .eigensolve import EigenRequest, EigenResult, EigensolverError, smallest_eigenpairs
from .model import (
    ONE_SIDED,
    GeometryConfig,
    LevelCatalog,
    PhysicalConfig,
    catalog_energy_for,
    commensurate_pairs,
    flat_band_value,
    lower_catalog,
    merged_free_levels,
    upper_catalog,
)

logger = logging.getLogger(__name__)

FLAT_RTOL = 1e-7
EDGE_FACTOR = 5.0
GUARD = 2
FD_STEP = 1e-3


class SweepError(RuntimeError):
    """A fiber in a sweep failed; ``partial`` is (p, values, residuals) with NaN rows for failures."""

    def __init__(self, message, p=None, k=None, partial=None):
        super().__init__(message)
        self.p, self.k, self.partial = p, k, partial


@dataclass(frozen=True, eq=False)
class MomentumGrid:
    p: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        if p.ndim != 1 or len(p) == 0:
            raise ValueError("momentum grid must be a non-empty 1D array")
        if np.any(np.diff(p) <= 0):
            raise ValueError("momentum grid must be strictly increasing")
        object.__setattr__(self, "p", p)

    def __len__(self):
        return len(self.p)

    @classmethod
    def symmetric(cls, p_max: float, count: int = 41) -> "MomentumGrid":
        if count % 2 == 0:
            raise ValueError("a symmetric grid containing 0 needs an odd count")
        half = np.linspace(0.0, p_max, count // 2 + 1)[1:]
        return cls(np.concatenate([-half[::-1], [0.0], half]), {"p_max": p_max})

    @classmethod
    def default(cls, geometry: GeometryConfig, physics: PhysicalConfig, levels: int,
                count: int = 41) -> "MomentumGrid":
        """Symmetric grid spanning +-(B a + 8 sqrt(E_max)).

        E_max is the catalog value of the top requested level; the span puts
        the end columns well past the window edge for every computed level.
        """
        e = catalog_energy_for(geometry, physics.B, levels)
        p_max = physics.B * (geometry.a or 0.0) + 8.0 * math.sqrt(e)
        return cls.symmetric(p_max, count)

    @property
    def contains_zero(self) -> bool:
        return bool(np.any(self.p == 0.0))


@dataclass
class FiberSolution:
    matrix: FiberMatrix
    result: EigenResult

    @property
    def values(self) -> np.ndarray:
        return self.result.values

    @property
    def p(self) -> float:
        return self.matrix.problem.p

    def grid_vector(self, k: int) -> np.ndarray:
        """Eigenvector k (1-based) on the full (nx, nz) grid, zero on Dirichlet nodes."""
        return self.matrix.to_grid(self.result.vectors[:, k - 1])


def solve_fiber(geometry: GeometryConfig, physics: PhysicalConfig, p: float, count: int,
                resolution: float, padding: Optional[float] = None, tol: float = 1e-10,
                grid=None, e_max: Optional[float] = None, seed: int = 0,
                max_iter: Optional[int] = None) -> FiberSolution:
    """Assemble and solve one fiber H(p), returning the ``count`` lowest pairs."""
    if e_max is None:
        e_max = catalog_energy_for(geometry, physics.B, count)
    problem = FiberProblem(geometry, physics, float(p), e_max)
    if grid is None:
        grid = build_grid(problem, resolution, padding)
    matrix = assemble(problem, grid)
    want = min(count + GUARD, int(matrix.dimension // 4))
    if want < count:
        raise GridError(f"grid of {matrix.dimension} unknowns too small for {count} levels")
    res = smallest_eigenpairs(matrix, EigenRequest(count=want, tol=tol, seed=seed, max_iter=max_iter))
    res = EigenResult(res.values[:count], res.vectors[:, :count], res.residuals[:count], res.stats)
    return FiberSolution(matrix, res)


@dataclass(eq=False)
class DispersionTable:
    geometry: GeometryConfig
    physics: PhysicalConfig
    p: np.ndarray
    values: np.ndarray  # (len(p), K)
    residuals: np.ndarray
    resolution: float
    padding: Optional[float] = None
    tol: float = 1e-10
    errors: Optional[np.ndarray] = None
    fibers: Optional[list] = None

    @property
    def levels(self) -> int:
        return self.values.shape[1]

    def band(self, k: int) -> np.ndarray:
        return self.values[:, k - 1]

    def column(self, p: float) -> int:
        j = int(np.argmin(np.abs(self.p - p)))
        if not math.isclose(self.p[j], p, rel_tol=0, abs_tol=1e-12):
            raise KeyError(f"p={p} is not on the table grid")
        return j

    def error_bar(self) -> np.ndarray:
        """Error estimate, or solver tolerance where no estimate is available."""
        floor = self.tol * (np.abs(self.values) + 1.0)
        if self.errors is None:
            return floor
        return np.maximum(self.errors, floor)

    def fiber(self, p: float) -> FiberSolution:
        """The solved fiber at grid momentum ``p`` (recomputed if vectors were not kept)."""
        j = self.column(p)
        if self.fibers is not None:
            return self.fibers[j]
        return solve_fiber(self.geometry, self.physics, self.p[j], self.levels, self.resolution,
                           self.padding, self.tol)

    def rows(self):
        for j, p in enumerate(self.p):
            for k in range(self.levels):
                yield float(p), k + 1, float(self.values[j, k]), float(self.residuals[j, k])


def _sweep_values(geometry, physics, p_values, K, resolution, padding, tol, keep, n_jobs,
                  max_iter=None):
    def one(p):
        try:
            return solve_fiber(geometry, physics, p, K, resolution, padding, tol, max_iter=max_iter)
        except EigensolverError as exc:
            return exc

    sols = Parallel(n_jobs=n_jobs or 1, prefer="threads")(delayed(one)(p) for p in p_values)
    failed = [j for j, s in enumerate(sols) if isinstance(s, Exception)]
    if failed:
        values = np.full((len(sols), K), np.nan)
        residuals = np.full((len(sols), K), np.nan)
        for j, s in enumerate(sols):
            if not isinstance(s, Exception):
                values[j], residuals[j] = s.values, s.result.residuals
        p = float(p_values[failed[0]])
        raise SweepError(f"solver failed at p={p}: {sols[failed[0]]}", p=p,
                         partial=(np.asarray(p_values, dtype=float), values, residuals)) from sols[failed[0]]
    values = np.array([s.values for s in sols])
    residuals = np.array([s.result.residuals for s in sols])
    return values, residuals, (sols if keep else None)


def sweep(geometry: GeometryConfig, physics: PhysicalConfig, pgrid, K: int, resolution: float,
          padding: Optional[float] = None, tol: float = 1e-10, error_estimates: bool = True,
          keep_vectors: bool = False, n_jobs: Optional[int] = 1,
          max_iter: Optional[int] = None) -> DispersionTable:
    """lambda_k(p_j) for k <= K over the momentum grid.

    Each fiber gets its own grid following the oscillator center.  With
    ``error_estimates`` a second sweep at half the resolution supplies
    |lambda_h - lambda_2h| for every entry.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    if not isinstance(pgrid, MomentumGrid):
        pgrid = MomentumGrid(np.atleast_1d(np.asarray(pgrid, dtype=float)))
    values, residuals, fibers = _sweep_values(geometry, physics, pgrid.p, K, resolution, padding,
                                              tol, keep_vectors, n_jobs, max_iter)
    errors = None
    if error_estimates:
        try:
            coarse, _, _ = _sweep_values(geometry, physics, pgrid.p, K, resolution / 2, padding,
                                         tol, False, n_jobs, max_iter)
            errors = error_estimate(values, coarse)
        except GridError as exc:
            logger.warning("no error estimate: half resolution rejected (%s)", exc)
    return DispersionTable(geometry, physics, pgrid.p.copy(), values, residuals, float(resolution),
                           padding, tol, errors, fibers)


@dataclass
class BandInfo:
    k: int
    min: float
    max: float
    argmin_p: float
    argmax_p: float
    variation: float
    flat: bool
    upper_label: Optional[tuple] = None
    upper_distance: Optional[float] = None
    lower_label: Optional[tuple] = None
    lower_distance: Optional[float] = None
    diagnostic: str = ""

    def to_dict(self) -> dict:
        d = {"k": self.k, "min": self.min, "max": self.max, "argmin_p": self.argmin_p,
             "argmax_p": self.argmax_p, "variation": self.variation, "flat": self.flat,
             "upper_label": list(self.upper_label) if self.upper_label else "unidentified",
             "upper_distance": self.upper_distance}
        if self.lower_label is not None or self.lower_distance is not None:
            d["lower_label"] = list(self.lower_label) if self.lower_label else "unidentified"
            d["lower_distance"] = self.lower_distance
        if self.diagnostic:
            d["diagnostic"] = self.diagnostic
        return d


@dataclass
class BandSummary:
    geometry: GeometryConfig
    physics: PhysicalConfig
    bands: list
    gaps: list = field(default_factory=list)
    flat_bands: list = field(default_factory=list)
    gap_threshold: Optional[float] = None

    @property
    def hulls(self) -> list:
        return [(b.min, b.max) for b in self.bands]

    def to_dict(self) -> dict:
        return {"geometry": self.geometry.to_dict(), "physics": {"B": self.physics.B},
                "bands": [b.to_dict() for b in self.bands],
                "gaps": [list(g) for g in self.gaps],
                "flat_bands": [f.to_dict() for f in self.flat_bands],
                "gap_threshold": self.gap_threshold}


def _relative_variation(col: np.ndarray) -> float:
    hi, lo = float(col.max()), float(col.min())
    return (hi - lo) / abs(hi) if hi != 0 else hi - lo


def band_edges(table: DispersionTable, match_tol: Optional[float] = None,
               flat_rtol: float = FLAT_RTOL) -> BandSummary:
    """Per-band extrema matched to the analytic catalogs.

    Upper edges are matched to the window-free levels; for the one-sided
    barrier lower edges are matched to the barrier-free levels.  Matching
    tolerance is ``EDGE_FACTOR`` times the local error estimate unless
    ``match_tol`` is given.  Unmatched edges stay unidentified.
    """
    B = table.physics.B
    top = float(table.values.max())
    upper = upper_catalog(table.geometry, B, top * 1.5 + 1.0)
    lower = merged_free_levels(B, table.geometry.d1, table.geometry.d2, top * 1.5 + 1.0) \
        if table.geometry.kind == ONE_SIDED else None
    err = table.error_bar()
    bands = []
    for k in range(1, table.levels + 1):
        col = table.band(k)
        jmin, jmax = int(np.argmin(col)), int(np.argmax(col))
        var = _relative_variation(col)
        info = BandInfo(k, float(col[jmin]), float(col[jmax]), float(table.p[jmin]),
                        float(table.p[jmax]), var, var <= flat_rtol)
        notes = []
        tol = match_tol if match_tol is not None else EDGE_FACTOR * float(err[jmax, k - 1])
        entry, dist = upper.nearest(info.max)
        info.upper_distance = dist
        if dist <= tol:
            info.upper_label = tuple(i.label() for i in entry.indices)
        else:
            notes.append(f"upper edge {info.max:.8g} is {dist:.3g} from nearest level "
                         f"{entry.value:.8g} (tolerance {tol:.3g})")
        if lower is not None:
            tol_lo = match_tol if match_tol is not None else EDGE_FACTOR * float(err[jmin, k - 1])
            entry, dist = lower.nearest(info.min)
            info.lower_distance = dist
            if dist <= tol_lo:
                info.lower_label = tuple(i.label() for i in entry.indices)
            else:
                notes.append(f"lower edge {info.min:.8g} is {dist:.3g} from nearest free level "
                             f"{entry.value:.8g} (tolerance {tol_lo:.3g})")
        info.diagnostic = "; ".join(notes)
        bands.append(info)
    summary = BandSummary(table.geometry, table.physics, bands)
    summary.flat_bands = detect_flat(table, flat_rtol)
    summary.gaps = detect_gaps(summary)
    return summary


@dataclass
class FlatBand:
    value: float
    variation: float
    ranks: tuple  # rank at each p column
    label: Optional[tuple] = None  # (n, m1, m2) of the predicted flat level

    @property
    def k(self) -> Optional[int]:
        return self.ranks[0] if len(set(self.ranks)) == 1 else None

    def to_dict(self) -> dict:
        return {"value": self.value, "variation": self.variation, "k": self.k,
                "ranks": list(self.ranks), "label": list(self.label) if self.label else None}


def flat_predictions(geometry: GeometryConfig, B: float, e_max: float) -> list:
    """(value, (n, m1, m2)) for every commensurate flat level below ``e_max``."""
    if geometry.kind == "neumann_window":
        return []
    d1 = geometry.d1
    m_max = int(math.ceil(math.sqrt(max(e_max, 0.0)) * max(w.value for w in geometry.widths) / math.pi)) + 1
    out = []
    for m1, m2 in commensurate_pairs(geometry.d1, geometry.d2, m_max):
        n = 0
        while True:
            v = flat_band_value(n, m1, B, d1, m2, geometry.d2)
            if v > e_max:
                break
            out.append((v, (n, m1, m2)))
            n += 1
    return sorted(out)


def detect_flat(table: DispersionTable, rel_tol: float = FLAT_RTOL,
                match_rtol: float = 2e-3) -> list:
    """Levels present in every column to ``rel_tol``, robust to rank crossings."""
    vals = table.values
    found = []
    for v in vals[0]:
        ranks = []
        worst = 0.0
        for col in vals:
            j = int(np.argmin(np.abs(col - v)))
            dev = abs(col[j] - v) / abs(v)
            worst = max(worst, dev)
            ranks.append(j + 1)
        if worst > rel_tol:
            continue
        track = np.array([vals[c, r - 1] for c, r in enumerate(ranks)])
        value = float(track.mean())
        if any(abs(f.value - value) <= rel_tol * abs(value) for f in found):
            continue
        found.append(FlatBand(value, _relative_variation(track), tuple(ranks)))
    preds = flat_predictions(table.geometry, table.physics.B, float(vals.max()) * 1.1 + 1.0)
    for f in found:
        for v, label in preds:
            if abs(f.value - v) <= match_rtol * abs(v):
                f.label = label
                break
    return found


def detect_gaps(summary: BandSummary, catalog: Optional[LevelCatalog] = None) -> list:
    """Open energy intervals between the band hulls, sorted.

    The region above the highest computed band is not reported.  With a
    catalog, gaps whose lower end coincides with a catalog level are kept
    as computed; the catalog is used only to annotate in :func:`gap_labels`.
    """
    hulls = sorted(summary.hulls)
    gaps = []
    reach = hulls[0][1]
    for lo, hi in hulls[1:]:
        if lo > reach:
            gaps.append((float(reach), float(lo)))
        reach = max(reach, hi)
    return gaps


def gap_labels(gaps: list, catalog: LevelCatalog, tol: float) -> list:
    """Name each gap by the catalog level at its lower end, if any."""
    out = []
    for lo, hi in gaps:
        entry, dist = catalog.nearest(lo)
        out.append(tuple(i.label() for i in entry.indices) if dist <= tol else None)
    return out


def gap_below_open(table: DispersionTable, k: int) -> float:
    """min_p lambda_k - max_p lambda_{k-1}: positive iff the gap below band k is open."""
    if k < 2:
        raise ValueError("band 1 has no gap below it")
    return float(table.band(k).min() - table.band(k - 1).max())


def gap_opening_threshold(geometry: GeometryConfig, physics: PhysicalConfig, k: int,
                          a_values: Sequence[float], pgrid, resolution: float,
                          padding: Optional[float] = None, tol: float = 1e-10) -> tuple:
    """Largest tested a (ascending) up to which the gap below band k stays open.

    Returns ``(a_o estimate or None, [(a, opening), ...])``.
    """
    a_values = sorted(a_values)
    openings = []
    a_o = None
    closed = False
    for a in a_values:
        t = sweep(geometry.replace(a=float(a)), physics, pgrid, k, resolution, padding, tol,
                  error_estimates=False)
        g = gap_below_open(t, k)
        openings.append((float(a), g))
        if g > 0 and not closed:
            a_o = float(a)
        else:
            closed = True
    return a_o, openings


@dataclass
class CurrentProfile:
    k: int
    p: float
    x: np.ndarray
    z: np.ndarray
    density: np.ndarray  # |phi|^2 on the (nx, nz) grid
    momentum_current: np.ndarray  # p |phi|^2
    mechanical_current: np.ndarray  # 2 (p + B x) |phi|^2
    norm: float
    total_momentum: float
    total_mechanical: float
    velocity_fd: float
    velocity_fh: float
    reliable: bool
    velocity_fd_coarse: float = float("nan")  # same difference with twice the step

    @property
    def fd_error(self) -> float:
        """Truncation estimate of the central difference: |D(h) - D(2h)| / 3."""
        return abs(self.velocity_fd - self.velocity_fd_coarse) / 3.0


def current_profile(table_or_geometry, k: int, p: float, physics: Optional[PhysicalConfig] = None,
                    resolution: Optional[float] = None, padding: Optional[float] = None,
                    tol: float = 1e-10, step: float = FD_STEP, levels: Optional[int] = None) -> CurrentProfile:
    """Current densities and the group velocity d lambda_k / dp two ways.

    Feynman-Hellmann: <phi, 2(p + Bx) phi> with phi M-normalized.  Finite
    difference: central difference of lambda_k at p +- ``step`` on the same grid.
    """
    if isinstance(table_or_geometry, DispersionTable):
        t = table_or_geometry
        geometry, physics, resolution, padding, tol = t.geometry, t.physics, t.resolution, t.padding, t.tol
        levels = levels or t.levels
    else:
        geometry = table_or_geometry
        if physics is None or resolution is None:
            raise ValueError("physics and resolution are required without a table")
        levels = levels or k
    count = max(levels, k)
    sol = solve_fiber(geometry, physics, p, count, resolution, padding, tol)
    grid, matrix = sol.matrix.grid, sol.matrix
    e_max = matrix.problem.e_max
    B = physics.B
    v = sol.result.vectors[:, k - 1]
    mass = matrix.mdiag
    x_nodes, _ = matrix.node_coords()
    velocity_fh = float(np.sum(2.0 * (p + B * x_nodes) * v * v * mass))
    lam = sol.values
    near = [abs(lam[k - 1] - lam[j]) for j in range(len(lam)) if j != k - 1]
    reliable = not near or min(near) > 1e-8
    side = {s: solve_fiber(geometry, physics, p + s, count, resolution, padding, tol, grid=grid,
                           e_max=e_max).values[k - 1] for s in (step, -step, 2 * step, -2 * step)}
    velocity_fd = float((side[step] - side[-step]) / (2 * step))
    velocity_coarse = float((side[2 * step] - side[-2 * step]) / (4 * step))
    dens = matrix.to_grid(v * v)
    xg = grid.x[:, None]
    area = np.zeros(grid.shape)
    area[matrix.index >= 0] = mass[matrix.index[matrix.index >= 0]]
    mech = 2.0 * (p + B * xg) * dens
    return CurrentProfile(k, float(p), grid.x, grid.z, dens, p * dens, mech,
                          float(np.sum(dens * area)), float(np.sum(p * dens * area)),
                          float(np.sum(mech * area)), velocity_fd, velocity_fh, reliable,
                          velocity_coarse)


def mirror_difference(sol_p: FiberSolution, sol_m: FiberSolution, k: int) -> float:
    """max |phi_k(x, z; p) - phi_k(-x, z; -p)| / max |phi_k|, after sign alignment."""
    if not sol_p.matrix.grid.is_mirror_of(sol_m.matrix.grid):
        raise GridError("fibers at p and -p are not on mirrored grids")
    a = sol_p.grid_vector(k)
    b = sol_m.grid_vector(k)[::-1]
    if np.sum(a * b) < 0:
        b = -b
    return float(np.max(np.abs(a - b)) / np.max(np.abs(a)))


def sign_aligned(vectors: np.ndarray) -> np.ndarray:
    """Fix the sign of each column so its largest-magnitude entry is positive."""
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs
