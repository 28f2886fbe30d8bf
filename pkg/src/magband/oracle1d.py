"""Separable one-dimensional reference problems and bracketing bounds.

Transverse interval modes are closed form (continuum, or the exact spectrum
of the discrete chain when a spacing is given).  Oscillator half-line
problems are solved with the same control-volume scheme in 1D and a dense
tridiagonal eigensolver, independent of the 2D iterative path.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import eigh_tridiagonal

from .discretize import FiberProblem, build_grid
from .model import NEUMANN_WINDOW, GeometryConfig, PhysicalConfig

DD, DN = "DD", "DN"
OSCILLATOR_STEP = 0.005  # continuum mode spacing, in units of 1/sqrt(B)
MAX_CUT_COUNT = 20


class OracleConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class TransverseMode:
    width: float
    bc: str
    m: int  # physical index: any m for DD, odd m for DN
    energy: float


@dataclass(frozen=True)
class BracketBound:
    k: int
    p: float
    lower: float
    upper: float

    def __post_init__(self):
        if self.lower > self.upper + 1e-9 * (abs(self.upper) + 1.0):
            raise ValueError(f"bracket inverted: {self.lower} > {self.upper}")

    def contains(self, value: float, atol: float = 0.0) -> bool:
        return self.lower - atol <= value <= self.upper + atol


def interval_modes(d: float, bc: str, m_max: int, h: Optional[float] = None) -> list:
    """Lowest ``m_max`` modes of -d^2/dz^2 on (0, d).

    DD: (pi m / d)^2.  DN (Dirichlet at 0, Neumann at d): (pi m / 2d)^2 with
    m = 2j - 1.  With ``h`` the exact eigenvalues of the control-volume chain
    of spacing ``h`` are returned instead.
    """
    d = float(d)
    if bc not in (DD, DN):
        raise ValueError(f"unknown boundary pair {bc!r}")
    modes = []
    for j in range(1, m_max + 1):
        m = j if bc == DD else 2 * j - 1
        k = math.pi * m / (d if bc == DD else 2 * d)
        if h is None:
            e = k * k
        else:
            cells = int(round(d / h))
            if j > (cells - 1 if bc == DD else cells):
                break
            e = (2.0 / h) ** 2 * math.sin(0.5 * k * h) ** 2
        modes.append(TransverseMode(d, bc, m, e))
    return modes


def _cut_chain(B: float, wall: float, bc: str, h: float, extent: float, side: str):
    """Symmetrized tridiagonal of -u'' + B^2 u^2 on a half-line ending at ``wall``.

    Nodes at wall -+ j h for j = 0..J (J h = extent), the far end Dirichlet.
    """
    J = int(round(extent / h))
    if J < 3:
        raise ValueError("half-line too short for the requested spacing")
    sgn = -1.0 if side == "left" else 1.0
    j = np.arange(J)  # node J is the Dirichlet truncation end
    u = wall + sgn * j * h
    vol = np.full(J, h)
    if bc == "N":
        vol[0] = 0.5 * h
    elif bc != "D":
        raise ValueError(f"wall condition must be 'D' or 'N', got {bc!r}")
    g = 1.0 / h
    diag = np.full(J, 2 * g) + (B * u) ** 2 * vol
    if bc == "N":
        diag[0] = g + (B * u[0]) ** 2 * vol[0]
    off = -g * np.ones(J - 1)
    if bc == "D":
        diag, off, vol = diag[1:], off[1:], vol[1:]
    s = 1.0 / np.sqrt(vol)
    return diag * s * s, off * s[:-1] * s[1:]


def _cut_energies(B, wall, bc, count, h, extent, side):
    d, e = _cut_chain(B, wall, bc, h, extent, side)
    count = min(count, len(d))
    return eigh_tridiagonal(d, e, eigvals_only=True, select="i", select_range=(0, count - 1))


def oscillator_cut(B: float, wall: float, bc: str, count: int, h: Optional[float] = None,
                   side: str = "left", extent: Optional[float] = None) -> np.ndarray:
    """Lowest energies of -d^2/du^2 + B^2 u^2 on (-inf, wall) (or (wall, inf)).

    With ``h`` the discrete problem on nodes wall -+ j h is returned as is.
    Without it the continuum value is estimated from spacings 0.005/sqrt(B)
    and half that, Richardson-extrapolated; disagreement beyond 1e-4
    relative raises :class:`OracleConvergenceError`.
    """
    if count > MAX_CUT_COUNT:
        raise ValueError(f"count must be <= {MAX_CUT_COUNT}")
    if side not in ("left", "right"):
        raise ValueError("side must be 'left' or 'right'")
    if extent is None:
        inner = wall if side == "left" else -wall
        extent = max(inner, 0.0) + math.sqrt(B * (2 * count + 1)) / B + 8.0 / math.sqrt(B)
    if h is not None:
        return _cut_energies(B, wall, bc, count, h, extent, side)
    h0 = OSCILLATOR_STEP / math.sqrt(B)
    coarse = _cut_energies(B, wall, bc, count, h0, extent, side)
    fine = _cut_energies(B, wall, bc, count, h0 / 2, extent, side)
    if np.any(np.abs(fine - coarse) > 1e-4 * (np.abs(fine) + 1.0)):
        raise OracleConvergenceError("oscillator cut did not converge under refinement")
    return (4 * fine - coarse) / 3


def discrete_free_levels(grid, B: float, p: float, d: float, count: int) -> np.ndarray:
    """Window-free spectrum of the single layer on exactly ``grid``: sums of the
    discrete x-oscillator and the discrete Dirichlet chain."""
    x = grid.x[1:-1]
    g = 1.0 / grid.hx
    diag = 2 * g / grid.hx + (p + B * x) ** 2
    off = -g / grid.hx * np.ones(len(x) - 1)
    mu = eigh_tridiagonal(diag, off, eigvals_only=True, select="i",
                          select_range=(0, min(count, len(x)) - 1))
    nu = np.array([t.energy for t in interval_modes(d, DD, count, h=grid.hz1)])
    return np.sort(np.add.outer(mu, nu).ravel())[:count]


def bracket_bounds(geometry: GeometryConfig, physics: PhysicalConfig, k: int, p: float,
                   resolution: Optional[float] = None, padding: Optional[float] = None,
                   levels: Optional[int] = None, grid=None) -> BracketBound:
    """Neumann/Dirichlet bracketing of lambda_k(p) for the Neumann-window layer.

    The strip is cut at x = -a (x = +a for p < 0).  Lower bound: Neumann cut,
    window side given a Neumann top everywhere.  Upper bound: Dirichlet cut,
    window closed.  Both sides separate into oscillator cut x interval modes.

    With ``resolution`` (or ``grid``) the bound is built on the same lattice as
    the 2D fiber discretization and brackets its discrete eigenvalues
    rigorously.  Without either, continuum bounds are returned.
    """
    if geometry.kind != NEUMANN_WINDOW:
        raise ValueError("bracketing is implemented for the Neumann-window layer")
    B, a, d = physics.B, geometry.a, geometry.d.value
    count = max(k + 2, levels or 0)
    if grid is None and resolution is not None:
        problem = FiberProblem.for_levels(geometry, physics, p, levels or k)
        grid = build_grid(problem, resolution, padding)
    flip = p < 0
    # reflect so the window-free part is on the left; spectra are mirror invariant
    pp = -p if flip else p
    cut = -a
    wall = cut + pp / B  # oscillator coordinate u = x + p/B
    if grid is not None:
        h, hz = grid.hx, grid.hz1
        if flip:
            left_ext, right_ext = grid.x_hi - a, a - grid.x_lo
        else:
            left_ext, right_ext = cut - grid.x_lo, grid.x_hi - cut
    else:
        h = hz = None
        left_ext = right_ext = None

    def osc(bc, side, ext):
        c = min(count, MAX_CUT_COUNT)
        return oscillator_cut(B, wall, bc, c, h=h, side=side, extent=ext)

    dd = np.array([t.energy for t in interval_modes(d, DD, count, h=hz)])
    dn = np.array([t.energy for t in interval_modes(d, DN, count, h=hz)])

    def kth(*parts):
        vals = np.sort(np.concatenate([np.add.outer(x, z).ravel() for x, z in parts]))
        return float(vals[k - 1])

    lower = kth((osc("N", "left", left_ext), dd), (osc("N", "right", right_ext), dn))
    upper = kth((osc("D", "left", left_ext), dd), (osc("D", "right", right_ext), dd))
    return BracketBound(k, float(p), lower, upper)
