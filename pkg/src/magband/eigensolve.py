"""Lowest eigenpairs of the symmetric pencil (A, M) with M diagonal."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as sla

DENSE_LIMIT = 4000


class EigensolverError(RuntimeError):
    """Raised when the iterative solver misses its residual contract.

    ``partial`` holds whatever eigenpairs were available (may be None).
    """

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


@dataclass(frozen=True)
class EigenRequest:
    count: int = 6
    tol: float = 1e-10
    max_iter: Optional[int] = None
    shift: Optional[float] = None
    e_max: Optional[float] = None
    seed: int = 0

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("count must be >= 1")
        if not 1e-14 <= self.tol <= 1e-6:
            raise ValueError(f"tol must lie in [1e-14, 1e-6], got {self.tol}")


@dataclass
class EigenResult:
    values: np.ndarray
    vectors: np.ndarray  # columns M-orthonormal
    residuals: np.ndarray
    stats: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.values)


def _scaled(matrix):
    s = 1.0 / np.sqrt(matrix.mdiag)
    S = sp.diags(s)
    C = (S @ matrix.A @ S).tocsc()
    return C, s


def residual_report(matrix, result: EigenResult) -> np.ndarray:
    """||A v - lam M v||_{M^-1} / ||v||_M for each pair, recomputed from scratch."""
    A, m = matrix.A, matrix.mdiag
    V = np.asarray(result.vectors)
    R = A @ V - (m[:, None] * V) * result.values[None, :]
    num = np.sqrt(np.sum(R * R / m[:, None], axis=0))
    den = np.sqrt(np.sum(V * V * m[:, None], axis=0))
    return num / den


def rayleigh_quotients(matrix, V: np.ndarray) -> np.ndarray:
    """v^T A v / v^T M v per column, accumulated in extended precision.

    The error is quadratic in the eigenvector error, so float64 vectors give
    eigenvalues accurate far below the float64 roundoff of the solve itself.
    """
    A = matrix.A.tocsr()
    off = sp.triu(A, k=1).tocsr()
    data = off.data.astype(np.longdouble)
    rows = np.repeat(np.arange(A.shape[0]), np.diff(off.indptr))
    diag = matrix.extended_diagonal() if hasattr(matrix, "extended_diagonal") \
        else A.diagonal().astype(np.longdouble)
    m = matrix.mdiag.astype(np.longdouble)
    out = np.empty(V.shape[1])
    for j in range(V.shape[1]):
        v = V[:, j].astype(np.longdouble)
        quad = np.dot(diag * v, v) + 2 * np.dot(data * v[rows], v[off.indices])
        out[j] = float(quad / np.dot(v, m * v))
    return out


def _finish(matrix, values, X, s, stats):
    V = s[:, None] * X
    values = rayleigh_quotients(matrix, V)
    order = np.argsort(values, kind="stable")
    values, V = values[order], V[:, order]
    result = EigenResult(values, V, np.zeros(len(values)), stats)
    result.residuals = residual_report(matrix, result)
    return result


def smallest_eigenpairs(matrix, request: EigenRequest = EigenRequest()) -> EigenResult:
    """Lowest ``request.count`` eigenpairs by shift-invert Lanczos.

    The shift sits one unit below the analytic lower bound of the fiber, so
    the wanted cluster is the dominant part of the inverted spectrum.
    """
    n = matrix.dimension
    if request.e_max is not None:
        return _up_to_energy(matrix, request)
    if request.count > n / 4:
        raise ValueError(f"count {request.count} exceeds dimension/4 = {n / 4:g}")
    C, s = _scaled(matrix)
    sigma = request.shift if request.shift is not None else matrix.lower_bound - 1.0
    lu = sla.splu((C - sigma * sp.identity(n, format="csc")).tocsc(), permc_spec="MMD_AT_PLUS_A")
    calls = [0]

    def solve(b):
        calls[0] += 1
        return lu.solve(np.asarray(b, dtype=float).ravel())

    op = sla.LinearOperator((n, n), matvec=solve, dtype=float)
    v0 = np.random.default_rng(request.seed).standard_normal(n)
    k = request.count
    ncv = min(n - 1, max(2 * k + 1, 20))
    try:
        theta, X = sla.eigsh(C, k=k, sigma=sigma, which="LM", OPinv=op, v0=v0, ncv=ncv,
                             tol=0.0, maxiter=request.max_iter)
    except sla.ArpackNoConvergence as exc:
        partial = None
        if len(exc.eigenvalues):
            partial = _finish(matrix, np.asarray(exc.eigenvalues), np.asarray(exc.eigenvectors), s,
                              {"solves": calls[0], "shift": sigma})
        raise EigensolverError(f"ARPACK did not converge for {k} pairs", partial) from exc
    # Rayleigh-Ritz cleanup on the converged basis
    X, _ = np.linalg.qr(X)
    H = X.T @ (C @ X)
    vals, W = np.linalg.eigh(0.5 * (H + H.T))
    X = X @ W
    result = _finish(matrix, vals, X, s, {"solves": calls[0], "shift": sigma})
    bound = request.tol * (np.abs(result.values) + 1.0)
    if np.any(result.residuals > bound):
        raise EigensolverError(
            f"residuals {result.residuals.max():.3e} exceed the requested tolerance", result)
    return result


def _up_to_energy(matrix, request: EigenRequest) -> EigenResult:
    count = request.count
    while True:
        sub = EigenRequest(count=count, tol=request.tol, max_iter=request.max_iter,
                           shift=request.shift, seed=request.seed)
        res = smallest_eigenpairs(matrix, sub)
        if res.values[-1] > request.e_max or 2 * count > matrix.dimension / 4:
            keep = res.values <= request.e_max
            return EigenResult(res.values[keep], res.vectors[:, keep], res.residuals[keep], res.stats)
        count *= 2


def dense_reference(matrix) -> EigenResult:
    """Full spectrum from a dense generalized symmetric solve (small grids only)."""
    n = matrix.dimension
    if n > DENSE_LIMIT:
        raise ValueError(f"dense reference refused: dimension {n} > {DENSE_LIMIT}")
    values, V = la.eigh(matrix.A.toarray(), np.diag(matrix.mdiag))
    result = EigenResult(values, V, np.zeros(n), {"method": "dense"})
    result.residuals = residual_report(matrix, result)
    return result
