"""Estimator-style front end: fit on momenta, transform momenta to band energies."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .dispersion import MomentumGrid, band_edges, solve_fiber, sweep
from .model import PhysicalConfig


class BandStructure(BaseEstimator, TransformerMixin):
    """Band structure of one geometry.

    ``fit(P)`` sweeps the momenta in ``P`` (shape (n,) or (n, 1)) and keeps the
    dispersion table and band summary.  ``transform(P)`` returns the lowest
    ``levels`` eigenvalues at each momentum, shape (n, levels).
    """

    def __init__(self, geometry, B=1.0, levels=6, resolution=32.0, padding=None, tol=1e-10,
                 error_estimates=False, n_jobs=1):
        self.geometry = geometry
        self.B = B
        self.levels = levels
        self.resolution = resolution
        self.padding = padding
        self.tol = tol
        self.error_estimates = error_estimates
        self.n_jobs = n_jobs

    def _momenta(self, X):
        X = check_array(X, ensure_2d=False, dtype=np.float64)
        if X.ndim == 2:
            if X.shape[1] != 1:
                raise ValueError(f"expected a single momentum column, got shape {X.shape}")
            X = X[:, 0]
        return X

    def fit(self, X, y=None):
        p = np.unique(self._momenta(X))
        self.physics_ = PhysicalConfig(float(self.B))
        self.table_ = sweep(self.geometry, self.physics_, MomentumGrid(p), int(self.levels),
                            float(self.resolution), self.padding, float(self.tol),
                            error_estimates=self.error_estimates, n_jobs=self.n_jobs)
        self.summary_ = band_edges(self.table_)
        self.p_ = self.table_.p
        return self

    def transform(self, X):
        check_is_fitted(self, "table_")
        p = self._momenta(X)
        out = np.empty((len(p), self.table_.levels))
        for i, q in enumerate(p):
            j = np.flatnonzero(self.p_ == q)
            if len(j):
                out[i] = self.table_.values[j[0]]
            else:
                out[i] = solve_fiber(self.geometry, self.physics_, q, self.table_.levels,
                                     float(self.resolution), self.padding, float(self.tol)).values
        return out
