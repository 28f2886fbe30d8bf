"""Richardson error estimates and observed convergence orders."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def error_estimate(fine, coarse) -> np.ndarray:
    """|lambda_h - lambda_2h|: a conservative bound for any order >= 1."""
    return np.abs(np.asarray(fine, dtype=float) - np.asarray(coarse, dtype=float))


def observed_order(coarse, mid, fine, ratio: float = 2.0) -> np.ndarray:
    coarse, mid, fine = (np.asarray(v, dtype=float) for v in (coarse, mid, fine))
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.log(np.abs(coarse - mid) / np.abs(mid - fine)) / np.log(ratio)


def extrapolate(mid, fine, order: float = 2.0, ratio: float = 2.0) -> np.ndarray:
    mid, fine = np.asarray(mid, dtype=float), np.asarray(fine, dtype=float)
    r = ratio ** order
    return (r * fine - mid) / (r - 1.0)


@dataclass
class ConvergenceStudy:
    resolutions: tuple
    values: np.ndarray  # (levels, count), coarse to fine

    @property
    def ratio(self) -> float:
        r = np.asarray(self.resolutions, dtype=float)
        steps = r[1:] / r[:-1]
        if len(steps) and not np.allclose(steps, steps[0], rtol=1e-9):
            raise ValueError(f"resolution ladder must be geometric, got ratios {steps.tolist()}")
        return float(steps[0]) if len(steps) else 2.0

    @property
    def orders(self) -> np.ndarray:
        v = self.values
        if len(v) < 3:
            raise ValueError("three resolutions are needed for an observed order")
        return observed_order(v[-3], v[-2], v[-1], self.ratio)

    @property
    def errors(self) -> np.ndarray:
        return error_estimate(self.values[-1], self.values[-2])

    @property
    def extrapolated(self) -> np.ndarray:
        return extrapolate(self.values[-2], self.values[-1], ratio=self.ratio)

    def to_dict(self) -> dict:
        out = {"resolutions": [float(r) for r in self.resolutions],
               "eigenvalues": self.values.tolist(), "error_estimate": self.errors.tolist()}
        if len(self.values) >= 3:
            out["observed_order"] = self.orders.tolist()
            out["extrapolated"] = self.extrapolated.tolist()
        return out


def convergence_study(geometry, physics, p: float, count: int, resolutions, padding=None,
                      tol: float = 1e-10) -> ConvergenceStudy:
    """Eigenvalues of one fiber on a geometric refinement ladder, coarse to fine."""
    from .dispersion import solve_fiber

    resolutions = tuple(float(r) for r in resolutions)
    if any(b <= a for a, b in zip(resolutions, resolutions[1:])):
        raise ValueError("resolutions must increase")
    ConvergenceStudy(resolutions, np.empty((len(resolutions), 0))).ratio

    rows = [solve_fiber(geometry, physics, p, count, r, padding=padding, tol=tol).values[:count]
            for r in resolutions]
    return ConvergenceStudy(resolutions, np.array(rows))
