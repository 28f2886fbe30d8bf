import math

import numpy as np
import pytest

from magband.discretize import FiberProblem, assemble, build_grid
from magband.eigensolve import (
    EigenRequest,
    EigensolverError,
    dense_reference,
    residual_report,
    smallest_eigenpairs,
)
from magband.model import GeometryConfig, PhysicalConfig, Width

PI = Width(1, 1, math.pi)


@pytest.fixture(scope="module")
def matrix():
    g = GeometryConfig.double_layer(2, 1, 1.0)
    problem = FiberProblem.for_levels(g, PhysicalConfig(1.0), 0.7, 6)
    return assemble(problem, build_grid(problem, 8.0, padding=4.0))


def test_matches_dense_reference(matrix):
    res = smallest_eigenpairs(matrix, EigenRequest(count=6, tol=1e-12))
    ref = dense_reference(matrix)
    assert np.allclose(res.values, ref.values[:6], rtol=1e-11)


def test_residual_contract(matrix):
    res = smallest_eigenpairs(matrix, EigenRequest(count=4, tol=1e-10))
    assert np.all(residual_report(matrix, res) <= 1e-10 * (np.abs(res.values) + 1))
    G = res.vectors.T @ (matrix.mdiag[:, None] * res.vectors)
    assert np.allclose(G, np.eye(4), atol=1e-10)


def test_deterministic(matrix):
    a = smallest_eigenpairs(matrix, EigenRequest(count=3)).values
    b = smallest_eigenpairs(matrix, EigenRequest(count=3)).values
    assert np.array_equal(a, b)


def test_request_validation():
    with pytest.raises(ValueError):
        EigenRequest(count=0)
    with pytest.raises(ValueError):
        EigenRequest(tol=1e-3)


def test_iteration_budget_exhausted_reports_partial(matrix):
    with pytest.raises(EigensolverError) as info:
        smallest_eigenpairs(matrix, EigenRequest(count=6, max_iter=1))
    assert hasattr(info.value, "partial")
