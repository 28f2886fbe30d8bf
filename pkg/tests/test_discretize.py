import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from magband.discretize import FiberProblem, GridError, assemble, build_grid, dump, mirror_x
from magband.eigensolve import dense_reference
from magband.model import GeometryConfig, PhysicalConfig, Width
from magband.oracle1d import discrete_free_levels

PI = Width(1, 1, math.pi)
WINDOW = GeometryConfig.neumann_window(PI, 1.0)


def _matrix(geometry, p=0.0, res=16 / math.pi, B=1.0, count=4):
    problem = FiberProblem.for_levels(geometry, PhysicalConfig(B), p, count)
    return assemble(problem, build_grid(problem, res))


def test_pencil_symmetric_positive_mass():
    m = _matrix(WINDOW, p=2.0)
    assert abs(m.A - m.A.T).max() < 1e-12
    assert np.all(m.mdiag > 0)


def test_window_edges_on_nodes():
    g = _matrix(WINDOW).grid
    assert np.any(np.isclose(g.x, 1.0, atol=1e-14))
    assert np.any(np.isclose(g.x, -1.0, atol=1e-14))


def test_too_coarse_grid_rejected():
    problem = FiberProblem.for_levels(WINDOW, PhysicalConfig(1.0), 0.0, 3)
    with pytest.raises(GridError):
        build_grid(problem, 1.0)


def test_bad_energy_cap_rejected():
    with pytest.raises(ValueError):
        FiberProblem(WINDOW, PhysicalConfig(1.0), 0.0, 0.5)


def test_closed_window_matches_separable_spectrum():
    # a = 0: the layer decouples into oscillator x interval on the same lattice
    g0 = GeometryConfig.neumann_window(PI, 0.0)
    m = _matrix(g0, p=1.5, count=5)
    lam = dense_reference(m).values[:5]
    ref = discrete_free_levels(m.grid, 1.0, 1.5, math.pi, 5)
    assert np.allclose(lam, ref, rtol=0, atol=1e-10)


def test_mirror_maps_p_to_minus_p():
    m = _matrix(WINDOW, p=3.0)
    mm = mirror_x(m)
    direct = assemble(mm.problem, mm.grid)
    assert mm.grid.is_mirror_of(m.grid)
    assert abs(mm.A - direct.A).max() < 1e-12


def test_extended_diagonal_agrees_with_matrix():
    m = _matrix(WINDOW, p=5.0)
    assert np.allclose(m.extended_diagonal().astype(float), m.A.diagonal(), rtol=1e-14)


def test_dump_writes_matrix_and_nodes(tmp_path):
    m = _matrix(WINDOW)
    mpath, npath = dump(m, str(tmp_path / "fib"))
    head = open(mpath).readline().split()
    assert int(head[1]) == m.dimension
    assert sum(1 for _ in open(npath)) == m.dimension + 1


@settings(max_examples=10, deadline=None)
@given(p=st.floats(-6, 6), a=st.floats(0.3, 2.0))
def test_matrix_symmetric_for_any_fiber(p, a):
    m = _matrix(GeometryConfig.neumann_window(PI, a), p=p)
    assert abs(m.A - m.A.T).max() <= 1e-12 * abs(m.A).max()
