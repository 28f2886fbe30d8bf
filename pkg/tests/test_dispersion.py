import math

import numpy as np
import pytest

from magband.dispersion import (
    MomentumGrid,
    band_edges,
    current_profile,
    detect_flat,
    detect_gaps,
    gap_below_open,
    mirror_difference,
    sign_aligned,
    solve_fiber,
    sweep,
)
from magband.model import GeometryConfig, PhysicalConfig, Width

PI = Width(1, 1, math.pi)
WINDOW = GeometryConfig.neumann_window(PI, 1.0)
B1 = PhysicalConfig(1.0)


@pytest.fixture(scope="module")
def table():
    return sweep(WINDOW, B1, MomentumGrid.symmetric(10.0, 9), 3, 24 / math.pi, n_jobs=2)


def test_momentum_grid_validation():
    with pytest.raises(ValueError):
        MomentumGrid(np.array([0.0, 0.0]))
    with pytest.raises(ValueError):
        MomentumGrid.symmetric(5.0, 4)
    g = MomentumGrid.default(WINDOW, B1, 3, 11)
    assert g.p[0] == -g.p[-1] and 0.0 in g.p


def test_table_shape_and_mirror_symmetry(table):
    assert table.values.shape == (9, 3)
    assert np.allclose(table.values, table.values[::-1], atol=1e-12)
    assert np.all(np.diff(table.values, axis=1) >= 0)
    with pytest.raises(KeyError):
        table.column(0.123)


def test_sweep_threads_do_not_change_results(table):
    serial = sweep(WINDOW, B1, table.p, 3, 24 / math.pi, error_estimates=False, n_jobs=1)
    assert np.array_equal(serial.values, table.values)


def test_band_edges_labels_upper_edges(table):
    summary = band_edges(table)
    labels = [b.upper_label for b in summary.bands]
    assert labels[0] == ("(0,1)",)
    assert labels[1] == ("(1,1)",)
    assert all(b.min < b.max for b in summary.bands)
    assert detect_gaps(summary) == summary.gaps


def test_gap_below_second_band(table):
    assert gap_below_open(table, 2) > 0
    with pytest.raises(ValueError):
        gap_below_open(table, 1)


def test_flat_band_found_for_commensurate_layers():
    g = GeometryConfig.double_layer(2, 1, 1.0)
    t = sweep(g, B1, MomentumGrid.symmetric(6.0, 5), 8, 24.0, error_estimates=False)
    flats = [f for f in detect_flat(t) if abs(f.value - (1 + math.pi ** 2)) < 2e-3 * (1 + math.pi ** 2)]
    assert flats and flats[0].variation <= 1e-7
    assert flats[0].label is not None


def test_no_flat_band_for_incommensurate_layers():
    g = GeometryConfig.double_layer(2, 1.279, 1.0)
    t = sweep(g, B1, MomentumGrid.symmetric(6.0, 5), 6, 16.0, error_estimates=False)
    assert detect_flat(t) == []


def test_mirror_eigenvectors_agree():
    a = solve_fiber(WINDOW, B1, 2.0, 2, 24 / math.pi)
    b = solve_fiber(WINDOW, B1, -2.0, 2, 24 / math.pi)
    assert mirror_difference(a, b, 1) < 1e-6


def test_current_profile_consistency():
    prof = current_profile(WINDOW, 1, 2.0, physics=B1, resolution=24 / math.pi)
    assert prof.reliable
    assert prof.velocity_fh == pytest.approx(prof.velocity_fd, abs=1e-3 * max(1, abs(prof.velocity_fd)))
    assert prof.norm == pytest.approx(1.0, rel=1e-10)


def test_sign_aligned_makes_peak_positive():
    v = np.array([[1.0, -3.0], [-2.0, 1.0]])
    out = sign_aligned(v)
    assert out[1, 0] == 2.0 and out[0, 1] == 3.0
