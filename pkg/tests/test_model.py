import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from magband.model import (
    EmptyCatalogError,
    GeometryConfig,
    PhysicalConfig,
    Width,
    as_width,
    catalog_energy_for,
    commensurate_pairs,
    decoupled_double_levels,
    flat_band_value,
    free_level,
    free_levels,
    hermite_mode,
    lower_bound,
    merged_free_levels,
    neumann_limit_level,
    neumann_limit_levels,
    sign_changes,
    spectral_threshold,
    upper_catalog,
)

PI = Width(1, 1, math.pi)


def test_free_level_closed_form():
    assert free_level(0, 1, 1.0, math.pi) == pytest.approx(2.0)
    assert free_level(1, 2, 2.0, 1.0) == pytest.approx(6.0 + 4 * math.pi ** 2)


def test_neumann_limit_uses_doubled_width():
    assert neumann_limit_level(0, 1, 1.0, math.pi) == pytest.approx(1.25)


def test_invalid_inputs_rejected():
    with pytest.raises(ValueError):
        free_level(-1, 1, 1.0, 1.0)
    with pytest.raises(ValueError):
        free_level(0, 0, 1.0, 1.0)
    with pytest.raises(ValueError):
        PhysicalConfig(0.0)
    with pytest.raises(ValueError):
        Width(1, 0, 1.0)


def test_width_ratio_and_commensurability():
    w1, w2 = Width(2, 1, 1.0), as_width(1)
    assert w1.ratio == Fraction(2)
    assert w1.commensurate_with(w2)
    assert not w1.commensurate_with(as_width(1.279))
    assert commensurate_pairs(w1, w2, 6) == [(2, 1), (4, 2), (6, 3)]
    assert commensurate_pairs(w1, as_width(1.279), 50) == []


def test_decoupled_catalog_is_union():
    cat = decoupled_double_levels(1.0, PI, Width(1, 2, math.pi), 8.5)
    assert list(cat.sequence()[:8]) == pytest.approx([2, 4, 5, 5, 6, 7, 7, 8])


def test_neumann_catalog_keeps_odd_modes():
    seq = neumann_limit_levels(1.0, math.pi, 10.0).sequence()
    assert seq[0] == pytest.approx(1.25)
    # the m=2 value B + 1 = 2 would only appear if even m were admitted
    assert not np.any(np.isclose(seq, 2.0))


def test_catalog_labels_and_nearest():
    cat = free_levels(1.0, math.pi, 10.0)
    assert cat.label(1).label() == "(0,1)"
    entry, dist = cat.nearest(4.01)
    assert dist == pytest.approx(0.01)
    with pytest.raises(EmptyCatalogError):
        free_levels(1.0, math.pi, 1.0).kth(1)


def test_lower_bound_and_threshold():
    g = GeometryConfig.one_sided(Width(3, 5, math.pi), Width(2, 5, math.pi))
    assert lower_bound(g, 4.0) == pytest.approx(5.0)
    assert spectral_threshold(4.0, 0.6 * math.pi, 0.4 * math.pi) == pytest.approx(5.0)
    assert merged_free_levels(4.0, 0.6 * math.pi, 0.4 * math.pi, 20).kth(1) == pytest.approx(5.0)


def test_flat_band_value_commensurate():
    assert flat_band_value(0, 2, 1.0, Width(2, 1, 1.0), 1, as_width(1)) == pytest.approx(1 + math.pi ** 2)
    with pytest.raises(ValueError):
        flat_band_value(0, 1, 1.0, Width(2, 1, 1.0), 1, as_width(1))


def test_hermite_modes_orthonormal():
    u = np.linspace(-12, 12, 4001)
    h = u[1] - u[0]
    F = np.array([hermite_mode(n, 2.0, u) for n in range(6)])
    G = F @ F.T * h
    assert np.allclose(G, np.eye(6), atol=1e-10)
    assert sign_changes(F[3]) == 3


def test_geometry_kinds_and_replace():
    g = GeometryConfig.neumann_window(PI, 1.0)
    assert g.replace(a=0.5).a == 0.5
    with pytest.raises(ValueError):
        GeometryConfig.neumann_window(PI, -1.0)
    assert GeometryConfig.one_sided(2, 1).a is None


def test_catalog_energy_covers_count():
    g = GeometryConfig.double_layer(2, 1, 1.0)
    e = catalog_energy_for(g, 1.0, 8)
    assert len(upper_catalog(g, 1.0, e).sequence()) >= 8


@settings(max_examples=40, deadline=None)
@given(B=st.floats(0.1, 10), d=st.floats(0.2, 5), n=st.integers(0, 5), m=st.integers(1, 5))
def test_neumann_limit_below_free(B, d, n, m):
    assert neumann_limit_level(n, m, B, d) < free_level(n, m, B, d)


@settings(max_examples=40, deadline=None)
@given(B=st.floats(0.1, 5), d=st.floats(0.3, 4), factor=st.floats(0.25, 4))
def test_transverse_term_scales_inverse_square(B, d, factor):
    t = free_level(0, 1, B, d) - B
    t2 = free_level(0, 1, B, d * factor) - B
    assert t2 == pytest.approx(t / factor ** 2, rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(B=st.floats(0.2, 4), d1=st.floats(0.4, 4), d2=st.floats(0.4, 4), e=st.floats(5, 60))
def test_catalogs_sorted_and_union_counts(B, d1, d2, e):
    try:
        a = free_levels(B, d1, e).sequence()
        b = free_levels(B, d2, e).sequence()
    except EmptyCatalogError:
        return
    u = decoupled_double_levels(B, d1, d2, e).sequence()
    assert np.all(np.diff(u) >= 0)
    assert len(u) == len(a) + len(b)
