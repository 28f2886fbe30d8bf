import math

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from magband import BandStructure, GeometryConfig, Width

G = GeometryConfig.neumann_window(Width(1, 1, math.pi), 1.0)


def test_params_and_clone():
    est = BandStructure(G, B=1.0, levels=2, resolution=16 / math.pi)
    assert est.get_params()["levels"] == 2
    c = clone(est).set_params(levels=3)
    assert c.levels == 3 and est.levels == 2


def test_fit_transform_shapes():
    est = BandStructure(G, levels=2, resolution=16 / math.pi)
    P = np.array([[-2.0], [0.0], [2.0]])
    out = est.fit_transform(P)
    assert out.shape == (3, 2)
    assert np.allclose(out[0], out[2], atol=1e-12)
    assert est.summary_.bands[0].k == 1
    fresh = est.transform([1.0])
    assert fresh.shape == (1, 2) and out[1, 0] <= fresh[0, 0] <= out[2, 0] + 1e-12


def test_transform_before_fit():
    with pytest.raises(NotFittedError):
        BandStructure(G).transform([0.0])


def test_rejects_bad_input():
    est = BandStructure(G, levels=1, resolution=16 / math.pi)
    with pytest.raises(ValueError):
        est.fit(np.zeros((2, 2)))
    with pytest.raises(ValueError):
        est.fit([np.nan])
