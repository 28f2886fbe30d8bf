import json
import math

import numpy as np

from magband import export
from magband.dispersion import MomentumGrid, band_edges, solve_fiber, sweep
from magband.model import GeometryConfig, PhysicalConfig, Width, upper_catalog

G = GeometryConfig.neumann_window(Width(1, 1, math.pi), 1.0)


def test_table_csv_round_trip(tmp_path):
    t = sweep(G, PhysicalConfig(1.0), MomentumGrid.symmetric(4.0, 3), 2, 16 / math.pi, error_estimates=False)
    path = tmp_path / "t.csv"
    export.write_table_csv(t, str(path))
    raw = path.read_bytes()
    assert b"\r\n" not in raw
    rows = np.loadtxt(path, delimiter=",", skiprows=1)
    assert rows.shape == (6, 4)
    assert np.array_equal(rows[:, 2].reshape(3, 2), t.values)


def test_partial_marker(tmp_path):
    path = tmp_path / "p.csv"
    export.write_levels_csv(0.0, [1.0], [1e-3], str(path), partial=True)
    assert path.read_text().startswith("# partial\n")


def test_vector_csv_covers_grid(tmp_path):
    fib = solve_fiber(G, PhysicalConfig(1.0), 0.0, 1, 16 / math.pi)
    path = tmp_path / "v.csv"
    export.write_vector_csv(fib, 1, str(path))
    nx, nz = fib.matrix.grid.shape
    assert sum(1 for _ in open(path)) == nx * nz + 1


def test_json_handles_numpy_and_nonfinite():
    doc = json.loads(export.dumps({"a": np.float64(1.5), "b": np.arange(2), "c": float("inf")}))
    assert doc == {"a": 1.5, "b": [0, 1], "c": "inf"}


def test_svg_has_one_polyline_per_band():
    t = sweep(G, PhysicalConfig(1.0), MomentumGrid.symmetric(4.0, 3), 3, 16 / math.pi, error_estimates=False)
    svg = export.band_svg(t, band_edges(t), upper_catalog(G, 1.0, 8.0))
    assert svg.startswith("<svg") and svg.count('class="band"') == 3
    assert 'class="level"' in svg
