"""File output: dispersion CSV, JSON summaries, and a static SVG band diagram."""
from __future__ import annotations

import csv
import json
import math
from typing import Optional
from xml.sax.saxutils import escape

import numpy as np


def fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_table_csv(table, path: str) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["p", "k", "lambda", "residual"])
        for p, k, lam, res in table.rows():
            w.writerow([fmt(p), k, fmt(lam), fmt(res)])


def write_levels_csv(p: float, values, residuals, path: str, partial: bool = False) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if partial:
            fh.write("# partial\n")
        w.writerow(["p", "k", "lambda", "residual"])
        for k, (lam, res) in enumerate(zip(values, residuals), start=1):
            w.writerow([fmt(p), k, fmt(lam), fmt(res)])


def write_vector_csv(fiber, k: int, path: str) -> None:
    """Eigenvector k on the full grid as rows (x, z, value); Dirichlet nodes carry 0."""
    vals = fiber.grid_vector(k)
    grid = fiber.matrix.grid
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "z", "value"])
        for i, x in enumerate(grid.x):
            for j, z in enumerate(grid.z):
                w.writerow([fmt(x), fmt(z), fmt(vals[i, j])])


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n"


def write_json(obj, path: str) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(dumps(obj))


def band_svg(table, summary=None, catalog=None, width: int = 640, height: int = 480) -> str:
    """Bands as polylines over p, catalog levels as dashed rules, gaps shaded."""
    pad = 48
    p = table.p
    lo = float(table.values.min())
    hi = float(table.values.max())
    span = hi - lo or 1.0
    lo, hi = lo - 0.05 * span, hi + 0.05 * span
    p0, p1 = float(p[0]), float(p[-1])
    if p1 == p0:
        p0, p1 = p0 - 1.0, p1 + 1.0

    def sx(v):
        return pad + (v - p0) / (p1 - p0) * (width - 2 * pad)

    def sy(e):
        return height - pad - (e - lo) / (hi - lo) * (height - 2 * pad)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">',
           f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>']
    if summary is not None:
        for g_lo, g_hi in summary.gaps:
            y0, y1 = sy(min(g_hi, hi)), sy(max(g_lo, lo))
            out.append(f'<rect class="gap" x="{pad}" y="{y0:.3f}" width="{width - 2 * pad}" '
                       f'height="{max(y1 - y0, 0):.3f}" fill="#dde8f4"/>')
    if catalog is not None:
        for e in catalog.values:
            if lo <= e <= hi:
                out.append(f'<line class="level" x1="{pad}" x2="{width - pad}" y1="{sy(e):.3f}" '
                           f'y2="{sy(e):.3f}" stroke="#999" stroke-dasharray="4 3"/>')
    for k in range(1, table.levels + 1):
        pts = " ".join(f"{sx(a):.3f},{sy(b):.3f}" for a, b in zip(p, table.band(k)))
        out.append(f'<polyline class="band" data-k="{k}" points="{pts}" fill="none" '
                   f'stroke="#1f4e79" stroke-width="1.5"/>')
    out.append(f'<line x1="{pad}" x2="{width - pad}" y1="{height - pad}" y2="{height - pad}" stroke="black"/>')
    out.append(f'<line x1="{pad}" x2="{pad}" y1="{pad}" y2="{height - pad}" stroke="black"/>')
    out.append(f'<text x="{width / 2}" y="{height - 12}" text-anchor="middle" font-size="12">p</text>')
    out.append(f'<text x="14" y="{height / 2}" font-size="12">{escape("λ")}</text>')
    for v in (p0, 0.5 * (p0 + p1), p1):
        out.append(f'<text x="{sx(v):.3f}" y="{height - pad + 14}" text-anchor="middle" '
                   f'font-size="10">{v:.3g}</text>')
    for e in (lo, 0.5 * (lo + hi), hi):
        out.append(f'<text x="{pad - 4}" y="{sy(e):.3f}" text-anchor="end" font-size="10">{e:.4g}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_svg(table, path: str, summary=None, catalog=None) -> None:
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write(band_svg(table, summary, catalog))
