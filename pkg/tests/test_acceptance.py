"""Acceptance criteria 1-11, one pass/fail line each (see the terminal summary)."""
import json
import math
import time
from pathlib import Path

import numpy as np
import pytest

from magband import cli, verify
from magband.convergence import convergence_study
from magband.dispersion import (
    MomentumGrid,
    band_edges,
    current_profile,
    detect_flat,
    mirror_difference,
    solve_fiber,
    sweep,
)
from magband.model import (
    GeometryConfig,
    PhysicalConfig,
    Width,
    decoupled_double_levels,
    free_levels,
    neumann_limit_levels,
)
from magband.oracle1d import bracket_bounds, discrete_free_levels

PI = Width(1, 1, math.pi)
B1 = PhysicalConfig(1.0)
TOL = 1e-10

# criterion 1
DECOUPLED = GeometryConfig.double_layer(PI, Width(1, 2, math.pi), 0.0)
C1_RES, C1_PADDING, C1_RTOL, C1_LEVELS, C1_SECONDS = 256 / math.pi, 6.0, 2e-3, 8, 60
C1_SUM_GROUND = 6.0
# criterion 2
C2_LADDER, C2_ORDER, C2_BAND, C2_SECONDS = tuple(r / math.pi for r in (64, 128, 256)), 2.0, 0.3, 300
# criteria 3, 4, 8, 9, 10
WINDOW = GeometryConfig.neumann_window(PI, 1.0)
W_RES, W_P, W_K = 48 / math.pi, np.linspace(-12, 12, 41), 5
C3_UPPER_FACTOR, C3_STRICT_FACTOR, C3_SECONDS = 5.0, 10.0, 600
C4_TOL, C4_KMAX = 1e-2, 3
C8_PS, C8_KS = (0.0, 3.0, 6.0, 12.0), (1, 2, 3)
C9_PS, C9_MIRROR, C9_FH = (1.0, 3.0, 6.0), 1e-6, 1e-3
C10_A, C10_FACTOR = (0.0, math.pi / 4, math.pi / 2, math.pi), 3.0
# criterion 5
C5_RES, C5_P, C5_K, C5_FLAT, C5_MATCH, C5_VARY, C5_SECONDS = 32.0, np.linspace(-8, 8, 17), 8, 1e-7, 2e-3, 1e-4, 900
# criterion 6
C6_RES, C6_P, C6_K, C6_TOL = 32 / math.pi, np.linspace(-8, 8, 9), 6, 1e-8
# criterion 7
ONESIDED = GeometryConfig.one_sided(Width(3, 5, math.pi), Width(2, 5, math.pi))
C7_B, C7_RES, C7_P, C7_TOL = PhysicalConfig(4.0), 96 / math.pi, np.linspace(-14, 14, 29), 2e-2
C7_LEFT, C7_RIGHT, C7_GAP = 5.0, 4.0 + (1 / 0.6) ** 2, (7.0, 7.8)

ASSETS = Path(__file__).parent / "assets"


@pytest.fixture(scope="module")
def window_table():
    t0 = time.perf_counter()
    table = sweep(WINDOW, B1, MomentumGrid(W_P), W_K, W_RES, tol=TOL, n_jobs=4)
    return table, time.perf_counter() - t0


def test_criterion_01_decoupled_union(record_criterion):
    t0 = time.perf_counter()
    fib = solve_fiber(DECOUPLED, B1, 0.0, C1_LEVELS, C1_RES, padding=C1_PADDING, tol=TOL)
    elapsed = time.perf_counter() - t0
    union = decoupled_double_levels(1.0, PI, Width(1, 2, math.pi), 20.0).sequence()[:C1_LEVELS]
    rel = np.abs(fib.values - union) / union
    ground_not_sum = abs(fib.values[0] - C1_SUM_GROUND) > C1_RTOL * C1_SUM_GROUND
    ok = rel.max() <= C1_RTOL and ground_not_sum and elapsed <= C1_SECONDS
    assert record_criterion("criterion 1 decoupled union", ok,
                            f"max rel dev {rel.max():.2e} <= {C1_RTOL}, ground {fib.values[0]:.6f} vs sum "
                            f"{C1_SUM_GROUND}, {elapsed:.1f}s <= {C1_SECONDS}s")


def test_criterion_02_convergence_order(record_criterion):
    t0 = time.perf_counter()
    study = convergence_study(DECOUPLED, B1, 0.0, 3, C2_LADDER, padding=C1_PADDING, tol=TOL)
    elapsed = time.perf_counter() - t0
    orders = study.orders
    ok = np.all(np.abs(orders - C2_ORDER) <= C2_BAND) and elapsed <= C2_SECONDS
    assert record_criterion("criterion 2 convergence order", ok,
                            f"orders {np.round(orders, 3).tolist()} in {C2_ORDER}+-{C2_BAND}, "
                            f"{elapsed:.1f}s <= {C2_SECONDS}s")


def test_criterion_03_bounds_and_strictness(window_table, record_criterion):
    table, elapsed = window_table
    err = table.error_bar()
    top = float(table.values.max()) + 10
    low = neumann_limit_levels(1.0, math.pi, top).sequence()[:W_K]
    up = free_levels(1.0, math.pi, top).sequence()[:W_K]
    lower_margin = float(np.min(table.values - low[None, :]))
    upper_margin = float(np.min(up[None, :] + C3_UPPER_FACTOR * err - table.values))
    j0 = table.column(0.0)
    strict = 2.0 - table.values[j0, 0]
    ratio = strict / err[j0, 0]
    ok = lower_margin >= 0 and upper_margin >= 0 and ratio > C3_STRICT_FACTOR and elapsed <= C3_SECONDS
    assert record_criterion("criterion 3 bounds + strictness", ok,
                            f"lower margin {lower_margin:.3e}, upper margin {upper_margin:.3e}, "
                            f"2 - lambda_1(0) = {strict:.4f} = {ratio:.0f}x error, sweep {elapsed:.1f}s")


def test_criterion_04_asymptote(window_table, record_criterion):
    table, _ = window_table
    dev12 = max(abs(table.values[table.column(s * 12.0), 0] - 2.0) for s in (-1, 1))
    top = float(table.values.max()) + 10
    cat = free_levels(1.0, math.pi, top).sequence()
    decays = []
    for k in range(1, C4_KMAX + 1):
        for s in (-1, 1):
            near = abs(table.values[table.column(s * 6.0), k - 1] - cat[k - 1])
            far = abs(table.values[table.column(s * 12.0), k - 1] - cat[k - 1])
            decays.append(far < near)
    ok = dev12 <= C4_TOL and all(decays)
    assert record_criterion("criterion 4 asymptote", ok,
                            f"|lambda_1(+-12) - 2| = {dev12:.2e} <= {C4_TOL}, decay 12 vs 6 for k<=3: {all(decays)}")


def test_criterion_05_flat_band_dichotomy(record_criterion):
    t0 = time.perf_counter()
    comm = sweep(GeometryConfig.double_layer(2, 1, 1.0), B1, MomentumGrid(C5_P), C5_K, C5_RES, tol=TOL,
                 error_estimates=False, n_jobs=4)
    inc = sweep(GeometryConfig.double_layer(2, 1.279, 1.0), B1, MomentumGrid(C5_P), C5_K, C5_RES, tol=TOL,
                error_estimates=False, n_jobs=4)
    elapsed = time.perf_counter() - t0
    target = 1 + math.pi ** 2
    flats = [f for f in detect_flat(comm, rel_tol=C5_FLAT) if abs(f.value - target) <= C5_MATCH * target]
    variations = [b.variation for b in band_edges(inc).bands]
    ok = bool(flats) and min(variations) >= C5_VARY and elapsed <= C5_SECONDS
    found = f"{flats[0].value:.6f} (var {flats[0].variation:.1e})" if flats else "none"
    assert record_criterion("criterion 5 flat-band dichotomy", ok,
                            f"commensurate flat level {found} near {target:.4f}; incommensurate min variation "
                            f"{min(variations):.2e} >= {C5_VARY}; {elapsed:.1f}s <= {C5_SECONDS}s")


def test_criterion_06_symmetric_decomposition(record_criterion):
    grid = MomentumGrid(C6_P)
    t2 = sweep(GeometryConfig.double_layer(PI, PI, 1.0), B1, grid, C6_K, C6_RES, tol=TOL,
               error_estimates=False, n_jobs=4)
    t1 = sweep(WINDOW, B1, grid, C6_K, C6_RES, tol=TOL, error_estimates=False, keep_vectors=True, n_jobs=4)
    merged = np.empty_like(t2.values)
    for j, fib in enumerate(t1.fibers):
        odd = discrete_free_levels(fib.matrix.grid, 1.0, float(C6_P[j]), math.pi, C6_K)
        merged[j] = np.sort(np.concatenate([fib.values, odd]))[:C6_K]
    diff = float(np.max(np.abs(t2.values - merged)))
    assert record_criterion("criterion 6 symmetric decomposition", diff <= C6_TOL,
                            f"max entry difference {diff:.2e} <= {C6_TOL}")


def test_criterion_07_one_sided(record_criterion):
    table = sweep(ONESIDED, C7_B, MomentumGrid(C7_P), 3, C7_RES, tol=TOL, n_jobs=4)
    err = table.error_bar()[:, 0]
    v = table.band(1)
    steps = np.diff(v) + 3.0 * (err[:-1] + err[1:])
    left = abs(v[table.column(-14.0)] - C7_LEFT)
    right = abs(v[table.column(14.0)] - C7_RIGHT)
    gaps = band_edges(table).gaps
    gap = next(((lo, hi) for lo, hi in gaps if lo <= C7_GAP[0] and hi >= C7_GAP[1]), None)
    ok = steps.min() >= 0 and left <= C7_TOL and right <= C7_TOL and gap is not None
    assert record_criterion("criterion 7 one-sided barrier", ok,
                            f"(a) min step beyond error bars {steps.min():.2e}; (b) |lambda_1(-14)-5| = {left:.2e}, "
                            f"|lambda_1(14)-{C7_RIGHT:.4f}| = {right:.2e} <= {C7_TOL}; (c) gap {gap}")


def test_criterion_08_bracketing(record_criterion):
    worst = math.inf
    for p in C8_PS:
        fib = solve_fiber(WINDOW, B1, p, max(C8_KS), W_RES, tol=TOL)
        for k in C8_KS:
            lam = fib.values[k - 1]
            b = bracket_bounds(WINDOW, B1, k, p, grid=fib.matrix.grid, levels=max(C8_KS))
            allowance = TOL * (abs(lam) + 1)
            worst = min(worst, lam - b.lower + allowance, b.upper - lam + allowance)
    assert record_criterion("criterion 8 bracketing", worst >= 0,
                            f"min slack {worst:.3e} (solver allowance tol*(|lambda|+1) included)")


def test_criterion_09_mirror_and_feynman_hellmann(record_criterion):
    mirror, fh = 0.0, 0.0
    for p in C9_PS:
        a = solve_fiber(WINDOW, B1, p, 1, W_RES, tol=TOL)
        b = solve_fiber(WINDOW, B1, -p, 1, W_RES, tol=TOL)
        mirror = max(mirror, mirror_difference(a, b, 1))
        prof = current_profile(WINDOW, 1, p, physics=B1, resolution=W_RES, tol=TOL)
        fh = max(fh, abs(prof.velocity_fd - prof.velocity_fh) / max(1.0, abs(prof.velocity_fd)))
    ok = mirror <= C9_MIRROR and fh <= C9_FH
    assert record_criterion("criterion 9 mirror + Feynman-Hellmann", ok,
                            f"mirror difference {mirror:.2e} <= {C9_MIRROR}, FH relative {fh:.2e} <= {C9_FH}")


def test_criterion_10_a_monotone(record_criterion):
    vals, errs = [], []
    for a in C10_A:
        g = WINDOW.replace(a=float(a))
        fine = solve_fiber(g, B1, 0.0, 1, W_RES, tol=TOL).values[0]
        coarse = solve_fiber(g, B1, 0.0, 1, W_RES / 2, tol=TOL).values[0]
        vals.append(fine)
        errs.append(abs(fine - coarse))
    drops = [vals[i] - vals[i + 1] for i in range(len(vals) - 1)]
    need = [C10_FACTOR * (errs[i] + errs[i + 1]) for i in range(len(vals) - 1)]
    ok = all(d > n for d, n in zip(drops, need))
    assert record_criterion("criterion 10 a-monotonicity", ok,
                            f"lambda_1 {np.round(vals, 5).tolist()}, drops {np.round(drops, 4).tolist()} "
                            f"vs 3x errors {np.round(need, 4).tolist()}")


def test_criterion_11_suite_integrity(tmp_path, record_criterion):
    out = tmp_path / "report.json"
    rc = cli.main(["verify", "--suite", "all", "--threads", "4", "--out", str(out)])
    records = json.loads(out.read_text())
    verdicts = {}
    for r in records:
        verdicts[r["verdict"]] = verdicts.get(r["verdict"], 0) + 1
    coverage = json.loads((ASSETS / "coverage.json").read_text())["properties"]
    ids = {r["check_id"] for r in records}
    covered = all(c and set(c) <= ids for c in coverage.values())
    ok = rc == 0 and covered
    assert record_criterion("criterion 11 suite integrity", ok,
                            f"exit {rc}, verdicts {verdicts}, {len(coverage)} properties all mapped to run checks")
