import json
import math
from dataclasses import replace
from pathlib import Path

import pytest
from hypothesis import given, strategies as st

from magband import verify
from magband.model import GeometryConfig

ASSETS = Path(__file__).parent / "assets"


@given(m=st.floats(-1e3, 1e3), e=st.floats(0, 10))
def test_verdict_rule(m, e):
    v = verify.verdict(m, e)
    if m > 3 * e:
        assert v == verify.PASS
    elif m < -3 * e:
        assert v == verify.FAIL
    else:
        assert v == verify.INCONCLUSIVE


def test_nonfinite_margin_fails():
    assert verify.verdict(float("nan"), 0.0) == verify.FAIL


def test_coverage_asset_matches_suite():
    doc = json.loads((ASSETS / "coverage.json").read_text())
    assert doc["properties"] == verify.COVERAGE
    listed = {cid for ids in doc["properties"].values() for cid in ids}
    assert listed == set(verify.CHECK_IDS)
    expected = {"corollary", "lemma2", "lemma3", "theorem1", "convergence"}
    expected |= {f"theorem2.{r}" for r in ("i", "ii", "iii", "iv", "v", "vi")}
    expected |= {"symmetric.main"} | {f"symmetric.{r}" for r in ("i", "ii", "iii", "iv")}
    expected |= {f"asymmetric.{r}" for r in ("i", "ii", "iii", "iv", "v")}
    expected |= {f"onesided.{r}" for r in ("i", "ii", "iii")}
    assert set(doc["properties"]) == expected


def test_strictness_inconclusive_without_window():
    cfgs = verify.reference_configs("quick")
    cfgs["window"] = cfgs["window"].with_geometry(cfgs["window"].geometry.replace(a=0.0))
    ctx = verify.SuiteContext(cfgs, verify.LADDERS["quick"])
    assert verify.check_strictness(ctx).verdict == verify.INCONCLUSIVE


def test_too_coarse_ladder_fails_audit():
    ctx = verify.SuiteContext(verify.reference_configs("quick"), tuple(r / math.pi for r in (12, 24, 48)))
    rec = verify._run_one(ctx, "convergence.audit", verify.check_convergence, "convergence.audit")
    assert rec.verdict == verify.FAIL


def test_reduced_order_is_flagged():
    # the window corner spoils second order; the audit must say so
    ctx = verify.SuiteContext(verify.reference_configs("quick"), tuple(r / math.pi for r in (16, 32, 64)))
    rec = verify.check_convergence(ctx, name="window")
    assert rec.verdict == verify.FAIL
    assert min(rec.details["observed_order"]) < 1.7


def test_failures_are_captured():
    def boom(ctx):
        raise RuntimeError("kaput")
    ctx = verify.SuiteContext(verify.reference_configs("quick"), verify.LADDERS["quick"])
    rec = verify._run_one(ctx, "x", boom, "x")
    assert rec.verdict == verify.FAIL and "kaput" in rec.message


def test_bracketing_suite_deterministic():
    a = verify.run_suite(suite="bracketing", n_jobs=2)
    b = verify.run_suite(suite="bracketing")
    assert [r.check_id for r in a] == ["lemma2.bracketing"]
    assert a[0].verdict == b[0].verdict == verify.PASS
    assert abs(a[0].margin - b[0].margin) <= 1e-12


def test_unknown_suite():
    with pytest.raises(ValueError):
        verify.run_suite(suite="nope")


def test_records_serialize():
    ctx = verify.SuiteContext(verify.reference_configs("quick"), verify.LADDERS["quick"])
    rec = verify.check_d_scaling(ctx)
    doc = json.loads(json.dumps(rec.to_dict(), default=float))
    assert doc["check_id"] == "thm2.iii.d_scaling" and doc["anchor"]
