from dataclasses import replace

import pytest
from hypothesis import given, settings, strategies as st

from mitbid.clearing import truthful_offers
from mitbid.experiments import load_case
from mitbid.mitigation import (
    conduct_test, failed_blocks, impact_test, reference_levels, report_to_csv, run_pipeline, thresholds,
)


def _rt(s):
    refs = reference_levels(s)
    return refs, thresholds(s, refs)


def test_conduct_boundary(homog):
    refs, th = _rt(homog)
    assert th.blocks["A"] == pytest.approx((20.0,))
    assert conduct_test({"A": (100.0,), "B": (20.0,)}, refs, th)["A"] == (False,)
    assert conduct_test({"A": (40.0,), "B": (20.0,)}, refs, th)["A"] == (True,)
    assert conduct_test({"A": (40.0 + 1e-4,), "B": (20.0,)}, refs, th)["A"] == (False,)
    # a low offer deviates as well
    assert conduct_test({"A": (0.0,), "B": (20.0,)}, refs, th)["A"] == (True,)


def test_conduct_missing_reference(homog):
    refs, th = _rt(homog)
    with pytest.raises(KeyError):
        conduct_test({"Z": (20.0,)}, refs, th)


def test_impact_without_failures_skips_clearing(homog):
    refs, th = _rt(homog)
    res = impact_test(homog, truthful_offers(homog), [], refs, th)
    assert not res.triggered and res.submitted is None and res.reference is None


def test_impact_triggered_and_reset(homog):
    rep = run_pipeline(homog, {"A": (100.0,), "B": (20.0,)})
    assert rep.mitigated
    assert rep.mitigated_blocks == {("A", 0)}
    assert rep.final_offers["A"] == (20.0,)
    assert rep.before.lmp["1"] == pytest.approx(100.0)
    assert rep.after.lmp["1"] == pytest.approx(20.0)
    assert rep.price_deviation["1"] == pytest.approx(80.0)


def test_wide_impact_threshold_lets_failure_stand(homog):
    s = replace(homog, impact_threshold_frac=5.0)
    rep = run_pipeline(s, {"A": (100.0,), "B": (20.0,)})
    assert failed_blocks(rep.conduct) == {("A", 0)}
    assert not rep.mitigated
    assert rep.after is rep.before
    assert rep.after.profit["A"] == pytest.approx(1600.0)


def test_conduct_pass_is_not_tested_for_impact(homog):
    rep = run_pipeline(homog, {"A": (40.0,), "B": (20.0,)})
    assert not rep.mitigated
    assert rep.after.lmp["1"] == pytest.approx(40.0)
    assert rep.after.profit["A"] == pytest.approx(400.0)


def test_bad_failed_block(homog):
    refs, th = _rt(homog)
    with pytest.raises(KeyError):
        impact_test(homog, truthful_offers(homog), [("A", 3)], refs, th)


def test_report_csv_marks_unchanged_cells(homog):
    lines = report_to_csv(homog, run_pipeline(homog, {"A": (40.0,), "B": (20.0,)})).splitlines()
    assert lines[0] == "unit,offer,g,lmp,profit,offer_after,g_after,lmp_after,profit_after"
    assert lines[1] == "A,40,20,40,400,-,-,-,400"
    lines = report_to_csv(homog, run_pipeline(homog, {"A": (100.0,), "B": (20.0,)})).splitlines()
    assert lines[1].startswith("A,100,20,100,1600,20,25,20,0")


CASES = ["two_bus_homogeneous", "two_bus_congested", "three_bus_loop", "six_bus"]


@st.composite
def case_and_offers(draw):
    s = load_case(draw(st.sampled_from(CASES)))
    offers = {}
    for u in s.units:
        prices = sorted(draw(st.floats(0, s.offer_cap, allow_nan=False)) for _ in u.blocks)
        offers[u.id] = tuple(round(p, 2) for p in prices)
    return s, offers


@settings(max_examples=30, deadline=None)
@given(case_and_offers())
def test_pipeline_properties(data):
    s, offers = data
    refs, th = _rt(s)
    rep = run_pipeline(s, offers, refs, th)
    # mitigation only moves a block back to its reference level
    for u in s.units:
        for k, (p, q) in enumerate(zip(rep.submitted_offers[u.id], rep.final_offers[u.id])):
            assert q == p or q == refs.blocks[u.id][k]
            assert q <= p or q == refs.blocks[u.id][k]
    # running the pipeline again on the mitigated offers changes nothing
    again = run_pipeline(s, rep.final_offers, refs, th, monotone=False)
    assert not again.mitigated
    assert again.final_offers == rep.final_offers
