"""Acceptance criteria, one test each; every test prints a single PASS/FAIL line.

Reference numbers marked PUBLISHED are transcribed from the published tables;
everything else is computed here by an independent route (direct clearing,
the mitigation pipeline or the brute-force oracle).
"""
import time
from dataclasses import replace

import numpy as np
import pytest

from mitbid.bidding import ALL_STRATEGIES, KKT_TOL, Strategy, evaluate_strategy
from mitbid.clearing import clear, truthful_offers
from mitbid.experiments import (
    SIX_BUS_PUBLISHED_OFFERS, fraction_range, hourly_run, load_case, six_bus_profile, sweep_cases,
)
from mitbid.lp import lp_residuals, solve_lp
from mitbid.cli import random_lp
from mitbid.mitigation import report_rows, run_pipeline
from mitbid.network import OfferBlock, scale_loads
from mitbid.oracle import GridSpec, brute_force_bid, symmetric_play, within_one_step

NS, UN, CO, IM = (Strategy.NON_STRATEGIC, Strategy.MITIGATION_UNAWARE,
                  Strategy.CONDUCT_AWARE, Strategy.IMPACT_AWARE)
TOL = 1e-4


@pytest.fixture
def verdict(capsys):
    def report(n, ok, detail, t0):
        line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail} ({time.perf_counter() - t0:.1f} s)"
        with capsys.disabled():
            print("\n" + line)
        assert ok, line
    return report


def _resolved_rows(s, strategy):
    """(unit, offer, g, lmp, profit*, offer', g', lmp', profit) with '-' cells resolved."""
    out = evaluate_strategy(s, strategy)
    rows = []
    for r in report_rows(s, out.report):
        after = [r["offer_after"] or r["offer"], r["g_after"], r["lmp_after"]]
        after = [a if a is not None else b for a, b in zip(after, (r["offer"], r["g"], r["lmp"]))]
        rows.append((r["unit"], r["offer"][0], r["g"], r["lmp"], r["profit"],
                     after[0][0], after[1], after[2], r["profit_after"]))
    return rows


def _table_mismatches(s, table):
    bad = []
    for st, expected in table.items():
        got = _resolved_rows(s, st)
        for e, g in zip(expected, got):
            if e[0] != g[0] or not np.allclose(e[1:], g[1:], atol=TOL, rtol=0):
                bad.append(f"{st.value}/{e[0]}: expected {e[1:]}, got {tuple(round(v, 6) for v in g[1:])}")
    return bad


# PUBLISHED: 2-bus homogeneous case, before (offer, g, lmp, profit*) then after (offer, g, lmp, profit); '-' filled in
HOMOGENEOUS_TABLE = {
    NS: [("A", 20, 25, 20, 0, 20, 25, 20, 0), ("B", 20, 25, 20, 0, 20, 25, 20, 0)],
    UN: [("A", 100, 20, 100, 1600, 20, 25, 20, 0), ("B", 20, 30, 100, 2400, 20, 25, 20, 0)],
    CO: [("A", 40, 20, 40, 400, 40, 20, 40, 400), ("B", 20, 30, 40, 600, 20, 30, 40, 600)],
    IM: [("A", 40, 20, 40, 400, 40, 20, 40, 400), ("B", 20, 30, 40, 600, 20, 30, 40, 600)],
}

# PUBLISHED: 2-bus congested case
CONGESTED_TABLE = {
    NS: [("A", 20, 27, 20, 0, 20, 27, 20, 0), ("B", 20, 23, 20, 0, 20, 23, 20, 0)],
    UN: [("A", 100, 27, 100, 2160, 20, 27, 20, 0), ("B", 20, 23, 20, 0, 20, 23, 20, 0)],
    CO: [("A", 40, 27, 40, 540, 40, 27, 40, 540), ("B", 20, 23, 20, 0, 20, 23, 20, 0)],
    IM: [("A", 40, 27, 40, 540, 40, 27, 40, 540), ("B", 20, 23, 20, 0, 20, 23, 20, 0)],
}


def test_criterion_1_homogeneous(verdict):
    t0 = time.perf_counter()
    bad = _table_mismatches(load_case("two_bus_homogeneous"), HOMOGENEOUS_TABLE)
    elapsed = time.perf_counter() - t0
    ok = not bad and elapsed < 5.0
    verdict(1, ok, "2-bus homogeneous table, all strategies, both units" + (f"; {bad}" if bad else "")
            + ("" if elapsed < 5.0 else f"; runtime {elapsed:.1f} s >= 5 s"), t0)


def test_criterion_2_heterogeneous(verdict):
    t0 = time.perf_counter()
    s = load_case("two_bus_heterogeneous")
    eps = s.epsilon_price
    # PUBLISHED: 2-bus heterogeneous case, post-mitigation (offer, g, lmp, profit)
    expected = {
        CO: {"A": (20 - eps, 30, 20, 300), "B": (20, 20, 20, 0)},
        IM: {"A": (40, 20, 40, 600), "B": (20, 30, 40, 600)},
    }
    bad = []
    for st, units in expected.items():
        rep = evaluate_strategy(s, st).report
        for u, (offer, g, lam, profit) in units.items():
            got = (rep.final_offers[u][0], rep.after.dispatch[u], rep.after.unit_price(u), rep.after.profit[u])
            if not np.allclose(got, (offer, g, lam, profit), atol=TOL, rtol=0):
                bad.append(f"{st.value}/{u}: {got}")
    verdict(2, not bad, "2-bus heterogeneous: conduct 300 at 20-eps, impact 600 at 40" + (f"; {bad}" if bad else ""), t0)


def test_criterion_3_congested(verdict):
    t0 = time.perf_counter()
    bad = _table_mismatches(load_case("two_bus_congested"), CONGESTED_TABLE)
    verdict(3, not bad, "2-bus congested table" + (f"; {bad}" if bad else ""), t0)


def test_criterion_4_symmetric_play(verdict):
    t0 = time.perf_counter()
    out = symmetric_play(load_case("two_bus_homogeneous"), CO)
    got = (out.profits["A"], out.profits["B"])
    # float round-off only: 25 MW x $20 reaches 499.99999999999994
    ok = np.allclose(got, (500.0, 500.0), atol=1e-9, rtol=0)
    verdict(4, ok, f"both units conduct-aware: profits {got}", t0)


def _two_block_variant():
    s = load_case("two_bus_homogeneous")
    a, b = s.units
    a2 = replace(a, blocks=(OfferBlock(15.0, 10.0, 10.0), OfferBlock(15.0, 14.0, 14.0)))
    return replace(s, name="2-bus, two-block strategic unit", units=(a2, b))


def test_criterion_5_sweep(verdict):
    t0 = time.perf_counter()
    fr = fraction_range(0.5, 3.0, 0.25)
    res = sweep_cases(fr)
    prof = {k: np.array([p.realized_profit for p in pts]) for k, pts in res.items()}
    tol = 1e-6
    checks = {}
    checks["nondecreasing"] = all(np.all(np.diff(v) >= -tol) for v in prof.values())
    base = prof["uncongested/conduct"]
    # crossover: first fraction where the curve leaves its low-threshold level
    cross = next((i for i, v in enumerate(base) if v > base[0] + tol), len(base))
    checks["conduct flat at 300 below crossover"] = cross > 0 and np.allclose(base[:cross], 300.0, atol=TOL)
    checks["impact >= conduct"] = all(np.all(prof[f"{c}/impact"] >= prof[f"{c}/conduct"] - tol)
                                      for c in ("uncongested", "congested"))
    checks["congested >= uncongested"] = all(np.all(prof[f"congested/{st}"] >= prof[f"uncongested/{st}"] - tol)
                                             for st in ("conduct", "impact"))
    failed = [k for k, v in checks.items() if not v]
    detail = f"threshold sweep, crossover at fraction {fr[cross] if cross < len(fr) else 'none'}"
    verdict(5, not failed, detail + (f"; failed: {failed}" if failed else ""), t0)


def test_criterion_6_oracle(verdict):
    t0 = time.perf_counter()
    step = 0.25
    cases = [load_case(n) for n in ("two_bus_homogeneous", "two_bus_heterogeneous",
                                    "two_bus_congested", "two_bus_congested_heterogeneous")]
    jobs = [(s, st) for s in cases for st in (UN, CO, IM)] + [(_two_block_variant(), CO)]
    bad = []
    for s, st in jobs:
        n = len(s.unit("A").blocks)
        objective = "expected" if st is UN else "realized"
        res = brute_force_bid(s, st, GridSpec.uniform(n, 0.0, s.offer_cap, step), objective=objective)
        out = evaluate_strategy(s, st)
        milp_offer = out.solution.offers["A"]
        oracle_realized = run_pipeline(s, res.best_offer).after.owner_profit(s.strategic_owner)
        close = abs(out.realized_profit - oracle_realized) <= 0.01 * max(abs(oracle_realized), 1.0)
        if not (within_one_step(milp_offer, res, step) and close):
            bad.append(f"{s.name}/{st.value}: milp {milp_offer} -> {out.realized_profit}, "
                       f"oracle {res.best_prices} -> {oracle_realized}")
    elapsed = time.perf_counter() - t0
    ok = not bad and elapsed < 30.0
    verdict(6, ok, f"{len(jobs)} oracle comparisons at step {step}" + (f"; {bad}" if bad else "")
            + ("" if elapsed < 30.0 else f"; runtime {elapsed:.1f} s >= 30 s"), t0)


def test_criterion_7_properties(verdict):
    t0 = time.perf_counter()
    fails = []
    rng = np.random.default_rng(7)
    worst_gap = 0.0
    for _ in range(50):
        lp = random_lp(rng)
        worst_gap = max(worst_gap, lp_residuals(lp, solve_lp(lp))["duality_gap"])
    if worst_gap > 1e-7:
        fails.append(f"LP duality gap {worst_gap:.3g}")

    cases = [load_case(n) for n in ("two_bus_homogeneous", "two_bus_heterogeneous", "two_bus_congested",
                                    "two_bus_congested_heterogeneous", "three_bus_loop")]
    cases.append(_two_block_variant())
    worst_kkt = 0.0
    for s in cases:
        ns = evaluate_strategy(s, NS).realized_profit
        for st in ALL_STRATEGIES:
            out = evaluate_strategy(s, st)
            worst_kkt = max(worst_kkt, max(out.solution.kkt.values()))
            rep = out.report
            again = run_pipeline(s, rep.final_offers, monotone=False)
            if again.mitigated or again.final_offers != rep.final_offers:
                fails.append(f"not idempotent: {s.name}/{st.value}")
            for u in s.strategic_units():
                p = out.solution.offers[u.id]
                if any(b < a for a, b in zip(p, p[1:])):
                    fails.append(f"non-monotone offer: {s.name}/{st.value}/{u.id}")
            # truthful offers satisfy every rule, so the optimum can only do better
            if st is not NS and out.expected_profit < ns - 1e-6:
                fails.append(f"profit below truthful: {s.name}/{st.value}")
            if st in (CO, IM) and out.realized_profit < ns - 1e-6:
                fails.append(f"realized profit below truthful: {s.name}/{st.value}")
    if worst_kkt > KKT_TOL:
        fails.append(f"KKT residual {worst_kkt:.3g}")

    s = load_case("two_bus_homogeneous")
    for load in (10.0, 35.0, 50.0, 59.0):
        r = clear(s.with_loads({"1": load, "2": 0.0}), truthful_offers(s))
        if abs(r.dispatch["A"] - r.dispatch["B"]) > 1e-6:
            fails.append(f"tie split {r.dispatch} at {load} MW")
    detail = f"duality gap {worst_gap:.1e}, KKT {worst_kkt:.1e}, idempotence, monotone offers, ties, profit floor"
    verdict(7, not fails, detail + (f"; {fails}" if fails else ""), t0)


def test_criterion_8_three_and_six_bus(verdict):
    t0 = time.perf_counter()
    s0 = load_case("six_bus")
    s = scale_loads(s0, 14, six_bus_profile(s0))
    offers = truthful_offers(s)
    offers.update(SIX_BUS_PUBLISHED_OFFERS)
    r = clear(s, offers)
    # PUBLISHED: GenCo G rows at 14:00 as (g, lambda, profit)
    target = {"A": (119.08, 15.20, 595.94), "H": (157.60, 23.44, 2037.16)}
    rel = {u: max(abs(got - want) / abs(want)
                  for got, want in zip((r.dispatch[u], r.unit_price(u), r.profit[u]), vals))
           for u, vals in target.items()}
    ok_a = all(v <= 0.005 for v in rel.values())

    tb = load_case("three_bus_loop")
    after = evaluate_strategy(tb, CO).report.after
    lam_a, lam_b = after.unit_price("A"), after.unit_price("B")
    ok_b = lam_b > lam_a + 1e-6
    detail = (f"(a) 6-bus max rel. error A {rel['A']:.2%}, H {rel['H']:.2%} {'PASS' if ok_a else 'FAIL'}; "
              f"(b) 3-bus conduct-aware lambda_B {lam_b:g} vs lambda_A {lam_a:g} {'PASS' if ok_b else 'FAIL'}")
    verdict(8, ok_a and ok_b, detail, t0)


@pytest.fixture(scope="module")
def day():
    s = load_case("six_bus")
    t0 = time.perf_counter()
    rows = hourly_run(s, six_bus_profile(s), ALL_STRATEGIES)
    return rows, time.perf_counter() - t0


@pytest.mark.slow
def test_criterion_9_hourly(verdict, day):
    t0 = time.perf_counter()
    rows, elapsed = day
    by = {(r.hour, r.strategy): r for r in rows}
    hours = sorted({r.hour for r in rows})
    load = {h: by[(h, NS)].total_mw for h in hours}

    # (a) low demand: the six lightest hours; strategies count as indistinguishable
    # when their realized profits spread by at most 10% of the day's largest profit
    low = sorted(hours, key=lambda h: load[h])[:6]
    peak = max(abs(r.realized_profit) for r in rows)
    spread = max(max(by[(h, st)].realized_profit for st in ALL_STRATEGIES)
                 - min(by[(h, st)].realized_profit for st in ALL_STRATEGIES) for h in low)
    ratio = spread / peak if peak > 0 else 0.0
    ok_a = ratio <= 0.10

    # (b) welfare after mitigation
    ok_b = all(by[(h, NS)].welfare >= by[(h, st)].welfare - 1e-6 for h in hours for st in ALL_STRATEGIES)

    # (c) some hour where bidding unaware of mitigation leaves less than truthful bidding
    below = [h for h in hours if by[(h, UN)].realized_profit < by[(h, NS)].realized_profit - 1e-6]
    ok_c = bool(below)

    detail = (f"(a) low-demand spread {ratio:.1%} of peak profit {'PASS' if ok_a else 'FAIL'}; "
              f"(b) welfare {'PASS' if ok_b else 'FAIL'}; "
              f"(c) unaware below non-strategic at hours {below or 'none'} {'PASS' if ok_c else 'FAIL'}; "
              f"hourly run {elapsed:.0f} s")
    verdict(9, ok_a and ok_b and ok_c, detail, t0)
