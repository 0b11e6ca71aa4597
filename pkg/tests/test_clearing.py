import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mitbid.bidding import kkt_residuals
from mitbid.clearing import (
    InfeasibleMarketError, clear, clearing_residuals, reference_prices, result_to_csv, truthful_offers,
    validate_offers,
)
from mitbid.experiments import SIX_BUS_PUBLISHED_OFFERS, load_case, six_bus_profile
from mitbid.network import Bus, GenUnit, OfferBlock, Scenario, scale_loads


def test_truthful_split(homog):
    r = clear(homog, truthful_offers(homog))
    assert r.dispatch == pytest.approx({"A": 25.0, "B": 25.0})
    assert r.lmp == pytest.approx({"1": 20.0, "2": 20.0})
    assert r.profit == pytest.approx({"A": 0.0, "B": 0.0})


def test_cap_offer(homog):
    r = clear(homog, {"A": (100.0,), "B": (20.0,)})
    assert r.dispatch == pytest.approx({"A": 20.0, "B": 30.0})
    assert r.lmp == pytest.approx({"1": 100.0, "2": 100.0})
    assert r.profit["A"] == pytest.approx(1600.0)


def test_congested_line(congested):
    r = clear(congested, {"A": (40.0,), "B": (20.0,)})
    assert r.dispatch == pytest.approx({"A": 27.0, "B": 23.0})
    assert r.lmp == pytest.approx({"1": 40.0, "2": 20.0})
    assert r.profit["A"] == pytest.approx(540.0)
    assert abs(r.flows[0]) == pytest.approx(23.0)


def test_zero_load(homog):
    r = clear(homog.with_loads({"1": 0.0, "2": 0.0}), truthful_offers(homog))
    assert sum(r.dispatch.values()) == pytest.approx(0.0)
    assert r.offer_cost == pytest.approx(0.0)


def test_reference_prices(homog, hetero):
    assert reference_prices(homog) == pytest.approx({"1": 20.0, "2": 20.0})
    assert reference_prices(hetero) == pytest.approx({"1": 20.0, "2": 20.0})
    one = Scenario(buses=(Bus("1", 10.0),), branches=(),
                   units=(GenUnit("A", "1", "G", (OfferBlock(30.0, 17.0, 17.0),)),), strategic_owner="G")
    assert reference_prices(one) == pytest.approx({"1": 17.0})


def test_six_bus_truthful_congests_line_4_5(six_bus):
    s = scale_loads(six_bus, 14, six_bus_profile(six_bus))
    r = clear(s, truthful_offers(s))
    i = next(k for k, br in enumerate(s.branches) if {br.from_bus, br.to_bus} == {"4", "5"})
    assert abs(r.flows[i]) == pytest.approx(128.44, abs=1e-6)
    assert all(abs(f) <= br.limit_mw + 1e-6 for f, br in zip(r.flows, s.branches))
    assert r.lmp["5"] > r.lmp["4"]


def test_six_bus_published_offers(six_bus):
    s = scale_loads(six_bus, 14, six_bus_profile(six_bus))
    offers = truthful_offers(s)
    offers.update(SIX_BUS_PUBLISHED_OFFERS)
    r = clear(s, offers)
    assert r.dispatch["A"] == pytest.approx(119.08, abs=0.01)
    assert r.unit_price("A") == pytest.approx(15.20)
    assert r.unit_price("H") == pytest.approx(23.44)
    assert r.dispatch["C"] == pytest.approx(0.0)


def test_load_above_capacity(homog):
    with pytest.raises(InfeasibleMarketError):
        clear(homog.with_loads({"1": 61.0, "2": 0.0}), truthful_offers(homog))


def test_undeliverable_load(congested):
    # 40 MW at bus 2 cannot be met: B has 30 MW and the line carries 23
    with pytest.raises(InfeasibleMarketError):
        clear(congested.with_loads({"1": 0.0, "2": 60.0}), truthful_offers(congested))


def test_offer_validation(homog):
    with pytest.raises(ValueError):
        validate_offers(homog, {"A": (20.0,)})
    with pytest.raises(ValueError):
        validate_offers(homog, {"A": (120.0,), "B": (20.0,)})
    with pytest.raises(ValueError):
        validate_offers(homog, {"A": (20.0, 30.0), "B": (20.0,)})


def test_nonmonotone_rejected_unless_allowed(six_bus):
    offers = truthful_offers(six_bus)
    offers["A"] = (9.92, 10.25, 21.36, 11.26)
    with pytest.raises(ValueError):
        validate_offers(six_bus, offers)
    assert validate_offers(six_bus, offers, monotone=False)["A"][2] == 21.36


def test_csv_layout(homog):
    text = result_to_csv(homog, clear(homog, truthful_offers(homog)))
    assert text.splitlines() == ["unit,block,offer,g,lmp,profit", "A,1,20,25,20,0", "B,1,20,25,20,0"]


CASES = ["two_bus_homogeneous", "two_bus_congested_heterogeneous", "three_bus_loop", "six_bus"]


@st.composite
def case_and_offers(draw):
    s = load_case(draw(st.sampled_from(CASES)))
    offers = {}
    for u in s.units:
        prices = sorted(draw(st.floats(0, s.offer_cap, allow_nan=False)) for _ in u.blocks)
        offers[u.id] = tuple(round(p, 2) for p in prices)
    return s, offers


@settings(max_examples=40, deadline=None)
@given(case_and_offers())
def test_clearing_invariants(data):
    s, offers = data
    r = clear(s, offers)
    res = clearing_residuals(s, r)
    assert max(res.values()) <= 1e-6
    assert max(kkt_residuals(s, r).values()) <= 1e-6
    # revenue at the bus prices covers the offered cost of every dispatched block
    revenue = sum(r.unit_price(u.id) * r.dispatch[u.id] for u in s.units)
    assert revenue >= r.offer_cost - 1e-6
    # units at one bus see one price
    for u in s.units:
        assert r.unit_price(u.id) == r.lmp[u.bus]


@settings(max_examples=30, deadline=None)
@given(case_and_offers(), st.data())
def test_raising_an_offer_never_lowers_cost(data, draw):
    s, offers = data
    u = draw.draw(st.sampled_from(s.units))
    k = len(u.blocks) - 1
    bump = draw.draw(st.floats(0.01, 20.0))
    higher = dict(offers)
    higher[u.id] = offers[u.id][:k] + (min(offers[u.id][k] + bump, s.offer_cap),)
    assert clear(s, higher, tie_break=False).offer_cost >= clear(s, offers, tie_break=False).offer_cost - 1e-6


def test_uncongested_prices_equal(hetero):
    for pa in (0.0, 5.0, 19.0, 35.0, 100.0):
        lmp = clear(hetero, {"A": (pa,), "B": (20.0,)}).lmp
        assert lmp["1"] == pytest.approx(lmp["2"])


def test_tie_split_proportional_to_capacity(homog):
    s = homog.with_loads({"1": 50.0, "2": 0.0})
    bigger = s.units[1].__class__("B", "2", "GB", (OfferBlock(60.0, 20.0, 20.0),))
    from dataclasses import replace
    s2 = replace(s, units=(s.units[0], bigger))
    r = clear(s2, {"A": (30.0,), "B": (30.0,)})
    assert r.dispatch["B"] == pytest.approx(2 * r.dispatch["A"])


def test_tie_break_off_still_optimal(homog):
    on = clear(homog, truthful_offers(homog))
    off = clear(homog, truthful_offers(homog), tie_break=False)
    assert on.offer_cost == pytest.approx(off.offer_cost)
    assert abs(on.dispatch["A"] - on.dispatch["B"]) <= 1e-6


def test_tie_break_keeps_out_of_merit_blocks_off(six_bus):
    # the tie-break stage must not trade cost slack for a sliver of an expensive block
    offers = {"A": (43.0, 66.0, 89.0, 91.0), "B": (1.5, 2.0, 2.0, 2.0), "C": (0.0, 10.0, 13.0, 24.0),
              "D": (2.0, 2.0, 8.0, 89.0), "E": (0.0, 0.0, 2.0, 12.0), "F": (1.0, 11.0, 14.0, 23.0),
              "H": (0.0, 2.0, 10.0, 37.0), "J": (10.0, 10.0, 10.0, 90.0)}
    r = clear(six_bus, offers)
    assert r.lmp["5"] == pytest.approx(89.0)
    assert r.block_dispatch["J"][3] == 0.0
    assert max(kkt_residuals(six_bus, r).values()) <= 1e-6
