import math
from dataclasses import replace

import numpy as np
import pytest

from mitbid.bidding import Strategy, evaluate_strategy
from mitbid.network import OfferBlock
from mitbid.oracle import (
    GridSpec, GridTooLargeError, brute_force_bid, symmetric_play, within_one_step,
)


@pytest.fixture(scope="module")
def two_block(homog):
    a, b = homog.units
    a2 = replace(a, blocks=(OfferBlock(15.0, 10.0, 10.0), OfferBlock(15.0, 14.0, 14.0)))
    return replace(homog, units=(a2, b))


def test_grid_axes():
    g = GridSpec.uniform(1, 0.0, 1.0, 0.25)
    assert g.n_points == 5
    assert g.axes()[0].tolist() == [0.0, 0.25, 0.5, 0.75, 1.0]
    assert GridSpec.single([3.0, 4.0]).n_points == 1


def test_grid_validation():
    with pytest.raises(ValueError):
        GridSpec.uniform(1, 0.0, 10.0, 0.0)
    with pytest.raises(ValueError):
        GridSpec.uniform(3, 0.0, 10.0, 1.0)
    with pytest.raises(ValueError):
        GridSpec((5.0,), (1.0,), (1.0,))
    with pytest.raises(GridTooLargeError):
        GridSpec.uniform(2, 0.0, 100.0, 0.01)


def test_homogeneous_conduct(homog):
    res = brute_force_bid(homog, "conduct", GridSpec.uniform(1, 0.0, 100.0, 0.5))
    assert res.best_prices == (40.0,)
    assert res.profit == pytest.approx(400.0)


def test_unaware_expected_objective(homog):
    grid = GridSpec.uniform(1, 0.0, 100.0, 0.5)
    expected = brute_force_bid(homog, "unaware", grid, objective="expected")
    assert expected.best_prices == (100.0,)
    assert expected.profit == pytest.approx(1600.0)
    realized = brute_force_bid(homog, "unaware", grid)
    assert realized.profit == pytest.approx(400.0)


def test_single_point_is_nonstrategic(homog, hetero):
    for s in (homog, hetero):
        res = brute_force_bid(s, "nonstrategic", GridSpec.single([s.unit("A").true_costs[0]]))
        assert res.profit == pytest.approx(evaluate_strategy(s, "nonstrategic").realized_profit)


def test_epsilon_variant_is_tried(hetero):
    # any offer below the rival's 20 sets the price at 20; tying it splits the load
    res = brute_force_bid(hetero, "conduct", GridSpec.uniform(1, 0.0, 100.0, 0.5))
    assert res.profit == pytest.approx(300.0, abs=1e-6)
    assert (19.99,) in res.argmax
    at_20 = next(p for p in res.surface if p.prices == (20.0,))
    assert at_20.offered == pytest.approx((19.99,))


def test_rejected_points_are_nan(homog):
    res = brute_force_bid(homog, "conduct", GridSpec.uniform(1, 0.0, 100.0, 10.0))
    by_price = {p.prices[0]: p for p in res.surface}
    assert math.isnan(by_price[50.0].profit) and by_price[50.0].offered is None
    assert not math.isnan(by_price[40.0].profit)


def test_profit_piecewise_linear_between_breakpoints(homog):
    # with A marginal the price follows A's offer and so does profit
    res = brute_force_bid(homog, "conduct", GridSpec.uniform(1, 21.0, 39.0, 1.0))
    x = np.array([p.prices[0] for p in res.surface])
    y = np.array([p.profit for p in res.surface])
    assert np.allclose(np.diff(y, 2), 0.0, atol=1e-6)
    assert np.allclose(y, 20.0 * (x - 20.0))


def test_surface_csv(homog):
    res = brute_force_bid(homog, "conduct", GridSpec.uniform(1, 0.0, 100.0, 50.0))
    lines = res.surface_to_csv().splitlines()
    assert lines[0] == "price1,price2,offered1,offered2,profit"
    assert lines[2] == "50,,,,"


@pytest.mark.parametrize("strategy", ["conduct", "impact"])
def test_two_variable_agreement(two_block, strategy):
    step = 0.5
    res = brute_force_bid(two_block, strategy, GridSpec.uniform(2, 0.0, 50.0, step))
    out = evaluate_strategy(two_block, strategy)
    assert out.realized_profit == pytest.approx(res.profit, abs=1e-6)
    assert within_one_step(out.solution.offers["A"], res, step)


def test_two_variable_unaware(two_block):
    step = 2.0
    res = brute_force_bid(two_block, "unaware", GridSpec.uniform(2, 0.0, 100.0, step), objective="expected")
    out = evaluate_strategy(two_block, "unaware")
    assert out.expected_profit == pytest.approx(res.profit, abs=1e-6)
    assert within_one_step(out.solution.offers["A"], res, step)


def test_argument_errors(homog, two_block):
    with pytest.raises(ValueError):
        brute_force_bid(homog, "conduct", objective="best")
    with pytest.raises(ValueError):
        brute_force_bid(homog, "conduct", GridSpec.uniform(2, 0.0, 10.0, 1.0))
    with pytest.raises(ValueError):
        brute_force_bid(homog, "conduct", GridSpec.uniform(1, 0.0, 150.0, 1.0))


def test_symmetric_play(homog):
    out = symmetric_play(homog, Strategy.CONDUCT_AWARE)
    assert out.offers == {"A": (40.0,), "B": (40.0,)}
    assert out.profits["A"] == pytest.approx(500.0)
    assert out.profits["B"] == pytest.approx(500.0)
    capped = symmetric_play(homog, offers={"A": (100.0,), "B": (100.0,)})
    assert capped.mitigated
    assert capped.profits == pytest.approx({"A": 0.0, "B": 0.0})
    with pytest.raises(ValueError):
        symmetric_play(homog)


def test_symmetric_play_needs_two_owners(three_bus):
    with pytest.raises(ValueError):
        symmetric_play(three_bus, "conduct")
