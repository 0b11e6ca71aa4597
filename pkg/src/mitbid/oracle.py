"""Brute-force verifier for the bidding MILP on small instances.

Every grid point of the strategic owner's free offer prices is pushed through
the operator's pipeline (conduct test, impact test, clearing) and scored by
the owner's true-cost profit. Nothing here touches the single-level model.
"""
from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .bidding import Strategy, solve_bid
from .clearing import OfferSet, clear, format_number, truthful_offers
from .mitigation import TEST_TOL, ReferenceLevels, Thresholds, reference_levels, run_pipeline, thresholds
from .network import Scenario

MAX_VARS = 2
MAX_POINTS = 1_000_000
DEFAULT_STEP = 0.25


class GridTooLargeError(ValueError):
    pass


@dataclass(frozen=True)
class GridSpec:
    """Per-variable price axes ``lower, lower + step, ..., upper``."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]
    step: tuple[float, ...]

    def __post_init__(self):
        n = len(self.lower)
        if not (len(self.upper) == len(self.step) == n):
            raise ValueError("grid bounds and steps must have the same length")
        if not 1 <= n <= MAX_VARS:
            raise ValueError(f"the oracle handles 1 to {MAX_VARS} price variables, got {n}")
        for lo, hi, st in zip(self.lower, self.upper, self.step):
            if not st > 0:
                raise ValueError(f"grid step must be positive, got {st}")
            if lo < 0 or hi < lo:
                raise ValueError(f"bad grid bounds [{lo}, {hi}]")
        if self.n_points > MAX_POINTS:
            raise GridTooLargeError(f"grid has {self.n_points} points (cap {MAX_POINTS})")

    @classmethod
    def uniform(cls, n_vars: int, lower: float, upper: float, step: float = DEFAULT_STEP) -> "GridSpec":
        return cls((lower,) * n_vars, (upper,) * n_vars, (step,) * n_vars)

    @classmethod
    def single(cls, prices: Sequence[float]) -> "GridSpec":
        return cls(tuple(prices), tuple(prices), (1.0,) * len(prices))

    def axes(self) -> list[np.ndarray]:
        out = []
        for lo, hi, st in zip(self.lower, self.upper, self.step):
            n = int(math.floor((hi - lo) / st + 1e-9)) + 1
            out.append(np.round(lo + st * np.arange(n), 10))
        return out

    @property
    def n_points(self) -> int:
        total = 1
        for lo, hi, st in zip(self.lower, self.upper, self.step):
            total *= int(math.floor((hi - lo) / st + 1e-9)) + 1
        return total


def decision_blocks(s: Scenario) -> list[tuple[str, int]]:
    return [(u.id, k) for u in s.strategic_units() for k in range(len(u.blocks))]


@dataclass(frozen=True)
class GridPoint:
    prices: tuple[float, ...]
    offered: tuple[float, ...] | None   # None: rejected by the bidding rules
    profit: float                       # nan when rejected


@dataclass(frozen=True, eq=False)
class OracleResult:
    strategy: Strategy
    blocks: tuple[tuple[str, int], ...]
    best_prices: tuple[float, ...]
    best_offer: OfferSet
    profit: float
    argmax: tuple[tuple[float, ...], ...]
    surface: tuple[GridPoint, ...] = field(repr=False)

    def surface_to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["price1", "price2", "offered1", "offered2", "profit"])
        for p in self.surface:
            prices = list(p.prices) + [None] * (2 - len(p.prices))
            offered = list(p.offered or ()) + [None] * (2 - len(p.offered or ()))
            w.writerow([_fmt(v) for v in prices + offered] + [_fmt(p.profit)])
        return buf.getvalue()


def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    return format_number(v)


def _feasible(s: Scenario, strategy: Strategy, offers: OfferSet, blocks, refs, th) -> bool:
    """Bidding rules of the strategy, checked directly on the offers."""
    for u in s.strategic_units():
        prices = offers[u.id]
        if any(p < 0 or p > s.offer_cap for p in prices):
            return False
        if any(b < a for a, b in zip(prices, prices[1:])):
            return False
    if strategy is Strategy.CONDUCT_AWARE:
        for u, k in blocks:
            if abs(offers[u][k] - refs.blocks[u][k]) > th.blocks[u][k] + TEST_TOL:
                return False
    if strategy is not Strategy.NON_STRATEGIC:
        lmp = clear(s, offers).lmp
        if any(lam > s.price_cap + TEST_TOL or lam < -TEST_TOL for lam in lmp.values()):
            return False
        if strategy is Strategy.IMPACT_AWARE:
            if any(abs(lmp[b] - refs.bus[b]) > th.bus[b] + TEST_TOL for b in s.bus_ids):
                return False
    return True


def brute_force_bid(
    s: Scenario,
    strategy: Strategy | str,
    grid: GridSpec | None = None,
    objective: str = "realized",
    blocks: Sequence[tuple[str, int]] | None = None,
) -> OracleResult:
    """Exhaustive search over the strategic owner's offer prices.

    ``objective="realized"`` scores the profit after mitigation;
    ``"expected"`` scores the profit of the submitted offers as cleared,
    which is what a mitigation-unaware bidder maximizes. ``blocks`` selects
    the free prices; all other strategic blocks stay at their truthful cost.
    At grid points whose price ties a competitor offer, the undercut price
    ``p - epsilon`` is also tried and the better of the two kept.
    """
    strategy = Strategy.parse(strategy)
    if objective not in ("realized", "expected"):
        raise ValueError(f"unknown objective {objective!r}")
    blocks = tuple(blocks) if blocks is not None else tuple(decision_blocks(s))
    if not 1 <= len(blocks) <= MAX_VARS:
        raise ValueError(f"the oracle handles 1 to {MAX_VARS} price variables, got {len(blocks)}")
    if grid is None:
        grid = GridSpec.uniform(len(blocks), 0.0, s.offer_cap)
    if len(grid.lower) != len(blocks):
        raise ValueError("grid dimension does not match the number of free prices")
    if any(hi > s.offer_cap for hi in grid.upper):
        raise ValueError("grid exceeds the offer cap")

    refs = reference_levels(s)
    th = thresholds(s, refs)
    base = truthful_offers(s)
    rival_prices = {p for u in s.competitor_units() for p in base[u.id]}
    owner = s.strategic_owner

    def offers_for(prices) -> OfferSet:
        out = {u: list(p) for u, p in base.items()}
        for (u, k), p in zip(blocks, prices):
            out[u][k] = float(p)
        return {u: tuple(p) for u, p in out.items()}

    def score(prices):
        offers = offers_for(prices)
        if not _feasible(s, strategy, offers, blocks, refs, th):
            return math.nan
        rep = run_pipeline(s, offers, refs, th)
        r = rep.after if objective == "realized" else rep.before
        return r.owner_profit(owner)

    surface = []
    for prices in itertools.product(*grid.axes()):
        prices = tuple(float(p) for p in prices)
        best_here, offered = score(prices), prices
        if s.epsilon_price > 0 and any(abs(p - q) <= 1e-9 for p in prices for q in rival_prices):
            cut = tuple(p - s.epsilon_price if any(abs(p - q) <= 1e-9 for q in rival_prices) else p
                        for p in prices)
            if min(cut) >= 0:
                v = score(cut)
                if not math.isnan(v) and (math.isnan(best_here) or v > best_here + 1e-9):
                    best_here, offered = v, cut
        surface.append(GridPoint(prices, None if math.isnan(best_here) else offered, best_here))

    values = np.array([p.profit for p in surface])
    if np.all(np.isnan(values)):
        raise ValueError("no grid point satisfies the bidding rules")
    best = float(np.nanmax(values))
    tol = 1e-6 * max(1.0, abs(best))
    winners = [p for p in surface if not math.isnan(p.profit) and p.profit >= best - tol]
    # product order is lexicographic, so the first winner has the lowest prices
    top = winners[0]
    return OracleResult(
        strategy, blocks, top.offered, offers_for(top.offered), top.profit,
        tuple(p.offered for p in winners), tuple(surface),
    )


def within_one_step(prices: Sequence[float], result: OracleResult, step: float) -> bool:
    """True if ``prices`` lies within one grid step of some maximizer."""
    return any(
        all(abs(a - b) <= step + 1e-9 for a, b in zip(prices, cand)) for cand in result.argmax
    )


# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SymmetricOutcome:
    offers: OfferSet
    profits: dict[str, float]       # per unit, after mitigation
    mitigated: bool


def symmetric_play(
    s: Scenario,
    strategy: Strategy | str | None = None,
    offers: Mapping[str, Sequence[float]] | None = None,
) -> SymmetricOutcome:
    """Every owner bids at once; evaluate the joint profile through the pipeline.

    With ``strategy`` each owner's offer is its own single-leader optimum
    (the other owners treated as truthful). ``offers`` evaluates an explicit
    profile instead.
    """
    if len(s.units) != 2 or len(s.owners()) != 2:
        raise ValueError("symmetric play supports two single-owner units only")
    if (strategy is None) == (offers is None):
        raise ValueError("pass exactly one of strategy or offers")
    if offers is None:
        strategy = Strategy.parse(strategy)
        profile = {}
        for owner in s.owners():
            sol = solve_bid(replace(s, strategic_owner=owner), strategy)
            for u in s.units:
                if u.owner == owner:
                    profile[u.id] = sol.offers[u.id]
    else:
        profile = {u: tuple(float(p) for p in v) for u, v in offers.items()}
    rep = run_pipeline(s, profile)
    return SymmetricOutcome(rep.submitted_offers, dict(rep.after.profit), rep.mitigated)
