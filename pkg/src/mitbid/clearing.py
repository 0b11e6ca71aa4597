"""DC-OPF market clearing with locational marginal prices.

Orientation: each branch carries positive flow from ``from_bus`` to
``to_bus``; the bus with the lowest id is the angle reference (theta = 0).
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Mapping, Sequence

import numpy as np

from .lp import EQ, GE, LE, LpSolution, solve_lp
from .milp import LinearModel
from .network import Scenario

OfferSet = dict[str, tuple[float, ...]]

TIE_TOL = 1e-9


class InfeasibleMarketError(RuntimeError):
    """Load cannot be served with the available capacity and network."""


def truthful_offers(s: Scenario) -> OfferSet:
    return {u.id: u.true_costs for u in s.units}


def submitted_offers(s: Scenario) -> OfferSet:
    return {u.id: tuple(b.offered_price for b in u.blocks) for u in s.units}


def validate_offers(s: Scenario, offers: Mapping[str, Sequence[float]], monotone: bool = True) -> OfferSet:
    """Check coverage, block counts and price range; optionally block order.

    Submitted curves must be nondecreasing. Curves after mitigation need not
    be, since the operator resets failing blocks one at a time.
    """
    out: OfferSet = {}
    for u in s.units:
        if u.id not in offers:
            raise ValueError(f"no offer for unit {u.id}")
        prices = tuple(float(p) for p in offers[u.id])
        if len(prices) != len(u.blocks):
            raise ValueError(f"unit {u.id}: expected {len(u.blocks)} block prices, got {len(prices)}")
        for p in prices:
            if not (-1e-9 <= p <= s.offer_cap + 1e-9):
                raise ValueError(f"unit {u.id}: offer {p} outside [0, {s.offer_cap}]")
        if monotone and any(b < a - 1e-9 for a, b in zip(prices, prices[1:])):
            raise ValueError(f"unit {u.id}: block prices must be nondecreasing, got {prices}")
        out[u.id] = prices
    extra = set(offers) - {u.id for u in s.units}
    if extra:
        raise ValueError(f"offers for unknown units {sorted(extra)}")
    return out


@dataclass(frozen=True)
class DispatchIndex:
    """Variable and row positions of the dispatch problem inside a model."""

    g: dict[tuple[str, int], int]
    p: tuple[int, ...]
    theta: dict[str, int | None]
    balance: dict[str, int]
    flow: tuple[int, ...]


def add_dispatch_primal(model: LinearModel, s: Scenario) -> DispatchIndex:
    """Add dispatch, flow and angle variables with their primal constraints."""
    g = {}
    for u in s.units:
        for k, blk in enumerate(u.blocks):
            g[(u.id, k)] = model.add_var(f"g[{u.id},{k}]", 0.0, blk.capacity_mw)
    p = tuple(
        model.add_var(f"p[{br.from_bus},{br.to_bus}]", -br.limit_mw, br.limit_mw) for br in s.branches
    )
    ref = s.reference_bus
    theta = {b: (None if b == ref else model.add_var(f"theta[{b}]", -math.pi, math.pi)) for b in s.bus_ids}
    balance = {}
    for bus in s.buses:
        terms: dict[int, float] = {}
        for u in s.units:
            if u.bus == bus.id:
                for k in range(len(u.blocks)):
                    terms[g[(u.id, k)]] = 1.0
        for l, br in enumerate(s.branches):
            if br.from_bus == bus.id:
                terms[p[l]] = terms.get(p[l], 0.0) - 1.0
            if br.to_bus == bus.id:
                terms[p[l]] = terms.get(p[l], 0.0) + 1.0
        balance[bus.id] = model.add_row(terms, EQ, bus.load_mw, f"balance[{bus.id}]")
    flow = []
    for l, br in enumerate(s.branches):
        k = s.base_mva * br.susceptance
        terms = {p[l]: 1.0}
        if theta[br.from_bus] is not None:
            terms[theta[br.from_bus]] = -k
        if theta[br.to_bus] is not None:
            terms[theta[br.to_bus]] = terms.get(theta[br.to_bus], 0.0) + k
        flow.append(model.add_row(terms, EQ, 0.0, f"flow[{br.from_bus},{br.to_bus}]"))
    return DispatchIndex(g, p, theta, balance, tuple(flow))


@dataclass(frozen=True, eq=False)
class ClearingResult:
    """Dispatch, prices and multipliers of one market clearing.

    ``profit`` uses true costs: ``sum_b (lmp[bus] - true_cost_b) * g_b``.
    """

    offers: OfferSet
    block_dispatch: dict[str, tuple[float, ...]]
    lmp: dict[str, float]
    flows: tuple[float, ...]
    angles: dict[str, float]
    flow_duals: tuple[float, ...]
    sigma_minus: tuple[float, ...]
    sigma_plus: tuple[float, ...]
    mu_minus: dict[str, tuple[float, ...]]
    mu_plus: dict[str, tuple[float, ...]]
    delta_minus: dict[str, float]
    delta_plus: dict[str, float]
    offer_cost: float
    true_cost: float
    profit: dict[str, float]
    unit_bus: dict[str, str]
    unit_owner: dict[str, str]

    @property
    def dispatch(self) -> dict[str, float]:
        return {u: float(sum(g)) for u, g in self.block_dispatch.items()}

    def unit_price(self, unit_id: str) -> float:
        return self.lmp[self.unit_bus[unit_id]]

    def owner_profit(self, owner: str) -> float:
        return sum(v for u, v in self.profit.items() if self.unit_owner[u] == owner)

    def total_load(self, s: Scenario) -> float:
        return s.total_load

    def welfare(self, s: Scenario) -> float:
        """Utility of served (inelastic) load minus true generation cost."""
        return s.utility * s.total_load - self.true_cost


def _tie_pairs(s: Scenario, offers: OfferSet):
    """Adjacent units within each group of equal offer prices.

    A unit's blocks at the shared price are pooled, so each entry is
    ``(blocks, capacity)``; chaining the units keeps the tie-break LP linear
    in the number of tied units.
    """
    groups: list[tuple[float, dict[str, list]]] = []
    for u in s.units:
        for k, blk in enumerate(u.blocks):
            p = offers[u.id][k]
            g = next((m for q, m in groups if abs(p - q) <= TIE_TOL), None)
            if g is None:
                g = {}
                groups.append((p, g))
            pool = g.setdefault(u.id, [(), 0.0])
            pool[0] += ((u.id, k),)
            pool[1] += blk.capacity_mw
    pairs = []
    for _, g in groups:
        pools = [tuple(v) for v in g.values()]
        pairs.extend(zip(pools, pools[1:]))
    return pairs


def build_dispatch_model(s: Scenario, offers: OfferSet) -> tuple[LinearModel, DispatchIndex]:
    model = LinearModel()
    idx = add_dispatch_primal(model, s)
    model.add_objective({idx.g[(u.id, k)]: offers[u.id][k] for u in s.units for k in range(len(u.blocks))})
    return model, idx


def clear(
    s: Scenario, offers: Mapping[str, Sequence[float]], tie_break: bool = True, monotone: bool = True
) -> ClearingResult:
    """Solve the operator's dispatch problem for the submitted offers.

    With ``tie_break`` set, blocks of different units offered at the same
    price are dispatched in proportion to capacity: a second LP minimizes the
    proportionality deviation over the cost-optimal face. Prices always come
    from the first (cost) LP.
    """
    offers = validate_offers(s, offers, monotone)
    cap = sum(u.capacity_mw for u in s.units)
    if s.total_load > cap + 1e-9:
        raise InfeasibleMarketError(f"load {s.total_load:.6g} MW exceeds capacity {cap:.6g} MW")
    model, idx = build_dispatch_model(s, offers)
    lp = model.to_lp()
    sol = solve_lp(lp)
    if not sol.optimal:
        raise InfeasibleMarketError(f"dispatch problem is {sol.status.value}")
    x = sol.x
    pairs = _tie_pairs(s, offers) if tie_break else []
    if pairs:
        x = _tie_break_dispatch(model, idx, pairs, sol)
    x = _fill_in_block_order(s, offers, idx, x)
    return _make_result(s, offers, idx, x, sol.duals, sol.reduced_costs)


def _fill_in_block_order(s: Scenario, offers: OfferSet, idx: DispatchIndex, x: np.ndarray) -> np.ndarray:
    """Within one unit, blocks offered at the same price load in block order.

    The moved output stays at the same bus and price, so cost, flows and
    duals are unchanged; only the unit's true cost follows its curve.
    """
    x = np.array(x, dtype=float)
    for u in s.units:
        groups: dict[float, list[int]] = {}
        for k in range(len(u.blocks)):
            p = offers[u.id][k]
            key = next((q for q in groups if abs(p - q) <= TIE_TOL), p)
            groups.setdefault(key, []).append(k)
        for ks in groups.values():
            if len(ks) < 2:
                continue
            left = sum(x[idx.g[(u.id, k)]] for k in ks)
            for k in ks:
                take = min(u.blocks[k].capacity_mw, max(left, 0.0))
                x[idx.g[(u.id, k)]] = take
                left -= take
    return x


def _tie_break_dispatch(model: LinearModel, idx: DispatchIndex, pairs, first: LpSolution) -> np.ndarray:
    n_base = model.n_vars
    cost = first.objective
    # stay on the optimal face: variables with a nonzero reduced cost keep their bound
    for j in range(n_base):
        if abs(first.reduced_costs[j]) > 1e-9:
            model.lower[j] = model.upper[j] = float(first.x[j])
    cost_terms = dict(model.objective)
    model.objective = {}
    model.add_row(cost_terms, LE, cost + 1e-9 * max(1.0, abs(cost)), "cost_optimal_face")
    for n, ((blocks_a, ca), (blocks_b, cb)) in enumerate(pairs):
        # t >= |ca * g_b - cb * g_a| with g_a, g_b the pooled dispatch
        t = model.add_var(f"tb[{n}]", 0.0)
        for sign in (1.0, -1.0):
            row = {t: 1.0}
            for key in blocks_b:
                row[idx.g[key]] = -sign * ca
            for key in blocks_a:
                row[idx.g[key]] = sign * cb
            model.add_row(row, GE, 0.0)
        model.add_objective({t: 1.0})
    sol = solve_lp(model.to_lp())
    if not sol.optimal:
        raise InfeasibleMarketError(f"tie-break stage is {sol.status.value}")
    return sol.x[:n_base]


def _make_result(s, offers, idx: DispatchIndex, x, duals, reduced) -> ClearingResult:
    block_dispatch = {u.id: tuple(float(x[idx.g[(u.id, k)]]) for k in range(len(u.blocks))) for u in s.units}
    lmp = {b: float(duals[idx.balance[b]]) for b in s.bus_ids}
    angles = {b: (0.0 if j is None else float(x[j])) for b, j in idx.theta.items()}
    flows = tuple(float(x[j]) for j in idx.p)
    d_p = [float(reduced[j]) for j in idx.p]
    mu_m, mu_p = {}, {}
    for u in s.units:
        d = [float(reduced[idx.g[(u.id, k)]]) for k in range(len(u.blocks))]
        mu_m[u.id] = tuple(max(v, 0.0) for v in d)
        mu_p[u.id] = tuple(max(-v, 0.0) for v in d)
    dl, dp = {}, {}
    for b, j in idx.theta.items():
        v = 0.0 if j is None else float(reduced[j])
        dl[b], dp[b] = max(v, 0.0), max(-v, 0.0)
    offer_cost = sum(offers[u][k] * g for u, gs in block_dispatch.items() for k, g in enumerate(gs))
    true_cost = 0.0
    profit = {}
    for u in s.units:
        price = lmp[u.bus]
        gs = block_dispatch[u.id]
        true_cost += sum(b.true_cost * g for b, g in zip(u.blocks, gs))
        profit[u.id] = float(sum((price - b.true_cost) * g for b, g in zip(u.blocks, gs)))
    return ClearingResult(
        offers=dict(offers),
        block_dispatch=block_dispatch,
        lmp=lmp,
        flows=flows,
        angles=angles,
        flow_duals=tuple(float(duals[r]) for r in idx.flow),
        sigma_minus=tuple(max(v, 0.0) for v in d_p),
        sigma_plus=tuple(max(-v, 0.0) for v in d_p),
        mu_minus=mu_m,
        mu_plus=mu_p,
        delta_minus=dl,
        delta_plus=dp,
        offer_cost=float(offer_cost),
        true_cost=float(true_cost),
        profit=profit,
        unit_bus={u.id: u.bus for u in s.units},
        unit_owner={u.id: u.owner for u in s.units},
    )


@lru_cache(maxsize=512)
def _reference_prices(s: Scenario) -> tuple[tuple[str, float], ...]:
    return tuple(clear(s, truthful_offers(s)).lmp.items())


def reference_prices(s: Scenario) -> dict[str, float]:
    """Competitive LMPs: clearing with every unit offering its reference (true) cost."""
    return dict(_reference_prices(s))


def clearing_residuals(s: Scenario, r: ClearingResult) -> dict[str, float]:
    """Largest violations of nodal balance, flow definition and limits."""
    bal = 0.0
    for bus in s.buses:
        inj = sum(sum(r.block_dispatch[u.id]) for u in s.units if u.bus == bus.id)
        net = sum(-f for br, f in zip(s.branches, r.flows) if br.from_bus == bus.id)
        net += sum(f for br, f in zip(s.branches, r.flows) if br.to_bus == bus.id)
        bal = max(bal, abs(inj + net - bus.load_mw))
    flow_def = max(
        (abs(f - s.base_mva * br.susceptance * (r.angles[br.from_bus] - r.angles[br.to_bus]))
         for br, f in zip(s.branches, r.flows)),
        default=0.0,
    )
    limit = max((max(abs(f) - br.limit_mw, 0.0) for br, f in zip(s.branches, r.flows)), default=0.0)
    gen = 0.0
    for u in s.units:
        for blk, g in zip(u.blocks, r.block_dispatch[u.id]):
            gen = max(gen, -g, g - blk.capacity_mw)
    angle = max(max(abs(a) - math.pi, 0.0) for a in r.angles.values())
    return {"balance": bal, "flow": flow_def, "limit": limit, "generation": max(gen, 0.0), "angle": angle}


def result_rows(s: Scenario, r: ClearingResult) -> list[dict]:
    rows = []
    for u in s.units:
        for k, g in enumerate(r.block_dispatch[u.id]):
            rows.append({
                "unit": u.id,
                "block": k + 1,
                "offer": r.offers[u.id][k],
                "g": g,
                "lmp": r.lmp[u.bus],
                "profit": (r.lmp[u.bus] - u.blocks[k].true_cost) * g,
            })
    return rows


def format_number(v: float, digits: int = 4) -> str:
    v = round(float(v), digits)
    if v == 0:
        v = 0.0
    return f"{v:.{digits}f}".rstrip("0").rstrip(".") if "." in f"{v:.{digits}f}" else f"{v}"


def result_to_csv(s: Scenario, r: ClearingResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["unit", "block", "offer", "g", "lmp", "profit"])
    for row in result_rows(s, r):
        w.writerow([row["unit"], row["block"], format_number(row["offer"]), format_number(row["g"]),
                    format_number(row["lmp"]), format_number(row["profit"])])
    return buf.getvalue()
