"""Optimal offers for one strategic GenCo, as a single-level MILP.

The leader maximizes its profit subject to the operator's dispatch problem.
The dispatch problem is replaced by its KKT system: primal feasibility, dual
stationarity, and complementarity pairs encoded as SOS1 sets. The bilinear
revenue term is replaced by the strong-duality identity

    sum_{i in G} lam_m(i) g_i = - sum_{j not in G} c_j g_j + sum_m lam_m D_m
                                - sum_j mu+_j Gmax_j - sum_l (sig-_l + sig+_l) Pmax_l
                                - sum_m (del-_m + del+_m) pi

which is linear because competitor offers are fixed.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .clearing import (
    ClearingResult,
    DispatchIndex,
    OfferSet,
    add_dispatch_primal,
    clear,
    format_number,
    truthful_offers,
)
from .milp import Affine, LinearModel, MilpProblem, MilpSolution, solve_milp
from .mitigation import (
    TEST_TOL,
    MitigationReport,
    ReferenceLevels,
    Thresholds,
    reference_levels,
    run_pipeline,
    thresholds,
)
from .lp import EQ, GE, LE
from .network import Scenario

KKT_TOL = 1e-6
# small reward on offered prices: picks the highest offer among equally
# profitable ones (keeps tied-offer optima at the competitor's price)
OFFER_PREFERENCE = 1e-4
OFFER_DIGITS = 7


class Strategy(str, Enum):
    NON_STRATEGIC = "nonstrategic"
    MITIGATION_UNAWARE = "unaware"
    CONDUCT_AWARE = "conduct"
    IMPACT_AWARE = "impact"

    @classmethod
    def parse(cls, value) -> "Strategy":
        if isinstance(value, Strategy):
            return value
        aliases = {
            "non-strategic": cls.NON_STRATEGIC, "truthful": cls.NON_STRATEGIC,
            "mitigation-unaware": cls.MITIGATION_UNAWARE,
            "conduct-aware": cls.CONDUCT_AWARE, "impact-aware": cls.IMPACT_AWARE,
        }
        key = str(value).strip().lower()
        if key in aliases:
            return aliases[key]
        try:
            return cls(key)
        except ValueError:
            raise ValueError(f"unknown strategy {value!r}") from None

    @property
    def label(self) -> str:
        return {
            "nonstrategic": "Non-Strategic", "unaware": "Mitigation-Unaware",
            "conduct": "Conduct-Aware", "impact": "Impact-Aware",
        }[self.value]


ALL_STRATEGIES = tuple(Strategy)


class BiddingError(RuntimeError):
    pass


@dataclass
class MpecLayout:
    """Variable positions of the single-level model."""

    dispatch: DispatchIndex
    offer: dict[tuple[str, int], int]
    lam: dict[str, int]
    nu: tuple[int, ...]
    sig_minus: tuple[int, ...]
    sig_plus: tuple[int, ...]
    mu_minus: dict[tuple[str, int], int]
    mu_plus: dict[tuple[str, int], int]
    del_minus: dict[str, int]
    del_plus: dict[str, int]
    tie_break: tuple[int, ...]
    tie_pairs: tuple[tuple[str, str], ...]


@dataclass(frozen=True, eq=False)
class Mpec:
    problem: MilpProblem
    layout: MpecLayout
    model: LinearModel
    scenario: Scenario
    strategy: Strategy


def tie_break_pairs(s: Scenario) -> tuple[tuple[str, str], ...]:
    """Strategic/competitor unit pairs with identical true cost curves."""
    return tuple(
        (i.id, j.id)
        for i in s.strategic_units()
        for j in s.competitor_units()
        if i.true_costs == j.true_costs
    )


def build_mpec(
    s: Scenario,
    strategy: Strategy | str,
    refs: ReferenceLevels | None = None,
    th: Thresholds | None = None,
    combined: bool = False,
) -> Mpec:
    """Single-level MILP (maximization) for the strategic owner of ``s``.

    ``combined`` adds both the conduct and the impact rows; the strategies
    themselves use one or the other.
    """
    strategy = Strategy.parse(strategy)
    needs_refs = combined or strategy in (Strategy.CONDUCT_AWARE, Strategy.IMPACT_AWARE)
    if needs_refs:
        refs = refs or reference_levels(s)
        th = th or thresholds(s, refs)
        missing = {u.id for u in s.strategic_units()} - set(refs.blocks)
        if missing or set(s.bus_ids) - set(refs.bus):
            raise BiddingError("reference levels do not cover the scenario")
    m = LinearModel()
    strategic = {u.id for u in s.strategic_units()}

    offer = {}
    for u in s.strategic_units():
        for k, blk in enumerate(u.blocks):
            if strategy is Strategy.NON_STRATEGIC:
                offer[(u.id, k)] = m.add_var(f"c_hat[{u.id},{k}]", blk.true_cost, blk.true_cost)
            else:
                offer[(u.id, k)] = m.add_var(f"c_hat[{u.id},{k}]", 0.0, s.offer_cap)

    idx = add_dispatch_primal(m, s)

    lam_lb, lam_ub = (-math.inf, math.inf) if strategy is Strategy.NON_STRATEGIC else (0.0, s.price_cap)
    lam = {b: m.add_var(f"lambda[{b}]", lam_lb, lam_ub) for b in s.bus_ids}
    nu = tuple(m.add_var(f"nu[{br.from_bus},{br.to_bus}]", -math.inf, math.inf) for br in s.branches)
    sig_m = tuple(m.add_var(f"sigma-[{br.from_bus},{br.to_bus}]") for br in s.branches)
    sig_p = tuple(m.add_var(f"sigma+[{br.from_bus},{br.to_bus}]") for br in s.branches)
    mu_m, mu_p = {}, {}
    for u in s.units:
        for k in range(len(u.blocks)):
            mu_m[(u.id, k)] = m.add_var(f"mu-[{u.id},{k}]")
            mu_p[(u.id, k)] = m.add_var(f"mu+[{u.id},{k}]")
    free_buses = [b for b in s.bus_ids if idx.theta[b] is not None]
    del_m = {b: m.add_var(f"delta-[{b}]") for b in free_buses}
    del_p = {b: m.add_var(f"delta+[{b}]") for b in free_buses}

    # stationarity of the dispatch problem
    for u in s.units:
        for k, blk in enumerate(u.blocks):
            key = (u.id, k)
            terms = {lam[u.bus]: -1.0, mu_m[key]: -1.0, mu_p[key]: 1.0}
            if u.id in strategic:
                terms[offer[key]] = 1.0
                rhs = 0.0
            else:
                rhs = -blk.true_cost
            m.add_row(terms, EQ, rhs, f"stat_g[{u.id},{k}]")
    for l, br in enumerate(s.branches):
        m.add_row({lam[br.from_bus]: 1.0, lam[br.to_bus]: -1.0, nu[l]: -1.0, sig_m[l]: -1.0, sig_p[l]: 1.0},
                  EQ, 0.0, f"stat_p[{br.from_bus},{br.to_bus}]")
    for b in free_buses:
        terms: dict[int, float] = {del_m[b]: -1.0, del_p[b]: 1.0}
        for l, br in enumerate(s.branches):
            kb = s.base_mva * br.susceptance
            if br.from_bus == b:
                terms[nu[l]] = terms.get(nu[l], 0.0) + kb
            if br.to_bus == b:
                terms[nu[l]] = terms.get(nu[l], 0.0) - kb
        m.add_row(terms, EQ, 0.0, f"stat_theta[{b}]")

    # complementarity pairs
    for l, br in enumerate(s.branches):
        tag = f"{br.from_bus},{br.to_bus}"
        m.add_complementarity(f"cc_sig-[{tag}]", sig_m[l], Affine({idx.p[l]: 1.0}, br.limit_mw))
        m.add_complementarity(f"cc_sig+[{tag}]", sig_p[l], Affine({idx.p[l]: -1.0}, br.limit_mw))
    for u in s.units:
        for k, blk in enumerate(u.blocks):
            key = (u.id, k)
            m.add_complementarity(f"cc_mu-[{u.id},{k}]", mu_m[key], Affine({idx.g[key]: 1.0}))
            m.add_complementarity(f"cc_mu+[{u.id},{k}]", mu_p[key], Affine({idx.g[key]: -1.0}, blk.capacity_mw))
    for b in free_buses:
        m.add_complementarity(f"cc_del-[{b}]", del_m[b], Affine({idx.theta[b]: 1.0}, math.pi))
        m.add_complementarity(f"cc_del+[{b}]", del_p[b], Affine({idx.theta[b]: -1.0}, math.pi))

    # upper-level rules
    if strategy is not Strategy.NON_STRATEGIC:
        for u in s.strategic_units():
            for k in range(1, len(u.blocks)):
                m.add_row({offer[(u.id, k)]: 1.0, offer[(u.id, k - 1)]: -1.0}, GE, 0.0,
                          f"nondecreasing[{u.id},{k}]")
    if combined or strategy is Strategy.CONDUCT_AWARE:
        for u in s.strategic_units():
            for k in range(len(u.blocks)):
                c0, x = refs.blocks[u.id][k], th.blocks[u.id][k]
                m.add_row({offer[(u.id, k)]: 1.0}, LE, c0 + x, f"conduct_hi[{u.id},{k}]")
                m.add_row({offer[(u.id, k)]: 1.0}, GE, c0 - x, f"conduct_lo[{u.id},{k}]")
    if combined or strategy is Strategy.IMPACT_AWARE:
        for b in s.bus_ids:
            m.add_row({lam[b]: 1.0}, LE, refs.bus[b] + th.bus[b], f"impact_hi[{b}]")
            m.add_row({lam[b]: 1.0}, GE, refs.bus[b] - th.bus[b], f"impact_lo[{b}]")

    pairs = tie_break_pairs(s)
    tb = []
    for i_id, j_id in pairs:
        ui, uj = s.unit(i_id), s.unit(j_id)
        gi = {idx.g[(i_id, k)]: 1.0 for k in range(len(ui.blocks))}
        gj = {idx.g[(j_id, k)]: 1.0 for k in range(len(uj.blocks))}
        ci, cj = ui.capacity_mw, uj.capacity_mw
        t1 = m.add_var(f"tb1[{i_id},{j_id}]")
        t2 = m.add_var(f"tb2[{i_id},{j_id}]")
        # tb1 >= Ci gj - Cj gi ; tb2 >= Cj gi - Ci gj
        r1 = {t1: 1.0, **{v: -ci for v in gj}}
        for v in gi:
            r1[v] = r1.get(v, 0.0) + cj
        r2 = {t2: 1.0, **{v: ci for v in gj}}
        for v in gi:
            r2[v] = r2.get(v, 0.0) - cj
        m.add_row(r1, GE, 0.0, f"tb1[{i_id},{j_id}]")
        m.add_row(r2, GE, 0.0, f"tb2[{i_id},{j_id}]")
        tb += [t1, t2]

    # objective: strong-duality revenue minus true cost minus tie-break penalty
    obj: dict[int, float] = {}

    def add(j, c):
        obj[j] = obj.get(j, 0.0) + c

    for bus in s.buses:
        add(lam[bus.id], bus.load_mw)
    for u in s.units:
        for k, blk in enumerate(u.blocks):
            key = (u.id, k)
            if u.id in strategic:
                add(idx.g[key], -blk.true_cost)
            else:
                add(idx.g[key], -blk.true_cost)
                add(mu_p[key], -blk.capacity_mw)
    for l, br in enumerate(s.branches):
        add(sig_m[l], -br.limit_mw)
        add(sig_p[l], -br.limit_mw)
    for b in free_buses:
        add(del_m[b], -math.pi)
        add(del_p[b], -math.pi)
    for t in tb:
        add(t, -s.tie_break_penalty)
    if strategy is not Strategy.NON_STRATEGIC:
        for j in offer.values():
            add(j, OFFER_PREFERENCE)
    m.add_objective(obj)

    layout = MpecLayout(idx, offer, lam, nu, sig_m, sig_p, mu_m, mu_p, del_m, del_p, tuple(tb), pairs)
    return Mpec(m.to_milp(maximize=True), layout, m, s, strategy)


# ---------------------------------------------------------------------------
# reading a MILP solution back


def _offers_from(mpec: Mpec, x: np.ndarray) -> OfferSet:
    s, lay = mpec.scenario, mpec.layout
    offers = truthful_offers(s)
    for u in s.strategic_units():
        prices = [min(max(round(float(x[lay.offer[(u.id, k)]]), OFFER_DIGITS), 0.0), s.offer_cap)
                  for k in range(len(u.blocks))]
        offers[u.id] = tuple(prices)
    return offers


def predicted_result(mpec: Mpec, x: np.ndarray) -> ClearingResult:
    """The dispatch and prices the leader anticipates at a MILP solution."""
    s, lay = mpec.scenario, mpec.layout
    idx = lay.dispatch
    offers = _offers_from(mpec, x)
    block_dispatch = {u.id: tuple(float(x[idx.g[(u.id, k)]]) for k in range(len(u.blocks))) for u in s.units}
    lmp = {b: float(x[j]) for b, j in lay.lam.items()}
    profit, true_cost, offer_cost = {}, 0.0, 0.0
    for u in s.units:
        gs = block_dispatch[u.id]
        profit[u.id] = float(sum((lmp[u.bus] - b.true_cost) * g for b, g in zip(u.blocks, gs)))
        true_cost += sum(b.true_cost * g for b, g in zip(u.blocks, gs))
        offer_cost += sum(p * g for p, g in zip(offers[u.id], gs))
    return ClearingResult(
        offers=offers,
        block_dispatch=block_dispatch,
        lmp=lmp,
        flows=tuple(float(x[j]) for j in idx.p),
        angles={b: (0.0 if j is None else float(x[j])) for b, j in idx.theta.items()},
        flow_duals=tuple(float(x[j]) for j in lay.nu),
        sigma_minus=tuple(float(x[j]) for j in lay.sig_minus),
        sigma_plus=tuple(float(x[j]) for j in lay.sig_plus),
        mu_minus={u.id: tuple(float(x[lay.mu_minus[(u.id, k)]]) for k in range(len(u.blocks))) for u in s.units},
        mu_plus={u.id: tuple(float(x[lay.mu_plus[(u.id, k)]]) for k in range(len(u.blocks))) for u in s.units},
        delta_minus={b: float(x[lay.del_minus[b]]) if b in lay.del_minus else 0.0 for b in s.bus_ids},
        delta_plus={b: float(x[lay.del_plus[b]]) if b in lay.del_plus else 0.0 for b in s.bus_ids},
        offer_cost=float(offer_cost),
        true_cost=float(true_cost),
        profit=profit,
        unit_bus={u.id: u.bus for u in s.units},
        unit_owner={u.id: u.owner for u in s.units},
    )


def strong_duality_revenue(s: Scenario, r: ClearingResult) -> float:
    """Right-hand side of the strong-duality identity for the strategic revenue."""
    strategic = {u.id for u in s.strategic_units()}
    total = sum(r.lmp[b.id] * b.load_mw for b in s.buses)
    for u in s.units:
        if u.id in strategic:
            continue
        for k, blk in enumerate(u.blocks):
            total -= r.offers[u.id][k] * r.block_dispatch[u.id][k]
            total -= r.mu_plus[u.id][k] * blk.capacity_mw
    for l, br in enumerate(s.branches):
        total -= (r.sigma_minus[l] + r.sigma_plus[l]) * br.limit_mw
    total -= sum((r.delta_minus[b] + r.delta_plus[b]) * math.pi for b in s.bus_ids)
    return total


def direct_revenue(s: Scenario, r: ClearingResult) -> float:
    return sum(r.lmp[u.bus] * sum(r.block_dispatch[u.id]) for u in s.strategic_units())


def kkt_residuals(s: Scenario, r: ClearingResult) -> dict[str, float]:
    """Stationarity and complementarity residuals of a dispatch outcome.

    Complementarity is reported as ``|y * g| / max(1, |y| + |g|)``.
    """
    stat = 0.0
    for u in s.units:
        for k in range(len(u.blocks)):
            stat = max(stat, abs(r.offers[u.id][k] - r.lmp[u.bus] - r.mu_minus[u.id][k] + r.mu_plus[u.id][k]))
    for l, br in enumerate(s.branches):
        stat = max(stat, abs(r.lmp[br.from_bus] - r.lmp[br.to_bus] - r.flow_duals[l]
                             - r.sigma_minus[l] + r.sigma_plus[l]))
    ref = s.reference_bus
    for b in s.bus_ids:
        if b == ref:
            continue
        acc = -r.delta_minus[b] + r.delta_plus[b]
        for l, br in enumerate(s.branches):
            kb = s.base_mva * br.susceptance
            if br.from_bus == b:
                acc += kb * r.flow_duals[l]
            if br.to_bus == b:
                acc -= kb * r.flow_duals[l]
        stat = max(stat, abs(acc))

    def scaled(y, g):
        return abs(y * g) / max(1.0, abs(y) + abs(g))

    comp = 0.0
    sign = 0.0
    for l, br in enumerate(s.branches):
        f = r.flows[l]
        comp = max(comp, scaled(r.sigma_minus[l], br.limit_mw + f), scaled(r.sigma_plus[l], br.limit_mw - f))
        sign = max(sign, -r.sigma_minus[l], -r.sigma_plus[l])
    for u in s.units:
        for k, blk in enumerate(u.blocks):
            g = r.block_dispatch[u.id][k]
            comp = max(comp, scaled(r.mu_minus[u.id][k], g), scaled(r.mu_plus[u.id][k], blk.capacity_mw - g))
            sign = max(sign, -r.mu_minus[u.id][k], -r.mu_plus[u.id][k])
    for b in s.bus_ids:
        th = r.angles[b]
        comp = max(comp, scaled(r.delta_minus[b], math.pi + th), scaled(r.delta_plus[b], math.pi - th))
        sign = max(sign, -r.delta_minus[b], -r.delta_plus[b])
    return {"stationarity": stat, "complementarity": comp, "dual_sign": max(sign, 0.0)}


# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class BilevelSolution:
    strategy: Strategy
    offers: OfferSet
    predicted: ClearingResult
    expected_profit: float
    nodes: int = 0
    gap: float = 0.0
    epsilon_applied: bool = False
    kkt: dict = field(default_factory=dict)
    milp: MilpSolution | None = None

    def strategic_offers(self, s: Scenario) -> OfferSet:
        return {u.id: self.offers[u.id] for u in s.strategic_units()}


def strict_inequality_offer(price: float, s: Scenario) -> float:
    """Undercut ``price`` by the scenario's epsilon (never below zero)."""
    return max(price - s.epsilon_price, 0.0)


def _satisfies_rules(s, strategy, offers, refs, th, combined) -> bool:
    for u in s.strategic_units():
        prices = offers[u.id]
        if any(p < -1e-9 or p > s.offer_cap + 1e-9 for p in prices):
            return False
        if any(b < a - 1e-9 for a, b in zip(prices, prices[1:])):
            return False
        if combined or strategy is Strategy.CONDUCT_AWARE:
            for p, c0, x in zip(prices, refs.blocks[u.id], th.blocks[u.id]):
                if abs(p - c0) > x + TEST_TOL:
                    return False
    if combined or strategy is Strategy.IMPACT_AWARE:
        r = clear(s, offers)
        for b in s.bus_ids:
            if abs(r.lmp[b] - refs.bus[b]) > th.bus[b] + TEST_TOL:
                return False
    return True


def _undercut(s: Scenario, offers: OfferSet) -> OfferSet | None:
    """Lower every strategic block tied with a competitor block by epsilon."""
    if s.epsilon_price <= 0:
        return None
    rival = [p for u in s.competitor_units() for p in offers[u.id]]
    out = dict(offers)
    changed = False
    for u in s.strategic_units():
        prices = list(offers[u.id])
        for k, p in enumerate(prices):
            if any(abs(p - q) <= 1e-6 for q in rival) and p > 0:
                new = strict_inequality_offer(p, s)
                prices[k] = new
                for j in range(k):
                    prices[j] = min(prices[j], new)
                changed = True
        out[u.id] = tuple(round(p, OFFER_DIGITS) for p in prices)
    return out if changed else None


def solve_bid(
    s: Scenario,
    strategy: Strategy | str,
    refs: ReferenceLevels | None = None,
    th: Thresholds | None = None,
    combined: bool = False,
    node_limit: int = 200_000,
    lp_solver: str = "simplex",
) -> BilevelSolution:
    """Optimal offer of the strategic owner under ``strategy``.

    ``lp_solver="highs"`` speeds up the branch-and-bound nodes on the larger
    cases; see :func:`mitbid.milp.solve_milp`.
    """
    strategy = Strategy.parse(strategy)
    refs = refs or reference_levels(s)
    th = th or thresholds(s, refs)
    if strategy is Strategy.NON_STRATEGIC:
        offers = truthful_offers(s)
        r = clear(s, offers)
        return BilevelSolution(strategy, offers, r, r.owner_profit(s.strategic_owner),
                               kkt=kkt_residuals(s, r))

    mpec = build_mpec(s, strategy, refs, th, combined)
    sol = solve_milp(mpec.problem, node_limit=node_limit, lp_solver=lp_solver)
    if not sol.optimal:
        raise BiddingError(f"{strategy.label} bidding problem is {sol.status}")
    predicted = predicted_result(mpec, sol.x)
    kkt = kkt_residuals(s, predicted)
    kkt["strong_duality"] = abs(direct_revenue(s, predicted) - strong_duality_revenue(s, predicted))
    if max(kkt.values()) > KKT_TOL * max(1.0, s.price_cap):
        raise BiddingError(f"KKT residuals above tolerance: {kkt}")
    offers = predicted.offers
    expected = predicted.owner_profit(s.strategic_owner)
    applied = False

    candidate = _undercut(s, offers)
    if candidate is not None and _satisfies_rules(s, strategy, candidate, refs, th, combined):
        base = run_pipeline(s, offers, refs, th).after.owner_profit(s.strategic_owner)
        trial = run_pipeline(s, candidate, refs, th)
        if trial.after.owner_profit(s.strategic_owner) > base + 1e-9:
            offers, applied = candidate, True
            predicted = trial.before
            expected = predicted.owner_profit(s.strategic_owner)
            kkt = kkt_residuals(s, predicted)
    return BilevelSolution(strategy, offers, predicted, expected, sol.nodes, sol.gap, applied, kkt, sol)


# ---------------------------------------------------------------------------
# outcome of a bid after the operator's mitigation


@dataclass(frozen=True, eq=False)
class BidOutcome:
    scenario: Scenario
    solution: BilevelSolution
    report: MitigationReport

    @property
    def realized_profit(self) -> float:
        return self.report.after.owner_profit(self.scenario.strategic_owner)

    @property
    def expected_profit(self) -> float:
        return self.solution.expected_profit


def evaluate_strategy(s: Scenario, strategy: Strategy | str, **kw) -> BidOutcome:
    refs = reference_levels(s)
    th = thresholds(s, refs)
    sol = solve_bid(s, strategy, refs, th, **kw)
    return BidOutcome(s, sol, run_pipeline(s, sol.offers, refs, th))


@dataclass(frozen=True)
class SweepPoint:
    fraction: float
    strategy: Strategy
    offers: tuple[tuple[str, tuple[float, ...]], ...]
    expected_profit: float
    realized_profit: float
    mitigated: bool


def threshold_sweep(s: Scenario, strategy: Strategy | str, fractions: Sequence[float]) -> list[SweepPoint]:
    """Post-mitigation profit of the strategic owner for each threshold fraction.

    The conduct and impact thresholds are both set to ``fraction`` times the
    reference levels.
    """
    from dataclasses import replace

    strategy = Strategy.parse(strategy)
    out = []
    for f in fractions:
        if not f > 0:
            raise ValueError(f"threshold fractions must be positive, got {f}")
        sf = replace(s, conduct_threshold_frac=float(f), impact_threshold_frac=float(f))
        res = evaluate_strategy(sf, strategy)
        own = tuple((u.id, res.solution.offers[u.id]) for u in s.strategic_units())
        out.append(SweepPoint(float(f), strategy, own, res.expected_profit, res.realized_profit,
                              res.report.mitigated))
    return out


def sweep_to_csv(points: Sequence[SweepPoint], label: str = "") -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["scenario", "fraction", "strategy", "expected_profit", "realized_profit", "mitigated"])
    for p in points:
        w.writerow([label, format_number(p.fraction), p.strategy.value, format_number(p.expected_profit),
                    format_number(p.realized_profit), int(p.mitigated)])
    return buf.getvalue()
