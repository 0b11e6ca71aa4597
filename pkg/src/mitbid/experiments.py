"""Case-study drivers: strategy tables, threshold sweeps and 24-hour runs."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from importlib.resources import files
from pathlib import Path
from typing import Iterable, Sequence

from .bidding import ALL_STRATEGIES, Strategy, SweepPoint, evaluate_strategy, threshold_sweep
from .clearing import clear, format_number, truthful_offers
from .mitigation import report_rows, run_pipeline
from .network import DemandProfile, Scenario, load_demand_profile, load_scenario, scale_loads

DATA = files("mitbid") / "data"

CASES = {
    "two_bus_homogeneous": "two_bus_homogeneous.json",
    "two_bus_heterogeneous": "two_bus_heterogeneous.json",
    "two_bus_congested": "two_bus_congested.json",
    "two_bus_congested_heterogeneous": "two_bus_congested_heterogeneous.json",
    "three_bus_loop": "three_bus_loop.json",
    "six_bus": "six_bus.json",
}

# offers of GenCo G at 14:00 as published for the conduct-aware strategy
SIX_BUS_PUBLISHED_OFFERS = {
    "A": (9.92, 10.25, 15.20, 15.20),
    "C": (18.60, 20.03, 21.67, 22.72),
    "H": (10.08, 10.66, 11.09, 23.44),
}


def data_path(name: str) -> Path:
    return Path(str(DATA / name))


def load_case(name: str) -> Scenario:
    if name not in CASES:
        raise KeyError(f"unknown case {name!r}; known: {', '.join(CASES)}")
    return load_scenario(data_path(CASES[name]))


def six_bus_profile(s: Scenario | None = None) -> DemandProfile:
    s = s or load_case("six_bus")
    return load_demand_profile(data_path("six_bus_demand.csv"), s.load_shares)


def fraction_range(lo: float, hi: float, step: float) -> list[float]:
    if not step > 0 or lo <= 0 or hi < lo:
        raise ValueError(f"bad threshold range {lo}:{hi}:{step}")
    n = int(round((hi - lo) / step))
    out = [round(lo + k * step, 10) for k in range(n + 1)]
    return [f for f in out if f <= hi + 1e-9]


# ---------------------------------------------------------------------------
# before/after tables


TABLE_HEADER = ["strategy", "unit", "offer", "g", "lmp", "profit_expected",
                "offer_after", "g_after", "lmp_after", "profit"]


def _cell(v) -> str:
    if v is None:
        return "-"
    if isinstance(v, tuple):
        return "/".join(format_number(p) for p in v)
    return format_number(v)


def strategy_table(s: Scenario, strategies: Iterable[Strategy] = ALL_STRATEGIES, **kw) -> str:
    """Before/after mitigation rows for every unit under each strategy."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TABLE_HEADER)
    for st in strategies:
        out = evaluate_strategy(s, st, **kw)
        for r in report_rows(s, out.report):
            w.writerow([st.label, r["unit"]] + [_cell(r[k]) for k in
                        ("offer", "g", "lmp", "profit", "offer_after", "g_after", "lmp_after", "profit_after")])
    return buf.getvalue()


def six_bus_table(s: Scenario, offers=None) -> str:
    """GenCo G's units at 14:00 under the given (default: published) offers."""
    own = dict(offers or SIX_BUS_PUBLISHED_OFFERS)
    full = truthful_offers(s)
    full.update({u: tuple(p) for u, p in own.items()})
    r = clear(s, full)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["unit", "offer1", "offer2", "offer3", "offer4", "g", "lmp", "profit"])
    for u in s.strategic_units():
        w.writerow([u.id] + [format_number(p) for p in full[u.id]]
                   + [format_number(r.dispatch[u.id]), format_number(r.unit_price(u.id)),
                      format_number(r.profit[u.id])])
    return buf.getvalue()


def case_tables(lp_solver: str = "highs") -> dict[str, str]:
    """All reproducible tables as CSV text, keyed by file name."""
    six = scale_loads(load_case("six_bus"), 14, six_bus_profile())
    return {
        "table_homogeneous.csv": strategy_table(load_case("two_bus_homogeneous")),
        "table_heterogeneous.csv": strategy_table(load_case("two_bus_heterogeneous")),
        "table_congested.csv": strategy_table(load_case("two_bus_congested")),
        "table_three_bus.csv": strategy_table(load_case("three_bus_loop")),
        "table_six_bus_published.csv": six_bus_table(six),
        "table_six_bus_conduct.csv": strategy_table(six, [Strategy.CONDUCT_AWARE], lp_solver=lp_solver),
    }


# ---------------------------------------------------------------------------
# threshold sweeps


SWEEP_CASES = {
    "uncongested": "two_bus_heterogeneous",
    "congested": "two_bus_congested_heterogeneous",
}
SWEEP_STRATEGIES = (Strategy.CONDUCT_AWARE, Strategy.IMPACT_AWARE)


def sweep_cases(fractions: Sequence[float], strategies=SWEEP_STRATEGIES, cases=None) -> dict[str, list[SweepPoint]]:
    """Post-mitigation profit against threshold fraction, per (case, strategy)."""
    out = {}
    for label, case in (cases or SWEEP_CASES).items():
        s = load_case(case) if isinstance(case, str) else case
        for st in strategies:
            out[f"{label}/{st.value}"] = threshold_sweep(s, st, fractions)
    return out


def sweep_table(results: dict[str, list[SweepPoint]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["case", "fraction", "strategy", "expected_profit", "realized_profit", "mitigated"])
    for key, points in results.items():
        case = key.split("/")[0]
        for p in points:
            w.writerow([case, format_number(p.fraction), p.strategy.value, format_number(p.expected_profit),
                        format_number(p.realized_profit), int(p.mitigated)])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# 24-hour runs


@dataclass(frozen=True)
class HourRow:
    hour: int
    strategy: Strategy
    total_mw: float
    expected_profit: float
    realized_profit: float
    welfare: float
    mitigated: bool


def hourly_run(
    s: Scenario,
    profile: DemandProfile,
    strategies: Iterable[Strategy] = ALL_STRATEGIES,
    hours: Iterable[int] | None = None,
    lp_solver: str = "highs",
) -> list[HourRow]:
    """Profit of the strategic owner and welfare, per hour and strategy.

    Welfare is measured on the post-mitigation dispatch.
    """
    rows = []
    for h in (profile.hours if hours is None else hours):
        sh = scale_loads(s, h, profile)
        for st in strategies:
            st = Strategy.parse(st)
            out = evaluate_strategy(sh, st, lp_solver=lp_solver)
            rows.append(HourRow(h, st, sh.total_load, out.expected_profit, out.realized_profit,
                                out.report.after.welfare(sh), out.report.mitigated))
    return rows


def hourly_table(rows: Sequence[HourRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["hour", "strategy", "total_mw", "expected_profit", "realized_profit", "welfare", "mitigated"])
    for r in rows:
        w.writerow([r.hour, r.strategy.value, format_number(r.total_mw), format_number(r.expected_profit),
                    format_number(r.realized_profit), format_number(r.welfare), int(r.mitigated)])
    return buf.getvalue()


def profit_identity_gap(s: Scenario, offers) -> float:
    """|utility*D - cost - (profits + consumer surplus)| for one clearing.

    Consumer surplus is ``sum_m (utility - lambda_m) D_m``; merchandising
    surplus on congested lines makes up the rest, so the gap equals the
    congestion rent and vanishes when all buses share one price.
    """
    r = clear(s, offers)
    lhs = s.utility * s.total_load - r.true_cost
    consumer = sum((s.utility - r.lmp[b.id]) * b.load_mw for b in s.buses)
    return abs(lhs - (sum(r.profit.values()) + consumer))


__all__ = [
    "CASES", "HourRow", "SIX_BUS_PUBLISHED_OFFERS", "data_path", "fraction_range", "hourly_run",
    "hourly_table", "load_case", "case_tables", "profit_identity_gap", "run_pipeline",
    "six_bus_profile", "six_bus_table", "strategy_table", "sweep_cases", "sweep_table",
]
