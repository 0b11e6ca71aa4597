"""Conduct-and-impact offer mitigation.

The operator screens each submitted block against its reference level
(conduct), then re-clears with the failing blocks reset to reference and
compares prices (impact). Impact is judged collectively: if any bus moves by
more than its threshold, every conduct-failing block is mitigated.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Iterable, Mapping

from .clearing import ClearingResult, OfferSet, clear, format_number, reference_prices, validate_offers
from .network import Scenario

# slack on the <= comparisons so LP round-off cannot flip a boundary case
TEST_TOL = 1e-6


@dataclass(frozen=True)
class ReferenceLevels:
    blocks: dict[str, tuple[float, ...]]
    bus: dict[str, float]


@dataclass(frozen=True)
class Thresholds:
    blocks: dict[str, tuple[float, ...]]
    bus: dict[str, float]


def reference_levels(s: Scenario) -> ReferenceLevels:
    """Perfect-information references: true costs and the competitive LMPs."""
    return ReferenceLevels({u.id: u.true_costs for u in s.units}, reference_prices(s))


def thresholds(s: Scenario, refs: ReferenceLevels) -> Thresholds:
    return Thresholds(
        {u: tuple(s.conduct_threshold_frac * c for c in cs) for u, cs in refs.blocks.items()},
        {b: s.impact_threshold_frac * lam for b, lam in refs.bus.items()},
    )


def conduct_test(
    offers: Mapping[str, tuple[float, ...]], refs: ReferenceLevels, th: Thresholds
) -> dict[str, tuple[bool, ...]]:
    """Per-block verdicts; ``True`` means the block passes (equality passes)."""
    out = {}
    for unit, prices in offers.items():
        if unit not in refs.blocks or len(refs.blocks[unit]) != len(prices):
            raise KeyError(f"missing reference level for unit {unit}")
        out[unit] = tuple(
            abs(p - c0) <= x + TEST_TOL for p, c0, x in zip(prices, refs.blocks[unit], th.blocks[unit])
        )
    return out


def failed_blocks(verdicts: Mapping[str, tuple[bool, ...]]) -> frozenset[tuple[str, int]]:
    return frozenset((u, k) for u, vs in verdicts.items() for k, ok in enumerate(vs) if not ok)


def reset_blocks(offers: Mapping[str, tuple[float, ...]], blocks: Iterable[tuple[str, int]],
                 refs: ReferenceLevels) -> OfferSet:
    out = {u: list(p) for u, p in offers.items()}
    for u, k in blocks:
        out[u][k] = refs.blocks[u][k]
    return {u: tuple(p) for u, p in out.items()}


@dataclass(frozen=True, eq=False)
class ImpactResult:
    triggered: bool
    deviations: dict[str, float]
    submitted: ClearingResult | None = None
    reference: ClearingResult | None = None


def impact_test(
    s: Scenario,
    offers: Mapping[str, tuple[float, ...]],
    failed: Iterable[tuple[str, int]],
    refs: ReferenceLevels,
    th: Thresholds,
    cleared: ClearingResult | None = None,
) -> ImpactResult:
    """Compare prices with and without the failing blocks reset to reference.

    ``cleared`` may carry an existing clearing of ``offers`` to avoid a
    duplicate solve.
    """
    failed = frozenset(failed)
    for u, k in failed:
        if u not in offers or not 0 <= k < len(offers[u]):
            raise KeyError(f"failed block {(u, k)} is not an offered block")
    if not failed:
        return ImpactResult(False, {})
    submitted = cleared if cleared is not None else clear(s, offers)
    reference = clear(s, reset_blocks(offers, failed, refs), monotone=False)
    dev = {b: abs(submitted.lmp[b] - reference.lmp[b]) for b in s.bus_ids}
    triggered = any(dev[b] > th.bus[b] + TEST_TOL for b in s.bus_ids)
    return ImpactResult(triggered, dev, submitted, reference)


@dataclass(frozen=True, eq=False)
class MitigationReport:
    submitted_offers: OfferSet
    conduct: dict[str, tuple[bool, ...]]
    impact: ImpactResult
    final_offers: OfferSet
    before: ClearingResult
    after: ClearingResult

    @property
    def mitigated(self) -> bool:
        return self.impact.triggered

    @property
    def mitigated_blocks(self) -> frozenset[tuple[str, int]]:
        return failed_blocks(self.conduct) if self.mitigated else frozenset()

    @property
    def price_deviation(self) -> dict[str, float]:
        return self.impact.deviations


def run_pipeline(
    s: Scenario,
    offers: Mapping[str, tuple[float, ...]],
    refs: ReferenceLevels | None = None,
    th: Thresholds | None = None,
    monotone: bool = True,
) -> MitigationReport:
    """Conduct test, impact test on the failures, mitigation, final clearing.

    ``monotone=False`` admits offer curves that are not nondecreasing, such
    as the output of an earlier mitigation.
    """
    offers = validate_offers(s, offers, monotone=monotone)
    refs = refs or reference_levels(s)
    th = th or thresholds(s, refs)
    verdicts = conduct_test(offers, refs, th)
    failed = failed_blocks(verdicts)
    before = clear(s, offers, monotone=monotone)
    impact = impact_test(s, offers, failed, refs, th, cleared=before)
    if impact.triggered:
        final = reset_blocks(offers, failed, refs)
        after = impact.reference  # same offers, already cleared
    else:
        final, after = offers, before
    return MitigationReport(offers, verdicts, impact, final, before, after)


def report_rows(s: Scenario, rep: MitigationReport) -> list[dict]:
    """One row per unit in the before/after layout; ``None`` marks an unchanged cell."""
    rows = []
    mitigated_units = {u for u, _ in rep.mitigated_blocks}
    for u in s.units:
        before_offer = rep.submitted_offers[u.id]
        after_offer = rep.final_offers[u.id] if u.id in mitigated_units else None
        rows.append({
            "unit": u.id,
            "offer": before_offer,
            "g": rep.before.dispatch[u.id],
            "lmp": rep.before.lmp[u.bus],
            "profit": rep.before.profit[u.id],
            "offer_after": after_offer,
            "g_after": rep.after.dispatch[u.id] if rep.mitigated else None,
            "lmp_after": rep.after.lmp[u.bus] if rep.mitigated else None,
            "profit_after": rep.after.profit[u.id],
        })
    return rows


def _cell(v) -> str:
    if v is None:
        return "-"
    if isinstance(v, tuple):
        return "/".join(format_number(p) for p in v)
    return format_number(v)


def report_to_csv(s: Scenario, rep: MitigationReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["unit", "offer", "g", "lmp", "profit", "offer_after", "g_after", "lmp_after", "profit_after"])
    for r in report_rows(s, rep):
        w.writerow([r["unit"]] + [_cell(r[k]) for k in
                    ("offer", "g", "lmp", "profit", "offer_after", "g_after", "lmp_after", "profit_after")])
    return buf.getvalue()
