"""Power network, generating units and market rules.

A :class:`Scenario` bundles one network with one set of market rules and is
loaded from a JSON file (see ``README.md`` for the schema). All types are
frozen dataclasses so a scenario can be shared freely between evaluations;
derived variants are built with :func:`dataclasses.replace`.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping, Sequence


class ScenarioError(ValueError):
    """Raised when a scenario or demand profile is malformed or inconsistent."""


@dataclass(frozen=True)
class Bus:
    id: str
    load_mw: float = 0.0


@dataclass(frozen=True)
class Branch:
    from_bus: str
    to_bus: str
    susceptance: float
    limit_mw: float

    @property
    def key(self) -> tuple[str, str]:
        return (self.from_bus, self.to_bus)


@dataclass(frozen=True)
class OfferBlock:
    capacity_mw: float
    true_cost: float
    offered_price: float


@dataclass(frozen=True)
class GenUnit:
    id: str
    bus: str
    owner: str
    blocks: tuple[OfferBlock, ...]

    @property
    def capacity_mw(self) -> float:
        return sum(b.capacity_mw for b in self.blocks)

    @property
    def true_costs(self) -> tuple[float, ...]:
        return tuple(b.true_cost for b in self.blocks)

    @property
    def capacities(self) -> tuple[float, ...]:
        return tuple(b.capacity_mw for b in self.blocks)


@dataclass(frozen=True)
class Scenario:
    """One network plus one market-rule set.

    ``base_mva`` converts per-unit susceptances to MW/rad, so the flow on a
    branch is ``base_mva * susceptance * (theta_from - theta_to)``.
    """

    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    units: tuple[GenUnit, ...]
    strategic_owner: str
    offer_cap: float = 100.0
    price_cap: float = 200.0
    conduct_threshold_frac: float = 1.0
    impact_threshold_frac: float = 1.0
    tie_break_penalty: float = 1e-4
    epsilon_price: float = 0.01
    base_mva: float = 100.0
    utility: float = 25.0
    name: str = ""
    notes: str = ""
    load_shares: tuple[tuple[str, float], ...] = ()

    def __post_init__(self):
        validate_scenario(self)

    # lookups -------------------------------------------------------------
    @property
    def bus_ids(self) -> tuple[str, ...]:
        return tuple(b.id for b in self.buses)

    @property
    def reference_bus(self) -> str:
        return min(self.bus_ids, key=_id_sort_key)

    @property
    def total_load(self) -> float:
        return sum(b.load_mw for b in self.buses)

    def unit(self, unit_id: str) -> GenUnit:
        for u in self.units:
            if u.id == unit_id:
                return u
        raise KeyError(unit_id)

    def bus(self, bus_id: str) -> Bus:
        for b in self.buses:
            if b.id == bus_id:
                return b
        raise KeyError(bus_id)

    def strategic_units(self) -> tuple[GenUnit, ...]:
        return tuple(u for u in self.units if u.owner == self.strategic_owner)

    def competitor_units(self) -> tuple[GenUnit, ...]:
        return tuple(u for u in self.units if u.owner != self.strategic_owner)

    def owners(self) -> tuple[str, ...]:
        seen: list[str] = []
        for u in self.units:
            if u.owner not in seen:
                seen.append(u.owner)
        return tuple(seen)

    def with_loads(self, loads: Mapping[str, float]) -> "Scenario":
        buses = tuple(replace(b, load_mw=float(loads.get(b.id, b.load_mw))) for b in self.buses)
        return replace(self, buses=buses)

    def with_costs(self, costs: Mapping[str, Sequence[float]]) -> "Scenario":
        """Return a copy with new true block costs (offered prices follow)."""
        units = []
        for u in self.units:
            if u.id in costs:
                new = tuple(
                    replace(b, true_cost=float(c), offered_price=float(c))
                    for b, c in zip(u.blocks, costs[u.id], strict=True)
                )
                u = replace(u, blocks=new)
            units.append(u)
        return replace(self, units=tuple(units))


def _id_sort_key(value: str):
    return (0, int(value), "") if value.lstrip("-").isdigit() else (1, 0, value)


def validate_scenario(s: Scenario) -> None:
    ids = [b.id for b in s.buses]
    if not ids:
        raise ScenarioError("scenario has no buses")
    if len(set(ids)) != len(ids):
        raise ScenarioError(f"bus ids must be unique, got {ids}")
    for b in s.buses:
        if not math.isfinite(b.load_mw) or b.load_mw < 0:
            raise ScenarioError(f"bus {b.id}: load_mw must be >= 0, got {b.load_mw}")
    seen_pairs = set()
    for br in s.branches:
        where = f"branch {br.from_bus}-{br.to_bus}"
        if br.from_bus == br.to_bus:
            raise ScenarioError(f"{where}: from_bus and to_bus must differ")
        for end in (br.from_bus, br.to_bus):
            if end not in ids:
                raise ScenarioError(f"{where}: unknown bus {end!r}")
        if not br.susceptance > 0:
            raise ScenarioError(f"{where}: susceptance must be > 0, got {br.susceptance}")
        if not br.limit_mw > 0:
            raise ScenarioError(f"{where}: limit_mw must be > 0, got {br.limit_mw}")
        if br.key in seen_pairs:
            raise ScenarioError(f"{where}: duplicate branch for this ordered pair")
        seen_pairs.add(br.key)
    if not s.offer_cap > 0:
        raise ScenarioError(f"offer_cap must be > 0, got {s.offer_cap}")
    if not s.price_cap > 0:
        raise ScenarioError(f"price_cap must be > 0, got {s.price_cap}")
    if s.conduct_threshold_frac < 0 or s.impact_threshold_frac < 0:
        raise ScenarioError("threshold fractions must be >= 0")
    if not s.tie_break_penalty > 0:
        raise ScenarioError("tie_break_penalty must be > 0")
    if s.epsilon_price < 0:
        raise ScenarioError("epsilon_price must be >= 0")
    if not s.base_mva > 0:
        raise ScenarioError("base_mva must be > 0")
    unit_ids = [u.id for u in s.units]
    if len(set(unit_ids)) != len(unit_ids):
        raise ScenarioError(f"unit ids must be unique, got {unit_ids}")
    for u in s.units:
        where = f"unit {u.id}"
        if u.bus not in ids:
            raise ScenarioError(f"{where}: unknown bus {u.bus!r}")
        if not u.blocks:
            raise ScenarioError(f"{where}: blocks must be nonempty")
        prev = -math.inf
        for k, blk in enumerate(u.blocks, start=1):
            if not blk.capacity_mw > 0:
                raise ScenarioError(f"{where} block {k}: capacity_mw must be > 0")
            if blk.true_cost < 0:
                raise ScenarioError(f"{where} block {k}: true_cost must be >= 0")
            if not 0 <= blk.offered_price <= s.offer_cap:
                raise ScenarioError(
                    f"{where} block {k}: offered_price {blk.offered_price} outside [0, offer_cap]"
                )
            if blk.true_cost < prev:
                raise ScenarioError(f"{where}: true block costs must be nondecreasing")
            prev = blk.true_cost
    if not any(u.owner == s.strategic_owner for u in s.units):
        raise ScenarioError(f"strategic_owner {s.strategic_owner!r} owns no unit")
    if s.load_shares:
        for bus_id, share in s.load_shares:
            if bus_id not in ids:
                raise ScenarioError(f"load_shares: unknown bus {bus_id!r}")
            if share < 0:
                raise ScenarioError("load_shares must be >= 0")
        _check_share_sum(dict(s.load_shares))


def _check_share_sum(shares: Mapping[str, float]) -> None:
    total = sum(shares.values())
    if abs(total - 1.0) > 1e-9:
        raise ScenarioError(f"load shares must sum to 1, got {total:.12g}")


# ---------------------------------------------------------------------------
# JSON I/O

_MARKET_FIELDS = (
    "strategic_owner",
    "offer_cap",
    "price_cap",
    "conduct_threshold_frac",
    "impact_threshold_frac",
    "tie_break_penalty",
    "epsilon_price",
    "utility",
)


def _require(d: Mapping[str, Any], key: str, where: str):
    if key not in d:
        raise ScenarioError(f"{where}: missing field {key!r}")
    return d[key]


def _num(value, where: str) -> float:
    try:
        out = float(value)
    except (TypeError, ValueError):
        raise ScenarioError(f"{where}: expected a number, got {value!r}") from None
    if not math.isfinite(out):
        raise ScenarioError(f"{where}: expected a finite number, got {value!r}")
    return out


def scenario_from_dict(data: Mapping[str, Any]) -> Scenario:
    if not isinstance(data, Mapping):
        raise ScenarioError("scenario root must be a JSON object")
    buses = []
    for k, b in enumerate(_require(data, "buses", "scenario")):
        where = f"buses[{k}]"
        buses.append(Bus(str(_require(b, "id", where)), _num(b.get("load_mw", 0.0), where + ".load_mw")))
    branches = []
    for k, br in enumerate(data.get("branches", [])):
        where = f"branches[{k}]"
        branches.append(
            Branch(
                str(_require(br, "from_bus", where)),
                str(_require(br, "to_bus", where)),
                _num(_require(br, "susceptance", where), where + ".susceptance"),
                _num(_require(br, "limit_mw", where), where + ".limit_mw"),
            )
        )
    units = []
    for k, u in enumerate(_require(data, "units", "scenario")):
        where = f"units[{k}]"
        blocks = []
        for j, blk in enumerate(_require(u, "blocks", where)):
            bw = f"{where}.blocks[{j}]"
            cost = _num(_require(blk, "true_cost", bw), bw + ".true_cost")
            blocks.append(
                OfferBlock(
                    _num(_require(blk, "capacity_mw", bw), bw + ".capacity_mw"),
                    cost,
                    _num(blk.get("offered_price", cost), bw + ".offered_price"),
                )
            )
        units.append(
            GenUnit(
                str(_require(u, "id", where)),
                str(_require(u, "bus", where)),
                str(_require(u, "owner", where)),
                tuple(blocks),
            )
        )
    market = dict(_require(data, "market", "scenario"))
    kwargs: dict[str, Any] = {"strategic_owner": str(_require(market, "strategic_owner", "market"))}
    for key in _MARKET_FIELDS[1:]:
        if key in market:
            kwargs[key] = _num(market[key], f"market.{key}")
    unknown = set(market) - set(_MARKET_FIELDS)
    if unknown:
        raise ScenarioError(f"market: unknown field(s) {sorted(unknown)}")
    shares = data.get("load_shares") or {}
    return Scenario(
        buses=tuple(buses),
        branches=tuple(branches),
        units=tuple(units),
        base_mva=_num(data.get("base_mva", 100.0), "base_mva"),
        name=str(data.get("name", "")),
        notes=str(data.get("notes", "")),
        load_shares=tuple((str(k), _num(v, f"load_shares.{k}")) for k, v in shares.items()),
        **kwargs,
    )


def scenario_to_dict(s: Scenario) -> dict[str, Any]:
    out: dict[str, Any] = {"name": s.name}
    if s.notes:
        out["notes"] = s.notes
    out["base_mva"] = s.base_mva
    out["buses"] = [{"id": b.id, "load_mw": b.load_mw} for b in s.buses]
    out["branches"] = [
        {"from_bus": br.from_bus, "to_bus": br.to_bus, "susceptance": br.susceptance, "limit_mw": br.limit_mw}
        for br in s.branches
    ]
    out["units"] = [
        {
            "id": u.id,
            "bus": u.bus,
            "owner": u.owner,
            "blocks": [
                {"capacity_mw": b.capacity_mw, "true_cost": b.true_cost, "offered_price": b.offered_price}
                for b in u.blocks
            ],
        }
        for u in s.units
    ]
    out["market"] = {key: getattr(s, key) for key in _MARKET_FIELDS}
    if s.load_shares:
        out["load_shares"] = dict(s.load_shares)
    return out


def loads_scenario_text(text: str, source: str = "<string>") -> Scenario:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{source}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    try:
        return scenario_from_dict(data)
    except ScenarioError as exc:
        raise ScenarioError(f"{source}: {exc}") from None


def load_scenario(path) -> Scenario:
    """Read and validate a scenario JSON file."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"scenario file not found: {path}")
    return loads_scenario_text(path.read_text(), str(path))


def save_scenario(s: Scenario, path) -> None:
    Path(path).write_text(json.dumps(scenario_to_dict(s), indent=2) + "\n")


# ---------------------------------------------------------------------------
# Demand profiles


@dataclass(frozen=True)
class DemandProfile:
    """Hourly system demand with fixed per-bus shares."""

    hours: tuple[int, ...]
    totals: tuple[float, ...]
    shares: tuple[tuple[str, float], ...] = field(default=())

    def __post_init__(self):
        if len(self.hours) != len(self.totals):
            raise ScenarioError("hours and totals differ in length")
        if len(set(self.hours)) != len(self.hours):
            raise ScenarioError("duplicate hour in demand profile")
        for h, t in zip(self.hours, self.totals):
            if not math.isfinite(t) or t < 0:
                raise ScenarioError(f"hour {h}: total load must be >= 0, got {t}")
        for bus_id, share in self.shares:
            if share < 0:
                raise ScenarioError(f"bus {bus_id}: negative load share")
        _check_share_sum(dict(self.shares))

    def total(self, hour: int) -> float:
        try:
            return self.totals[self.hours.index(hour)]
        except ValueError:
            raise KeyError(f"hour {hour} not in demand profile") from None


def load_demand_profile(path, shares: Mapping[str, float] | Sequence[tuple[str, float]]) -> DemandProfile:
    """Read a ``hour,total_mw`` CSV file."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"demand profile not found: {path}")
    hours, totals = [], []
    with path.open(newline="") as fh:
        rows = (line for line in fh if not line.lstrip().startswith("#"))
        reader = csv.DictReader(rows)
        if reader.fieldnames is None or {"hour", "total_mw"} - set(reader.fieldnames):
            raise ScenarioError(f"{path}: expected columns hour,total_mw")
        for lineno, row in enumerate(reader, start=2):
            try:
                hours.append(int(row["hour"]))
                totals.append(float(row["total_mw"]))
            except (TypeError, ValueError):
                raise ScenarioError(f"{path}: bad row {lineno}: {row}") from None
    shares = tuple(shares.items()) if isinstance(shares, Mapping) else tuple(shares)
    return DemandProfile(tuple(hours), tuple(totals), tuple((str(b), float(v)) for b, v in shares))


def scale_loads(s: Scenario, hour: int, profile: DemandProfile) -> Scenario:
    """Distribute the hourly total over buses by the profile's shares."""
    total = profile.total(hour)
    shares = dict(profile.shares)
    unknown = set(shares) - set(s.bus_ids)
    if unknown:
        raise ScenarioError(f"profile shares name unknown buses {sorted(unknown)}")
    return s.with_loads({b: total * shares.get(b, 0.0) for b in s.bus_ids})
