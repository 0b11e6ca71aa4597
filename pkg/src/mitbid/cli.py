"""Command-line front end.

Exit codes: 0 success, 1 usage error / missing file / failed verification,
2 infeasible market or bidding problem.
"""
from __future__ import annotations

import argparse
import difflib
import json
import logging
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import experiments as ex
from .bidding import ALL_STRATEGIES, BiddingError, Strategy, evaluate_strategy, kkt_residuals
from .clearing import InfeasibleMarketError, clear, result_to_csv, truthful_offers
from .lp import EQ, GE, LE, LinearProgram, lp_residuals, solve_lp
from .milp import NodeLimitError
from .mitigation import report_to_csv, run_pipeline
from .network import ScenarioError, load_demand_profile, load_scenario, scale_loads
from .oracle import DEFAULT_STEP, GridSpec, brute_force_bid, within_one_step
from .plots import line_plot

log = logging.getLogger("mitbid")

EXIT_OK, EXIT_USAGE, EXIT_INFEASIBLE = 0, 1, 2
GOLDEN_DIR = ex.data_path("golden")


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    command: str
    scenario: Path | None = None
    strategy: list[Strategy] = field(default_factory=list)
    fractions: list[float] = field(default_factory=list)
    hours: list[int] | None = None
    out: Path = Path(".")
    grid_step: float = DEFAULT_STEP
    seed: int = 0
    verbosity: int = 0
    offers: str = "truthful"
    profile: Path | None = None
    hour: int | None = None
    lp_solver: str = "simplex"
    checks: tuple[str, ...] = ()
    golden: Path = GOLDEN_DIR

    def __post_init__(self):
        for p in (self.scenario, self.profile):
            if p is not None and not Path(p).is_file():
                raise UsageError(f"file not found: {p}")
        if any(f <= 0 for f in self.fractions):
            raise UsageError("threshold fractions must be positive")
        if not self.grid_step > 0:
            raise UsageError("--grid-step must be positive")


def parse_thresholds(text: str) -> list[float]:
    try:
        lo, hi, step = (float(v) for v in text.split(":"))
        return ex.fraction_range(lo, hi, step)
    except ValueError as exc:
        raise UsageError(f"--thresholds expects lo:hi:step with 0 < lo <= hi, step > 0 ({exc})") from None


def parse_hours(text: str) -> list[int]:
    out: list[int] = []
    try:
        for part in text.split(","):
            if "-" in part:
                a, b = (int(v) for v in part.split("-"))
                out.extend(range(a, b + 1))
            else:
                out.append(int(part))
    except ValueError:
        raise UsageError(f"bad hour list {text!r}") from None
    return out


def _write(out: Path, name: str, text: str) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    path = out / name
    path.write_text(text)
    log.info("wrote %s", path)
    return path


def _scenario(cfg: RunConfig, default: str | None = None):
    if cfg.scenario is None:
        if default is None:
            raise UsageError(f"{cfg.command}: a scenario file is required")
        s = ex.load_case(default)
    else:
        s = load_scenario(cfg.scenario)
    if cfg.hour is not None:
        s = scale_loads(s, cfg.hour, load_demand_profile(cfg.profile or ex.data_path("six_bus_demand.csv"),
                                                         s.load_shares))
    return s


def _offers(cfg: RunConfig, s):
    if cfg.offers == "truthful":
        return truthful_offers(s)
    if cfg.offers == "submitted":
        return {u.id: tuple(b.offered_price for b in u.blocks) for u in s.units}
    path = Path(cfg.offers)
    if not path.is_file():
        raise UsageError(f"offers file not found: {path}")
    try:
        given = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: {exc}") from None
    offers = truthful_offers(s)
    offers.update({u: tuple(float(p) for p in v) for u, v in given.items()})
    return offers


# ---------------------------------------------------------------------------


def cmd_clear(cfg: RunConfig) -> int:
    s = _scenario(cfg)
    text = result_to_csv(s, clear(s, _offers(cfg, s)))
    _write(cfg.out, "clearing.csv", text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_mitigate(cfg: RunConfig) -> int:
    s = _scenario(cfg)
    text = report_to_csv(s, run_pipeline(s, _offers(cfg, s)))
    _write(cfg.out, "mitigation.csv", text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_bid(cfg: RunConfig) -> int:
    s = _scenario(cfg)
    strategies = cfg.strategy or [Strategy.CONDUCT_AWARE]
    table = ex.strategy_table(s, strategies, lp_solver=cfg.lp_solver)
    _write(cfg.out, "bid.csv", table)
    for st in strategies:
        out = evaluate_strategy(s, st, lp_solver=cfg.lp_solver)
        _write(cfg.out, f"mitigation_{st.value}.csv", report_to_csv(s, out.report))
    sys.stdout.write(table)
    return EXIT_OK


def cmd_sweep(cfg: RunConfig) -> int:
    fractions = cfg.fractions or ex.fraction_range(0.5, 3.0, 0.25)
    strategies = cfg.strategy or list(ex.SWEEP_STRATEGIES)
    cases = {"scenario": load_scenario(cfg.scenario)} if cfg.scenario else None
    results = ex.sweep_cases(fractions, strategies, cases)
    text = ex.sweep_table(results)
    _write(cfg.out, "sweep.csv", text)
    labels = sorted({k.split("/")[0] for k in results})
    for label in labels:
        series = {Strategy(k.split("/")[1]).label: ([p.fraction for p in pts], [p.realized_profit for p in pts])
                  for k, pts in results.items() if k.split("/")[0] == label}
        line_plot(cfg.out / f"sweep_{label}.svg", series, "threshold (fraction of reference)",
                  "profit after mitigation ($)", label)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_hourly(cfg: RunConfig) -> int:
    s = _scenario(cfg, default="six_bus")
    profile_path = cfg.profile or ex.data_path("six_bus_demand.csv")
    if not s.load_shares:
        raise UsageError("scenario has no load_shares; hourly runs need per-bus demand shares")
    profile = load_demand_profile(profile_path, s.load_shares)
    strategies = cfg.strategy or list(ALL_STRATEGIES)
    rows = ex.hourly_run(s, profile, strategies, cfg.hours, lp_solver=cfg.lp_solver)
    text = ex.hourly_table(rows)
    _write(cfg.out, "hourly.csv", text)
    for metric, ylabel in (("realized_profit", "profit of the strategic GenCo ($)"), ("welfare", "social welfare ($)")):
        series = {}
        for st in strategies:
            pts = [r for r in rows if r.strategy is st]
            series[st.label] = ([r.hour for r in pts], [getattr(r, metric) for r in pts])
        name = "hourly_profit.svg" if metric == "realized_profit" else "hourly_welfare.svg"
        line_plot(cfg.out / name, series, "hour", ylabel)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_report_tables(cfg: RunConfig) -> int:
    for name, text in ex.case_tables().items():
        _write(cfg.out, name, text)
        print(f"== {name}\n{text}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# verification suite


def _check_golden(cfg: RunConfig) -> list[str]:
    fails = []
    for name, text in ex.case_tables().items():
        path = cfg.golden / name
        if not path.is_file():
            fails.append(f"golden file missing: {path}")
            continue
        want = path.read_text()
        if want != text:
            diff = "".join(difflib.unified_diff(want.splitlines(True), text.splitlines(True),
                                                f"golden/{name}", f"computed/{name}"))
            fails.append(f"golden table {name} differs:\n{diff}")
    return fails


def _two_bus_cases():
    return [ex.load_case(n) for n in ex.CASES if n.startswith("two_bus")]


def _check_oracle(cfg: RunConfig) -> list[str]:
    fails = []
    for s in _two_bus_cases():
        for st in (Strategy.MITIGATION_UNAWARE, Strategy.CONDUCT_AWARE, Strategy.IMPACT_AWARE):
            objective = "expected" if st is Strategy.MITIGATION_UNAWARE else "realized"
            o = brute_force_bid(s, st, GridSpec.uniform(1, 0.0, s.offer_cap, cfg.grid_step), objective)
            out = evaluate_strategy(s, st)
            prices = tuple(out.solution.offers[u][k] for u, k in o.blocks)
            mine = out.expected_profit if objective == "expected" else out.realized_profit
            ok = within_one_step(prices, o, cfg.grid_step) and abs(mine - o.profit) <= 0.01 * max(1.0, abs(o.profit))
            log.info("oracle %s/%s: milp %s (%.4f) oracle %s (%.4f)", s.name, st.value, prices, mine,
                     o.best_prices, o.profit)
            if not ok:
                fails.append(f"oracle mismatch on {s.name} / {st.value}: MILP {prices} -> {mine:.4f}, "
                             f"oracle {o.best_prices} -> {o.profit:.4f}")
    return fails


def random_lp(rng: np.random.Generator, m: int = 5, n: int = 8) -> LinearProgram:
    """A feasible, bounded LP: rows built around a known interior point."""
    A = rng.integers(-5, 6, size=(m, n)).astype(float)
    x0 = rng.uniform(0.0, 3.0, size=n)
    senses = tuple(rng.choice([LE, GE, EQ], size=m, p=[0.45, 0.35, 0.2]))
    slack = rng.uniform(0.0, 2.0, size=m)
    b = A @ x0 + np.array([sl if s == LE else -sl if s == GE else 0.0 for s, sl in zip(senses, slack)])
    return LinearProgram(rng.integers(-6, 7, size=n).astype(float), A, senses, b,
                         np.zeros(n), np.full(n, 10.0))


def _check_kkt(cfg: RunConfig) -> list[str]:
    fails = []
    rng = np.random.default_rng(cfg.seed)
    for k in range(50):
        lp = random_lp(rng)
        sol = solve_lp(lp)
        res = lp_residuals(lp, sol)
        if res["duality_gap"] > 1e-7:
            fails.append(f"random LP {k}: duality gap {res['duality_gap']:.3g}")
    cases = _two_bus_cases() + [ex.load_case("three_bus_loop")]
    for s in cases:
        for st in ALL_STRATEGIES:
            sol = evaluate_strategy(s, st).solution
            worst = max(v for key, v in sol.kkt.items())
            if worst > 1e-6:
                fails.append(f"KKT residual {worst:.3g} on {s.name} / {st.value}")
            r = kkt_residuals(s, clear(s, sol.offers))
            if max(r.values()) > 1e-6:
                fails.append(f"operator clearing residual {max(r.values()):.3g} on {s.name} / {st.value}")
    return fails


def _check_idempotence(cfg: RunConfig) -> list[str]:
    fails = []
    for s in _two_bus_cases() + [ex.load_case("three_bus_loop")]:
        for st in ALL_STRATEGIES:
            rep = evaluate_strategy(s, st).report
            if rep.final_offers != rep.submitted_offers and not rep.mitigated:
                fails.append(f"unmitigated report changed offers on {s.name} / {st.value}")
            again = run_pipeline(s, rep.final_offers, monotone=False)
            if again.mitigated or again.final_offers != rep.final_offers:
                fails.append(f"pipeline not idempotent on {s.name} / {st.value}")
    return fails


CHECKS: dict[str, Callable[[RunConfig], list[str]]] = {
    "golden": _check_golden,
    "oracle": _check_oracle,
    "kkt": _check_kkt,
    "idempotence": _check_idempotence,
}


def cmd_verify(cfg: RunConfig) -> int:
    selected = cfg.checks or tuple(CHECKS)
    lines, failed = [], False
    for name in selected:
        t0 = time.perf_counter()
        fails = CHECKS[name](cfg)
        status = "PASS" if not fails else "FAIL"
        failed |= bool(fails)
        lines.append(f"{status} {name} ({time.perf_counter() - t0:.1f} s)")
        lines.extend("  " + f.replace("\n", "\n  ") for f in fails)
    report = "\n".join(lines) + "\n"
    _write(cfg.out, "verify.txt", report)
    sys.stdout.write(report)
    return EXIT_USAGE if failed else EXIT_OK


COMMANDS = {
    "clear": cmd_clear,
    "bid": cmd_bid,
    "mitigate": cmd_mitigate,
    "sweep": cmd_sweep,
    "hourly": cmd_hourly,
    "verify": cmd_verify,
    "report-tables": cmd_report_tables,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", type=Path, default=Path("."), help="output directory (default: .)")
    common.add_argument("--seed", type=int, default=0, help="seed for randomized checks")
    common.add_argument("-v", "--verbose", action="count", default=0)
    common.add_argument("--lp-solver", choices=("simplex", "highs"), default=None,
                        help="node LP backend for branch-and-bound")

    p = argparse.ArgumentParser(prog="mitbid", description="Strategic bidding under market-power mitigation.")
    sub = p.add_subparsers(dest="command", required=True)

    def scen(sp, required=True):
        sp.add_argument("scenario", type=Path, nargs=None if required else "?", help="scenario JSON file")
        sp.add_argument("--hour", type=int, help="scale loads to this hour of the demand profile")
        sp.add_argument("--profile", type=Path, help="demand profile CSV (hour,total_mw)")

    for name, helptext in (("clear", "clear the market for given offers"),
                           ("mitigate", "run conduct and impact mitigation on given offers")):
        sp = sub.add_parser(name, parents=[common], help=helptext)
        scen(sp)
        sp.add_argument("--offers", default="truthful",
                        help="'truthful', 'submitted' (prices in the file) or a JSON file {unit: [prices]}")
    sp = sub.add_parser("bid", parents=[common], help="optimal offer of the strategic GenCo")
    scen(sp)
    sp.add_argument("--strategy", action="append", help="strategy (repeatable): " +
                    ", ".join(s.value for s in Strategy))
    sp = sub.add_parser("sweep", parents=[common], help="profit against mitigation threshold")
    sp.add_argument("scenario", type=Path, nargs="?", help="scenario (default: the two heterogeneous 2-bus cases)")
    sp.add_argument("--thresholds", default="0.5:3.0:0.25", help="lo:hi:step fractions")
    sp.add_argument("--strategy", action="append")
    sp = sub.add_parser("hourly", parents=[common], help="24-hour profits and welfare")
    scen(sp, required=False)
    sp.add_argument("--hours", help="e.g. 1-24 or 9,14,18")
    sp.add_argument("--strategy", action="append")
    sp = sub.add_parser("verify", parents=[common], help="run the verification suite")
    sp.add_argument("--grid-step", type=float, default=DEFAULT_STEP)
    for name in CHECKS:
        sp.add_argument(f"--{name}", action="store_true", help=f"run the {name} check (default: all)")
    sp.add_argument("--golden-dir", type=Path, default=GOLDEN_DIR)
    sub.add_parser("report-tables", parents=[common], help="write the case-study tables")
    return p


def config_from_args(args: argparse.Namespace) -> RunConfig:
    cmd = args.command
    strategies = [Strategy.parse(v) for v in (getattr(args, "strategy", None) or [])]
    default_solver = "highs" if cmd == "hourly" or getattr(args, "hour", None) else "simplex"
    return RunConfig(
        command=cmd,
        scenario=getattr(args, "scenario", None),
        strategy=strategies,
        fractions=parse_thresholds(args.thresholds) if cmd == "sweep" else [],
        hours=parse_hours(args.hours) if getattr(args, "hours", None) else None,
        out=args.out,
        grid_step=getattr(args, "grid_step", DEFAULT_STEP),
        seed=args.seed,
        verbosity=args.verbose,
        offers=getattr(args, "offers", "truthful"),
        profile=getattr(args, "profile", None),
        hour=getattr(args, "hour", None),
        lp_solver=args.lp_solver or default_solver,
        checks=tuple(n for n in CHECKS if getattr(args, n, False)) if cmd == "verify" else (),
        golden=getattr(args, "golden_dir", GOLDEN_DIR),
    )


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(message)s")
    try:
        cfg = config_from_args(args)
        return COMMANDS[cfg.command](cfg)
    except (UsageError, FileNotFoundError, ScenarioError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (InfeasibleMarketError, BiddingError, NodeLimitError) as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE


if __name__ == "__main__":
    raise SystemExit(main())
