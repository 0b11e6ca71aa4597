"""Branch-and-bound over SOS1 pairs, plus a small linear model builder.

Complementarity conditions ``0 <= y  _|_  g(x) >= 0`` are linearized with the
SOS1 recast: auxiliaries ``u = (y + g) / 2`` and ``v+ - v- = (y - g) / 2``
with ``u = v+ + v-`` and at most one of ``v+, v-`` nonzero. Branching fixes one
member of a violated pair to zero, so every node is a plain LP.
"""
from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .lp import EQ, GE, LE, LP_SOLVERS, LinearProgram, LpSolution, solve_lp

SOS_TOL = 1e-7


@dataclass(frozen=True)
class Sos1Set:
    plus: int
    minus: int

    def __post_init__(self):
        if self.plus == self.minus:
            raise ValueError("SOS1 set members must be distinct")


@dataclass(frozen=True, eq=False)
class MilpProblem:
    lp: LinearProgram
    sets: tuple[Sos1Set, ...]
    maximize: bool = False

    def __post_init__(self):
        seen: set[int] = set()
        n = self.lp.n_vars
        for s in self.sets:
            for v in (s.plus, s.minus):
                if not 0 <= v < n:
                    raise ValueError(f"SOS1 index {v} out of range")
                if v in seen:
                    raise ValueError(f"variable {v} appears in more than one SOS1 set")
                if self.lp.lower[v] < 0:
                    raise ValueError(f"SOS1 variable {v} must be nonnegative")
                seen.add(v)
        object.__setattr__(self, "sets", tuple(self.sets))


@dataclass
class MilpSolution:
    status: str
    x: np.ndarray | None
    objective: float
    nodes: int
    gap: float
    incumbent_history: list[tuple[int, float]] = field(default_factory=list)
    relaxation: LpSolution | None = None
    fixed: frozenset = frozenset()

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


class NodeLimitError(RuntimeError):
    def __init__(self, message, incumbent=None, objective=math.nan, gap=math.inf):
        super().__init__(message)
        self.incumbent = incumbent
        self.objective = objective
        self.gap = gap


def sos1_violation(x: np.ndarray, s: Sos1Set) -> float:
    """Product of the pair if both members are nonzero beyond tolerance, else 0."""
    a, b = abs(x[s.plus]), abs(x[s.minus])
    tol = SOS_TOL * max(1.0, a, b)
    if min(a, b) <= tol:
        return 0.0
    return a * b


def solve_milp(
    p: MilpProblem,
    node_limit: int = 200_000,
    gap_tol: float = 1e-6,
    log: Callable[[str], None] | None = None,
    lp_solver: str = "simplex",
) -> MilpSolution:
    """Best-first branch-and-bound; returns the global optimum.

    ``lp_solver`` picks the node LP backend (``"simplex"`` or ``"highs"``).
    With HiGHS the winning leaf is re-solved with the built-in simplex, so the
    returned point always comes from the built-in solver when it agrees.

    Raises :class:`NodeLimitError` (carrying the incumbent and gap) if the
    node budget runs out before the tree is closed.
    """
    node_lp = LP_SOLVERS[lp_solver]
    lp = p.lp
    sign = -1.0 if p.maximize else 1.0
    work = LinearProgram(sign * lp.c, lp.A, lp.senses, lp.b, lp.lower, lp.upper)
    base_upper = work.upper
    counter = itertools.count()
    heap: list = [(-math.inf, next(counter), frozenset())]
    incumbent = None
    inc_obj = math.inf          # in minimization terms
    inc_lp = None
    inc_fixed = frozenset()
    history: list[tuple[int, float]] = []
    nodes = 0
    root_unbounded = False

    def prune_level():
        return inc_obj - gap_tol * max(1.0, abs(inc_obj)) if incumbent is not None else math.inf

    while heap:
        bound, _, fixed = heap[0]
        if bound >= prune_level():
            break
        heapq.heappop(heap)
        if nodes >= node_limit:
            gap = _gap(inc_obj, bound)
            raise NodeLimitError(
                f"node limit {node_limit} reached (gap {gap:.3g})",
                incumbent, sign * inc_obj if incumbent is not None else math.nan, gap,
            )
        nodes += 1
        upper = base_upper.copy()
        if fixed:
            upper[list(fixed)] = 0.0
        sol = node_lp(work.with_bounds(upper=upper))
        if sol.status.value == "unbounded":
            if not fixed:
                root_unbounded = True
                break
            continue
        if not sol.optimal:
            if log:
                log(f"node {nodes}: infeasible")
            continue
        if sol.objective >= prune_level():
            continue
        viol = np.array([sos1_violation(sol.x, s) for s in p.sets])
        if viol.size == 0 or viol.max() == 0.0:
            incumbent, inc_obj, inc_lp, inc_fixed = sol.x, sol.objective, sol, fixed
            history.append((nodes, sign * inc_obj))
            if log:
                log(f"node {nodes}: incumbent {sign * inc_obj:.10g}")
            continue
        k = int(np.argmax(viol))
        s = p.sets[k]
        if log:
            log(f"node {nodes}: bound {sign * sol.objective:.10g}, branch on set {k}")
        heapq.heappush(heap, (sol.objective, next(counter), fixed | {s.plus}))
        heapq.heappush(heap, (sol.objective, next(counter), fixed | {s.minus}))

    if root_unbounded:
        return MilpSolution("unbounded", None, sign * -math.inf, nodes, math.inf, history)
    if incumbent is None:
        return MilpSolution("infeasible", None, math.nan, nodes, math.inf, history)
    best_bound = heap[0][0] if heap else inc_obj
    if lp_solver != "simplex":
        upper = base_upper.copy()
        if inc_fixed:
            upper[list(inc_fixed)] = 0.0
        polished = solve_lp(work.with_bounds(upper=upper))
        if (polished.optimal
                and abs(polished.objective - inc_obj) <= 1e-7 * max(1.0, abs(inc_obj))
                and all(sos1_violation(polished.x, s) == 0.0 for s in p.sets)):
            incumbent, inc_lp = polished.x, polished
    return MilpSolution(
        "optimal", incumbent, sign * inc_obj, nodes, _gap(inc_obj, min(best_bound, inc_obj)), history, inc_lp,
        inc_fixed,
    )


def _gap(inc_obj, bound):
    if not math.isfinite(inc_obj):
        return math.inf
    return max(0.0, inc_obj - bound) / max(1.0, abs(inc_obj))


# ---------------------------------------------------------------------------
# affine expressions and the SOS1 recast


@dataclass(frozen=True)
class Affine:
    """``sum(coef * x[index]) + const``."""

    terms: Mapping[int, float]
    const: float = 0.0

    @classmethod
    def var(cls, index: int, coef: float = 1.0) -> "Affine":
        return cls({index: coef})

    def value(self, x) -> float:
        return sum(c * x[j] for j, c in self.terms.items()) + self.const


Row = tuple[dict, str, float]


def complementarity_to_sos1(y_index: int, g: Affine, first_aux: int) -> tuple[list[Row], Sos1Set]:
    """Rows and SOS1 pair encoding ``y * g = 0`` for ``y, g >= 0``.

    Auxiliary variables are ``u, v+, v-`` at indices ``first_aux``,
    ``first_aux + 1`` and ``first_aux + 2``; all three must be nonnegative.
    """
    for j in g.terms:
        if j < 0:
            raise ValueError(f"bad variable index {j} in expression")
    if y_index < 0:
        raise ValueError("bad y index")
    u, vp, vm = first_aux, first_aux + 1, first_aux + 2

    def combine(*parts):
        out: dict[int, float] = {}
        for terms, scale in parts:
            for j, c in terms.items():
                out[j] = out.get(j, 0.0) + scale * c
        return {j: c for j, c in out.items() if c != 0.0}

    rows = [
        # u - (y + g)/2 = 0
        (combine(({u: 1.0}, 1.0), ({y_index: 1.0}, -0.5), (g.terms, -0.5)), EQ, 0.5 * g.const),
        # v+ - v- - (y - g)/2 = 0
        (combine(({vp: 1.0, vm: -1.0}, 1.0), ({y_index: 1.0}, -0.5), (g.terms, 0.5)), EQ, -0.5 * g.const),
        # u - (v+ + v-) = 0
        ({u: 1.0, vp: -1.0, vm: -1.0}, EQ, 0.0),
    ]
    return rows, Sos1Set(vp, vm)


class LinearModel:
    """Incremental builder for LPs and SOS1-constrained problems."""

    def __init__(self):
        self.names: list[str] = []
        self.lower: list[float] = []
        self.upper: list[float] = []
        self.rows: list[Row] = []
        self.row_names: list[str] = []
        self.objective: dict[int, float] = {}
        self.objective_const = 0.0
        self.sets: list[Sos1Set] = []
        self.pairs: list[tuple[str, int, Affine]] = []

    @property
    def n_vars(self) -> int:
        return len(self.names)

    def add_var(self, name: str, lb: float = 0.0, ub: float = math.inf) -> int:
        self.names.append(name)
        self.lower.append(lb)
        self.upper.append(ub)
        return len(self.names) - 1

    def add_row(self, terms: Mapping[int, float], sense: str, rhs: float, name: str = "") -> int:
        terms = {j: float(c) for j, c in terms.items() if c != 0.0}
        self.rows.append((terms, sense, float(rhs)))
        self.row_names.append(name or f"r{len(self.rows) - 1}")
        return len(self.rows) - 1

    def add_objective(self, terms: Mapping[int, float], const: float = 0.0) -> None:
        for j, c in terms.items():
            self.objective[j] = self.objective.get(j, 0.0) + float(c)
        self.objective_const += const

    def add_complementarity(self, name: str, y_index: int, g: Affine) -> Sos1Set:
        first = self.n_vars
        for suffix in ("u", "v+", "v-"):
            self.add_var(f"{name}.{suffix}", 0.0, math.inf)
        rows, sos = complementarity_to_sos1(y_index, g, first)
        for k, (terms, sense, rhs) in enumerate(rows):
            self.add_row(terms, sense, rhs, f"{name}.sos{k}")
        self.sets.append(sos)
        self.pairs.append((name, y_index, g))
        return sos

    def to_lp(self) -> LinearProgram:
        n = self.n_vars
        A = np.zeros((len(self.rows), n))
        b = np.zeros(len(self.rows))
        senses = []
        for i, (terms, sense, rhs) in enumerate(self.rows):
            for j, c in terms.items():
                A[i, j] += c
            b[i] = rhs
            senses.append(sense)
        c = np.zeros(n)
        for j, v in self.objective.items():
            c[j] = v
        return LinearProgram(c, A, tuple(senses), b, np.array(self.lower), np.array(self.upper),
                             tuple(self.row_names), tuple(self.names))

    def to_milp(self, maximize: bool = False) -> MilpProblem:
        return MilpProblem(self.to_lp(), tuple(self.sets), maximize)


__all__ = [
    "Affine", "LinearModel", "MilpProblem", "MilpSolution", "NodeLimitError", "Sos1Set",
    "complementarity_to_sos1", "solve_milp", "sos1_violation", "EQ", "GE", "LE",
]
