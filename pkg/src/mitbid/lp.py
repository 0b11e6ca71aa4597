"""Dense two-phase tableau simplex returning primal and dual solutions.

Problems are small (a few hundred rows at most) so the solver keeps a full
tableau and refactors the final basis with a direct solve to clean up the
primal and dual vectors. Entering columns use Dantzig's rule; after a run of
degenerate pivots the solver switches to Bland's rule until progress resumes.

Dual sign convention: ``duals[i]`` is the sensitivity of the optimal
objective to ``b[i]``. For a minimization this makes duals of ``<=`` rows
nonpositive and duals of ``>=`` rows nonnegative. Reduced costs are
``c - A.T @ duals``; they carry the multipliers of the variable bounds.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

LE, EQ, GE = "<=", "=", ">="
_SENSES = (LE, EQ, GE)

FEAS_TOL = 1e-8
OPT_TOL = 1e-9
_PIVOT_TOL = 1e-10
_DEGENERATE_RUN = 30


class LpStatus(str, Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


class LpNumericalError(RuntimeError):
    """The simplex could not produce a solution meeting the residual tolerances."""


@dataclass(frozen=True, eq=False)
class LinearProgram:
    """``min c @ x`` subject to ``A[i] @ x (sense_i) b[i]`` and ``lower <= x <= upper``."""

    c: np.ndarray
    A: np.ndarray
    senses: tuple[str, ...]
    b: np.ndarray
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    row_names: tuple[str, ...] = ()
    col_names: tuple[str, ...] = ()

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float).ravel()
        n = c.size
        A = np.asarray(self.A, dtype=float).reshape(-1, n) if np.size(self.A) else np.zeros((0, n))
        b = np.asarray(self.b, dtype=float).ravel()
        senses = tuple(self.senses)
        if A.shape[0] != b.size or len(senses) != b.size:
            raise ValueError(f"inconsistent row counts: A {A.shape}, b {b.size}, senses {len(senses)}")
        bad = [s for s in senses if s not in _SENSES]
        if bad:
            raise ValueError(f"unknown row sense(s) {sorted(set(bad))}")
        lower = np.zeros(n) if self.lower is None else np.asarray(self.lower, dtype=float).ravel()
        upper = np.full(n, np.inf) if self.upper is None else np.asarray(self.upper, dtype=float).ravel()
        if lower.size != n or upper.size != n:
            raise ValueError("bounds must match the number of variables")
        if not (np.all(np.isfinite(c)) and np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
            raise ValueError("cost, matrix and right-hand side must be finite")
        if np.any(np.isnan(lower)) or np.any(np.isnan(upper)) or np.any(lower == np.inf) or np.any(upper == -np.inf):
            raise ValueError("invalid variable bounds")
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "senses", senses)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def n_vars(self) -> int:
        return self.c.size

    @property
    def n_rows(self) -> int:
        return self.b.size

    def with_bounds(self, lower=None, upper=None) -> "LinearProgram":
        return LinearProgram(
            self.c, self.A, self.senses, self.b,
            self.lower if lower is None else lower,
            self.upper if upper is None else upper,
            self.row_names, self.col_names,
        )


@dataclass(frozen=True, eq=False)
class LpSolution:
    status: LpStatus
    x: np.ndarray | None = None
    duals: np.ndarray | None = None
    reduced_costs: np.ndarray | None = None
    objective: float = float("nan")
    iterations: int = 0
    residuals: dict = field(default_factory=dict)

    @property
    def optimal(self) -> bool:
        return self.status is LpStatus.OPTIMAL


# ---------------------------------------------------------------------------


@dataclass
class _Standard:
    """``A x = b, x >= 0`` form with bookkeeping back to the caller's variables."""

    A: np.ndarray
    b: np.ndarray
    c: np.ndarray
    n_struct: int            # structural columns (before slacks)
    col_var: np.ndarray      # original variable of each structural column
    col_sign: np.ndarray     # +1 / -1 orientation of each structural column
    x0: np.ndarray           # offsets so that x = x0 + sum(sign * x')
    row_origin: np.ndarray   # original row index, or -1 for a bound row
    row_sign: np.ndarray     # +1 / -1 if the row was negated to make b >= 0
    slack_of_row: np.ndarray  # slack column per row (-1 for equalities)


def _standardize(lp: LinearProgram) -> _Standard:
    n = lp.n_vars
    lo, up = lp.lower, lp.upper
    x0 = np.zeros(n)
    cols, col_var, col_sign, bound_rows = [], [], [], []
    for j in range(n):
        if np.isfinite(lo[j]) and np.isfinite(up[j]) and up[j] - lo[j] <= 0:
            if up[j] < lo[j]:
                raise ValueError(f"variable {j}: lower bound exceeds upper bound")
            x0[j] = lo[j]
        elif np.isfinite(lo[j]):
            x0[j] = lo[j]
            cols.append(j)
            col_var.append(j)
            col_sign.append(1.0)
            if np.isfinite(up[j]):
                bound_rows.append((len(cols) - 1, up[j] - lo[j]))
        elif np.isfinite(up[j]):
            x0[j] = up[j]
            col_var.append(j)
            col_sign.append(-1.0)
            cols.append(j)
        else:
            col_var += [j, j]
            col_sign += [1.0, -1.0]
            cols += [j, j]
    col_var = np.asarray(col_var, dtype=int)
    col_sign = np.asarray(col_sign, dtype=float)
    ns = col_var.size
    A_struct = lp.A[:, col_var] * col_sign if ns else np.zeros((lp.n_rows, 0))
    c_struct = lp.c[col_var] * col_sign if ns else np.zeros(0)
    b = lp.b - lp.A @ x0

    m0 = lp.n_rows
    m = m0 + len(bound_rows)
    senses = list(lp.senses) + [LE] * len(bound_rows)
    A_rows = np.zeros((m, ns))
    A_rows[:m0] = A_struct
    b_all = np.zeros(m)
    b_all[:m0] = b
    for k, (col, width) in enumerate(bound_rows):
        A_rows[m0 + k, col] = 1.0
        b_all[m0 + k] = width
    n_slack = sum(1 for s in senses if s != EQ)
    A_full = np.zeros((m, ns + n_slack))
    A_full[:, :ns] = A_rows
    slack_of_row = np.full(m, -1, dtype=int)
    k = ns
    for i, s in enumerate(senses):
        if s == LE:
            A_full[i, k] = 1.0
        elif s == GE:
            A_full[i, k] = -1.0
        else:
            continue
        slack_of_row[i] = k
        k += 1
    row_sign = np.where(b_all < 0, -1.0, 1.0)
    A_full *= row_sign[:, None]
    b_all *= row_sign
    c_full = np.zeros(ns + n_slack)
    c_full[:ns] = c_struct
    row_origin = np.concatenate([np.arange(m0), np.full(len(bound_rows), -1)]).astype(int)
    return _Standard(A_full, b_all, c_full, ns, col_var, col_sign, x0, row_origin, row_sign, slack_of_row)


class _Tableau:
    def __init__(self, A, b, basis):
        m, n = A.shape
        self.T = np.zeros((m + 1, n + 1))
        self.T[:m, :n] = A
        self.T[:m, n] = b
        self.basis = np.asarray(basis, dtype=int)
        self.m, self.n = m, n
        self.iterations = 0

    def set_costs(self, c):
        m, n = self.m, self.n
        self.T[m, :n] = c
        self.T[m, n] = 0.0
        cb = c[self.basis]
        self.T[m] -= cb @ self.T[:m]

    def pivot(self, r, q):
        T = self.T
        T[r] /= T[r, q]
        col = T[:, q].copy()
        col[r] = 0.0
        T -= np.outer(col, T[r])
        T[:, q] = 0.0
        T[r, q] = 1.0
        self.basis[r] = q
        self.iterations += 1

    def run(self, allowed, max_iter):
        """Primal simplex on the current costs. Returns 'optimal' or 'unbounded'."""
        m, n = self.m, self.n
        T = self.T
        bland = False
        degenerate_run = 0
        while True:
            if self.iterations > max_iter:
                raise LpNumericalError("simplex iteration limit reached")
            d = T[m, :n]
            candidates = np.flatnonzero((d < -OPT_TOL) & allowed)
            if candidates.size == 0:
                return "optimal"
            q = candidates[0] if bland else candidates[np.argmin(d[candidates])]
            col = T[:m, q]
            rows = np.flatnonzero(col > _PIVOT_TOL)
            if rows.size == 0:
                return "unbounded"
            rhs = np.maximum(T[rows, n], 0.0)
            ratios = rhs / col[rows]
            best = ratios.min()
            ties = rows[ratios <= best + 1e-12 * max(1.0, best)]
            if bland:
                r = ties[np.argmin(self.basis[ties])]
            else:
                r = ties[np.argmax(col[ties])]
            if best <= 1e-12:
                degenerate_run += 1
                if degenerate_run > _DEGENERATE_RUN:
                    bland = True
            else:
                degenerate_run = 0
                bland = False
            self.pivot(r, q)


def _scale(lp: LinearProgram) -> float:
    parts = [1.0]
    if lp.b.size:
        parts.append(float(np.max(np.abs(lp.b))))
    if lp.c.size:
        parts.append(float(np.max(np.abs(lp.c))))
    return max(parts)


def solve_lp(lp: LinearProgram, max_iter: int | None = None) -> LpSolution:
    """Solve a linear program to optimality.

    Returns an :class:`LpSolution` with status ``optimal``, ``infeasible`` or
    ``unbounded``. Raises :class:`LpNumericalError` if the final basis does
    not satisfy the primal/dual residual tolerances.
    """
    std = _standardize(lp)
    m, n = std.A.shape
    if max_iter is None:
        max_iter = 50 * (m + n) + 1000

    # phase 1: artificials where no usable slack exists
    basis = np.full(m, -1, dtype=int)
    for i in range(m):
        k = std.slack_of_row[i]
        if k >= 0 and std.A[i, k] > 0:
            basis[i] = k
    need = np.flatnonzero(basis < 0)
    n_art = need.size
    A1 = np.zeros((m, n + n_art))
    A1[:, :n] = std.A
    for a, i in enumerate(need):
        A1[i, n + a] = 1.0
        basis[i] = n + a
    tab = _Tableau(A1, std.b, basis)
    if n_art:
        c1 = np.zeros(n + n_art)
        c1[n:] = 1.0
        tab.set_costs(c1)
        tab.run(np.ones(n + n_art, dtype=bool), max_iter)
        infeas = -tab.T[m, -1]
        if infeas > FEAS_TOL * max(1.0, float(np.max(np.abs(std.b), initial=0.0))):
            return LpSolution(LpStatus.INFEASIBLE, iterations=tab.iterations)
        # drive remaining artificials out of the basis; drop redundant rows
        keep = np.ones(m, dtype=bool)
        for i in range(m):
            if tab.basis[i] >= n:
                row = tab.T[i, :n]
                nz = np.flatnonzero(np.abs(row) > 1e-9)
                if nz.size:
                    tab.pivot(i, nz[np.argmax(np.abs(row[nz]))])
                else:
                    keep[i] = False
        if not keep.all():
            rows = np.concatenate([np.flatnonzero(keep), [m]])
            tab.T = tab.T[rows]
            tab.basis = tab.basis[keep]
            tab.m = int(keep.sum())
        tab.T = np.delete(tab.T, np.s_[n:n + n_art], axis=1)
        tab.n = n
    else:
        keep = np.ones(m, dtype=bool)
    tab.set_costs(std.c)
    status = tab.run(np.ones(n, dtype=bool), max_iter)
    if status == "unbounded":
        return LpSolution(LpStatus.UNBOUNDED, iterations=tab.iterations)

    # refactor the optimal basis against the original data
    kept_rows = np.flatnonzero(keep)
    B = std.A[np.ix_(kept_rows, tab.basis)]
    try:
        xb = np.linalg.solve(B, std.b[kept_rows])
        y_kept = np.linalg.solve(B.T, std.c[tab.basis])
    except np.linalg.LinAlgError as exc:
        raise LpNumericalError(f"singular optimal basis: {exc}") from None
    x_std = np.zeros(n)
    x_std[tab.basis] = np.maximum(xb, 0.0)
    y_std = np.zeros(m)
    y_std[kept_rows] = y_kept

    x = std.x0.copy()
    np.add.at(x, std.col_var, std.col_sign * x_std[: std.n_struct])
    duals = np.zeros(lp.n_rows)
    orig = std.row_origin >= 0
    duals[std.row_origin[orig]] = (std.row_sign * y_std)[orig]
    reduced = lp.c - lp.A.T @ duals
    sol = LpSolution(LpStatus.OPTIMAL, x, duals, reduced, float(lp.c @ x), tab.iterations)
    res = lp_residuals(lp, sol)
    object.__setattr__(sol, "residuals", res)
    tol = FEAS_TOL * _scale(lp)
    if max(res["primal"], res["dual"], res["complementarity"]) > tol:
        raise LpNumericalError(f"residuals above tolerance: {res}")
    return sol


def lp_residuals(lp: LinearProgram, sol: LpSolution) -> dict:
    """Primal feasibility, dual feasibility, complementarity and duality gap."""
    x, y, d = sol.x, sol.duals, sol.reduced_costs
    ax = lp.A @ x
    senses = np.asarray(lp.senses, dtype=object)
    le, ge, eq = senses == LE, senses == GE, senses == EQ
    viol = np.zeros(lp.n_rows)
    viol[le] = np.maximum(ax[le] - lp.b[le], 0.0)
    viol[ge] = np.maximum(lp.b[ge] - ax[ge], 0.0)
    viol[eq] = np.abs(ax[eq] - lp.b[eq])
    bound_viol = np.maximum(np.maximum(lp.lower - x, x - lp.upper), 0.0)
    primal = float(max(viol.max(initial=0.0), bound_viol.max(initial=0.0)))

    dual_viol = np.zeros(lp.n_rows)
    dual_viol[le] = np.maximum(y[le], 0.0)
    dual_viol[ge] = np.maximum(-y[ge], 0.0)
    # reduced cost sign must match the bound it sits on
    lo_fin, up_fin = np.isfinite(lp.lower), np.isfinite(lp.upper)
    rc_viol = np.where(~lo_fin, np.maximum(d, 0.0), 0.0) + np.where(~up_fin, np.maximum(-d, 0.0), 0.0)
    dual = float(max(dual_viol.max(initial=0.0), rc_viol.max(initial=0.0)))

    slack = np.abs(ax - lp.b)
    cs_rows = np.abs(y) * np.where(eq, 0.0, slack)
    gap_lo = np.where(lo_fin, x - lp.lower, 0.0)
    gap_up = np.where(up_fin, lp.upper - x, 0.0)
    cs_cols = np.where(d > 0, d * gap_lo, -d * gap_up)
    comp = float(max(cs_rows.max(initial=0.0), np.abs(cs_cols).max(initial=0.0)))

    dual_obj = float(lp.b @ y)
    dual_obj += float(np.sum(np.where((d > 0) & lo_fin, d * np.where(lo_fin, lp.lower, 0.0), 0.0)))
    dual_obj += float(np.sum(np.where((d < 0) & up_fin, d * np.where(up_fin, lp.upper, 0.0), 0.0)))
    return {
        "primal": primal,
        "dual": dual,
        "complementarity": comp,
        "duality_gap": abs(float(lp.c @ x) - dual_obj),
        "dual_objective": dual_obj,
    }


def dump_tableau(tab_or_lp) -> str:
    """Plain-text dump of an LP for debugging."""
    lp = tab_or_lp
    lines = ["min " + " ".join(f"{v:+.6g}*x{j}" for j, v in enumerate(lp.c) if v)]
    for i in range(lp.n_rows):
        name = lp.row_names[i] if i < len(lp.row_names) else f"r{i}"
        terms = " ".join(f"{v:+.6g}*x{j}" for j, v in enumerate(lp.A[i]) if v)
        lines.append(f"{name}: {terms} {lp.senses[i]} {lp.b[i]:.6g}")
    for j in range(lp.n_vars):
        lines.append(f"x{j} in [{lp.lower[j]:.6g}, {lp.upper[j]:.6g}]")
    return "\n".join(lines)


def solve_lp_highs(lp: LinearProgram) -> LpSolution:
    """Same contract as :func:`solve_lp`, backed by SciPy's HiGHS.

    Only used as an optional fast node solver inside branch-and-bound; the
    final answers are re-solved with the built-in simplex.
    """
    from scipy.optimize import linprog

    senses = np.array(lp.senses)
    le, ge, eq = senses == LE, senses == GE, senses == EQ
    A_ub = np.vstack([lp.A[le], -lp.A[ge]])
    b_ub = np.concatenate([lp.b[le], -lp.b[ge]])
    lower = np.where(np.isfinite(lp.lower), lp.lower, None)
    upper = np.where(np.isfinite(lp.upper), lp.upper, None)
    res = linprog(
        lp.c,
        A_ub=A_ub if A_ub.size else None, b_ub=b_ub if A_ub.size else None,
        A_eq=lp.A[eq] if eq.any() else None, b_eq=lp.b[eq] if eq.any() else None,
        bounds=list(zip(lower, upper)), method="highs",
    )
    if res.status == 2:
        return LpSolution(LpStatus.INFEASIBLE, iterations=int(res.nit))
    if res.status == 3:
        return LpSolution(LpStatus.UNBOUNDED, iterations=int(res.nit))
    if res.status != 0:
        raise LpNumericalError(f"HiGHS failed: {res.message}")
    duals = np.zeros(lp.n_rows)
    if A_ub.size:
        m_ub = res.ineqlin.marginals
        n_le = int(le.sum())
        duals[np.flatnonzero(le)] = m_ub[:n_le]
        duals[np.flatnonzero(ge)] = -m_ub[n_le:]
    if eq.any():
        duals[np.flatnonzero(eq)] = res.eqlin.marginals
    x = np.asarray(res.x, dtype=float)
    sol = LpSolution(LpStatus.OPTIMAL, x, duals, lp.c - lp.A.T @ duals, float(lp.c @ x), int(res.nit))
    object.__setattr__(sol, "residuals", lp_residuals(lp, sol))
    return sol


LP_SOLVERS = {"simplex": solve_lp, "highs": solve_lp_highs}
