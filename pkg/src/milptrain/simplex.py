"""Dense two-phase simplex solver for linear programs with variable bounds.

The solver works on problems of the form

    minimize    c . x
    subject to  A x  (<= | >= | =)  b
                lower <= x <= upper

with entries of ``lower``/``upper`` allowed to be infinite.  It maintains an
explicit basis inverse with rank-one row updates and periodic
refactorization, prices with Dantzig's rule, and falls back to Bland's rule
once a stall is detected so that degenerate problems terminate.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "LpStatus",
    "SolverConfig",
    "LpProblem",
    "LpSolution",
    "ProblemError",
    "SolverError",
    "solve_lp",
]

_RELATIONS = ("<=", ">=", "=")

# How many pivots without progress before switching to Bland's rule, as a
# multiple of (num_vars + num_constraints).
_STALL_FACTOR = 2

# Rebuild the basis inverse from scratch every this many basis changes.
_REFACTOR_EVERY = 64

# Smallest pivot magnitude accepted during the ratio test.
_PIVOT_TOL = 1e-10


class ProblemError(ValueError):
    """Raised when a problem's arrays are malformed or inconsistent."""


class SolverError(RuntimeError):
    """Raised on numerical failure inside the solver."""


class LpStatus(enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    ITERATION_LIMIT = "iteration_limit"


@dataclass(frozen=True)
class SolverConfig:
    """Tolerances and limits shared by the LP and MILP solvers."""

    feasibility_tol: float = 1e-9
    optimality_tol: float = 1e-9
    max_iterations: int = 50_000
    integrality_tol: float = 1e-6
    mip_abs_gap: float = 1e-6
    mip_rel_gap: float = 0.0
    node_limit: int | None = None
    time_limit: float | None = None


@dataclass
class LpProblem:
    """A linear program in row form with per-variable bounds."""

    objective: np.ndarray
    constraint_matrix: np.ndarray
    relations: tuple[str, ...]
    rhs: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self) -> None:
        self.objective = np.asarray(self.objective, dtype=float)
        self.constraint_matrix = np.asarray(self.constraint_matrix, dtype=float)
        self.rhs = np.asarray(self.rhs, dtype=float)
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        self.relations = tuple(self.relations)

    @property
    def num_vars(self) -> int:
        return self.objective.shape[0]

    @property
    def num_constraints(self) -> int:
        return self.constraint_matrix.shape[0] if self.constraint_matrix.ndim == 2 else 0

    def validate(self) -> None:
        n = self.num_vars
        if self.constraint_matrix.ndim != 2:
            raise ProblemError("constraint matrix must be two-dimensional")
        m = self.constraint_matrix.shape[0]
        if self.constraint_matrix.shape[1] != n:
            raise ProblemError(
                f"constraint matrix has {self.constraint_matrix.shape[1]} columns, "
                f"objective has {n} entries"
            )
        if self.rhs.shape != (m,):
            raise ProblemError(f"rhs has shape {self.rhs.shape}, expected ({m},)")
        if len(self.relations) != m:
            raise ProblemError(f"{len(self.relations)} relations for {m} rows")
        for rel in self.relations:
            if rel not in _RELATIONS:
                raise ProblemError(f"unknown relation {rel!r}")
        if self.lower.shape != (n,) or self.upper.shape != (n,):
            raise ProblemError("bound arrays must match the number of variables")
        if np.any(np.isnan(self.lower)) or np.any(np.isnan(self.upper)):
            raise ProblemError("bounds must not contain NaN")
        if np.any(self.lower > self.upper):
            bad = int(np.argmax(self.lower > self.upper))
            raise ProblemError(
                f"variable {bad} has lower bound {self.lower[bad]} above upper "
                f"bound {self.upper[bad]}"
            )
        if np.any(self.lower == np.inf) or np.any(self.upper == -np.inf):
            raise ProblemError("bounds of the wrong infinity leave no feasible value")
        if not np.all(np.isfinite(self.constraint_matrix)):
            raise ProblemError("constraint matrix must be finite")
        if not np.all(np.isfinite(self.rhs)):
            raise ProblemError("rhs must be finite")
        if not np.all(np.isfinite(self.objective)):
            raise ProblemError("objective must be finite")


@dataclass
class LpSolution:
    """Result of a simplex run.

    ``values`` is None unless the status is OPTIMAL.  ``objective`` is +inf
    for infeasible problems, -inf for unbounded ones and NaN when the
    iteration limit fired.
    """

    status: LpStatus
    values: np.ndarray | None
    objective: float
    iterations: int


# Nonbasic-at-lower, nonbasic-at-upper, nonbasic-free (at zero), basic.
_AT_LOWER = 0
_AT_UPPER = 1
_FREE = 2
_BASIC = 3


class _Simplex:
    """Working state for one solve: extended columns, basis, basis inverse."""

    def __init__(self, problem: LpProblem, config: SolverConfig):
        self.config = config
        A = problem.constraint_matrix
        m, n = A.shape
        self.m = m
        self.n_struct = n

        # One slack per row turns every relation into an equality.  The slack
        # bound interval encodes the relation.
        slack_lower = np.empty(m)
        slack_upper = np.empty(m)
        for i, rel in enumerate(problem.relations):
            if rel == "<=":
                slack_lower[i], slack_upper[i] = 0.0, np.inf
            elif rel == ">=":
                slack_lower[i], slack_upper[i] = -np.inf, 0.0
            else:
                slack_lower[i], slack_upper[i] = 0.0, 0.0

        self.b = problem.rhs.copy()
        self.lower = np.concatenate([problem.lower, slack_lower])
        self.upper = np.concatenate([problem.upper, slack_upper])
        self.A = np.hstack([A, np.eye(m)])
        self.n_total = n + m
        self.art_start = self.n_total

        self.status = np.empty(self.n_total, dtype=np.int8)
        self.x = np.zeros(self.n_total)
        for j in range(self.n_total):
            lo, hi = self.lower[j], self.upper[j]
            if np.isfinite(lo):
                self.status[j], self.x[j] = _AT_LOWER, lo
            elif np.isfinite(hi):
                self.status[j], self.x[j] = _AT_UPPER, hi
            else:
                self.status[j], self.x[j] = _FREE, 0.0

        self.basis = np.empty(m, dtype=np.int64)
        self.b_inv = np.zeros((m, m))
        self.iterations = 0
        self.pivots_since_refactor = 0
        self.stall_limit = _STALL_FACTOR * (n + m)

    def install_phase1_basis(self) -> None:
        """Start from the slack basis, adding artificials only where the
        initial residual cannot sit inside a slack's bound interval."""
        m = self.m
        resid = self.b - self.A[:, : self.n_struct] @ self.x[: self.n_struct]
        art_rows: list[int] = []
        art_signs: list[float] = []
        for i in range(m):
            s = self.n_struct + i
            lo, hi = self.lower[s], self.upper[s]
            if lo <= resid[i] <= hi:
                self.basis[i] = s
                self.status[s] = _BASIC
                self.x[s] = resid[i]
            else:
                # Artificial column +/- e_i carries the overflow.
                if resid[i] > hi:
                    self.status[s], self.x[s] = _AT_UPPER, hi
                    sign, amount = 1.0, resid[i] - hi
                else:
                    self.status[s], self.x[s] = _AT_LOWER, lo
                    sign, amount = -1.0, lo - resid[i]
                art_rows.append(i)
                art_signs.append(sign)
                self.basis[i] = self.n_total + len(art_rows) - 1
        if art_rows:
            cols = np.zeros((m, len(art_rows)))
            art_lower = np.zeros(len(art_rows))
            art_upper = np.full(len(art_rows), np.inf)
            new_status = np.full(len(art_rows), _BASIC, dtype=np.int8)
            new_x = np.zeros(len(art_rows))
            for k, (i, sign) in enumerate(zip(art_rows, art_signs)):
                cols[i, k] = sign
                s = self.n_struct + i
                if sign > 0:
                    new_x[k] = resid[i] - self.upper[s]
                else:
                    new_x[k] = self.lower[s] - resid[i]
            self.A = np.hstack([self.A, cols])
            self.lower = np.concatenate([self.lower, art_lower])
            self.upper = np.concatenate([self.upper, art_upper])
            self.status = np.concatenate([self.status, new_status])
            self.x = np.concatenate([self.x, new_x])
            self.n_total += len(art_rows)
        self.refactor()

    @property
    def num_artificials(self) -> int:
        return self.n_total - self.art_start

    def refactor(self) -> None:
        B = self.A[:, self.basis]
        try:
            self.b_inv = np.linalg.inv(B)
        except np.linalg.LinAlgError as exc:
            raise SolverError("basis matrix became singular") from exc
        self.recompute_basic_values()
        self.pivots_since_refactor = 0

    def recompute_basic_values(self) -> None:
        xn = self.x.copy()
        xn[self.basis] = 0.0
        resid = self.b - self.A @ xn
        self.x[self.basis] = self.b_inv @ resid

    def run(self, cost: np.ndarray) -> LpStatus:
        """Minimize ``cost . x`` from the current basis.  Returns OPTIMAL,
        UNBOUNDED or ITERATION_LIMIT."""
        tol = self.config.optimality_tol
        stalled = 0
        bland = False
        while True:
            if self.iterations >= self.config.max_iterations:
                return LpStatus.ITERATION_LIMIT

            y = cost[self.basis] @ self.b_inv
            reduced = cost - y @ self.A
            reduced[self.basis] = 0.0

            movable = self.upper - self.lower > 0.0
            at_lower = (self.status == _AT_LOWER) & movable
            at_upper = (self.status == _AT_UPPER) & movable
            free = self.status == _FREE
            can_increase = (at_lower | free) & (reduced < -tol)
            can_decrease = (at_upper | free) & (reduced > tol)
            eligible = can_increase | can_decrease
            if not np.any(eligible):
                return LpStatus.OPTIMAL

            if bland:
                q = int(np.argmax(eligible))
            else:
                scores = np.where(eligible, np.abs(reduced), -1.0)
                q = int(np.argmax(scores))
            direction = 1.0 if can_increase[q] else -1.0

            w = self.b_inv @ self.A[:, q]
            # x_basis moves by -t * direction * w as x_q moves by t * direction.
            drop = direction * w

            xb = self.x[self.basis]
            lb = self.lower[self.basis]
            ub = self.upper[self.basis]
            ratios = np.full(self.m, np.inf)
            pos = drop > _PIVOT_TOL
            neg = drop < -_PIVOT_TOL
            with np.errstate(invalid="ignore"):
                ratios[pos] = (xb[pos] - lb[pos]) / drop[pos]
                ratios[neg] = (ub[neg] - xb[neg]) / (-drop[neg])
            ratios = np.maximum(ratios, 0.0)

            span = self.upper[q] - self.lower[q]
            t_bound = span if np.isfinite(span) else np.inf
            r_min = ratios.min() if self.m else np.inf
            t_star = min(r_min, t_bound)
            if not np.isfinite(t_star):
                return LpStatus.UNBOUNDED

            self.iterations += 1
            if t_star <= _PIVOT_TOL:
                stalled += 1
                if stalled > self.stall_limit:
                    bland = True
            else:
                stalled = 0
                bland = False

            if t_bound <= r_min:
                # The entering variable runs to its opposite bound: no basis
                # change, just a bound flip.
                self.x[self.basis] = xb - t_star * drop
                if direction > 0:
                    self.x[q] = self.upper[q]
                    self.status[q] = _AT_UPPER
                else:
                    self.x[q] = self.lower[q]
                    self.status[q] = _AT_LOWER
                continue

            blocking = np.flatnonzero(ratios <= t_star + 1e-12)
            if bland:
                r = int(blocking[np.argmin(self.basis[blocking])])
            else:
                r = int(blocking[np.argmax(np.abs(w[blocking]))])

            new_xq = self.x[q] + direction * t_star
            self.x[self.basis] = xb - t_star * drop
            leaving = self.basis[r]
            if drop[r] > 0:
                self.x[leaving] = self.lower[leaving]
                self.status[leaving] = _AT_LOWER
            else:
                self.x[leaving] = self.upper[leaving]
                self.status[leaving] = _AT_UPPER
            self.basis[r] = q
            self.status[q] = _BASIC
            self.x[q] = new_xq

            pivot = w[r]
            if abs(pivot) < _PIVOT_TOL:
                raise SolverError("pivot element vanished during basis update")
            self.b_inv[r] /= pivot
            others = np.arange(self.m) != r
            self.b_inv[others] -= np.outer(w[others], self.b_inv[r])

            self.pivots_since_refactor += 1
            if self.pivots_since_refactor >= _REFACTOR_EVERY:
                self.refactor()

    def polish(self) -> None:
        """Refactor and run one step of iterative refinement on the basics."""
        self.refactor()
        xn = self.x.copy()
        xn[self.basis] = 0.0
        err = self.b - self.A @ self.x
        self.x[self.basis] += self.b_inv @ err


def _solve_unconstrained(problem: LpProblem) -> LpSolution:
    """Bound-only minimization used when every row was removed in presolve."""
    c = problem.objective
    x = np.zeros(problem.num_vars)
    for j in range(problem.num_vars):
        lo, hi = problem.lower[j], problem.upper[j]
        if c[j] > 0:
            if not np.isfinite(lo):
                return LpSolution(LpStatus.UNBOUNDED, None, -np.inf, 0)
            x[j] = lo
        elif c[j] < 0:
            if not np.isfinite(hi):
                return LpSolution(LpStatus.UNBOUNDED, None, -np.inf, 0)
            x[j] = hi
        else:
            x[j] = lo if np.isfinite(lo) else (hi if np.isfinite(hi) else 0.0)
    return LpSolution(LpStatus.OPTIMAL, x, float(c @ x), 0)


def _presolve_empty_rows(problem: LpProblem, tol: float) -> LpProblem | LpStatus:
    """Drop all-zero rows; detect trivially impossible ones."""
    A = problem.constraint_matrix
    if A.shape[0] == 0:
        return problem
    empty = ~np.any(A != 0.0, axis=1)
    if not np.any(empty):
        return problem
    for i in np.flatnonzero(empty):
        rel, rhs = problem.relations[i], problem.rhs[i]
        if rel == "<=" and rhs < -tol:
            return LpStatus.INFEASIBLE
        if rel == ">=" and rhs > tol:
            return LpStatus.INFEASIBLE
        if rel == "=" and abs(rhs) > tol:
            return LpStatus.INFEASIBLE
    keep = ~empty
    return LpProblem(
        objective=problem.objective,
        constraint_matrix=A[keep],
        relations=tuple(r for r, k in zip(problem.relations, keep) if k),
        rhs=problem.rhs[keep],
        lower=problem.lower,
        upper=problem.upper,
    )


def solve_lp(problem: LpProblem, config: SolverConfig | None = None) -> LpSolution:
    """Solve a linear program to optimality.

    Returns an :class:`LpSolution`; when the status is OPTIMAL the values
    satisfy every constraint and bound within ``config.feasibility_tol`` and
    the objective equals ``objective . values``.
    """
    if config is None:
        config = SolverConfig()
    problem.validate()

    reduced = _presolve_empty_rows(problem, config.feasibility_tol)
    if reduced is LpStatus.INFEASIBLE:
        return LpSolution(LpStatus.INFEASIBLE, None, np.inf, 0)
    problem = reduced
    if problem.num_constraints == 0:
        return _solve_unconstrained(problem)

    state = _Simplex(problem, config)
    state.install_phase1_basis()

    if state.num_artificials > 0:
        phase1_cost = np.zeros(state.n_total)
        phase1_cost[state.art_start :] = 1.0
        status = state.run(phase1_cost)
        if status == LpStatus.ITERATION_LIMIT:
            return LpSolution(status, None, np.nan, state.iterations)
        if status == LpStatus.UNBOUNDED:
            raise SolverError("phase one reported an unbounded objective")
        infeas = float(np.sum(state.x[state.art_start :]))
        if infeas > 1e-8:
            return LpSolution(LpStatus.INFEASIBLE, None, np.inf, state.iterations)
        # Pin artificials at zero so phase two cannot move them again.
        state.lower[state.art_start :] = 0.0
        state.upper[state.art_start :] = 0.0
        state.x[state.art_start :] = np.where(
            state.status[state.art_start :] == _BASIC, state.x[state.art_start :], 0.0
        )

    cost = np.zeros(state.n_total)
    cost[: state.n_struct] = problem.objective
    status = state.run(cost)
    if status == LpStatus.ITERATION_LIMIT:
        return LpSolution(status, None, np.nan, state.iterations)
    if status == LpStatus.UNBOUNDED:
        return LpSolution(status, None, -np.inf, state.iterations)

    state.polish()
    values = state.x[: state.n_struct].copy()
    objective = float(problem.objective @ values)
    return LpSolution(LpStatus.OPTIMAL, values, objective, state.iterations)
