"""Branch-and-bound for linear programs with binary variables.

Nodes are LP relaxations solved by :mod:`milptrain.simplex`.  The search
keeps a best-bound priority queue but dives depth-first from each popped
node, branching on the most fractional binary and descending into the child
that matches the rounded relaxation value.  A caller-supplied warm start is
installed as the root incumbent after a feasibility check, which lets the
very first node prune.
"""

from __future__ import annotations

import enum
import heapq
import itertools
import logging
import time
from dataclasses import dataclass, replace

import numpy as np

from .simplex import (
    LpProblem,
    LpSolution,
    LpStatus,
    ProblemError,
    SolverConfig,
    SolverError,
    solve_lp,
)

__all__ = ["MilpStatus", "MilpProblem", "MilpSolution", "solve_milp"]

log = logging.getLogger(__name__)


class MilpStatus(enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    FEASIBLE_AT_LIMIT = "feasible_at_limit"
    NO_INCUMBENT_AT_LIMIT = "no_incumbent_at_limit"


@dataclass
class MilpProblem:
    """An :class:`LpProblem` plus the set of variables restricted to {0, 1}."""

    base: LpProblem
    binary_vars: frozenset[int]

    def __post_init__(self) -> None:
        self.binary_vars = frozenset(int(j) for j in self.binary_vars)

    def validate(self) -> None:
        self.base.validate()
        n = self.base.num_vars
        for j in self.binary_vars:
            if not 0 <= j < n:
                raise ProblemError(f"binary index {j} out of range for {n} variables")
            if self.base.lower[j] < 0.0 or self.base.upper[j] > 1.0:
                raise ProblemError(
                    f"binary variable {j} has bounds outside [0, 1]: "
                    f"[{self.base.lower[j]}, {self.base.upper[j]}]"
                )


@dataclass
class MilpSolution:
    """Result of a branch-and-bound run.

    ``best_bound`` is a proven lower bound on the optimal objective;
    ``values`` is None when no integer-feasible point was found.
    """

    status: MilpStatus
    values: np.ndarray | None
    objective: float
    best_bound: float
    nodes_explored: int


def _check_feasible(problem: LpProblem, x: np.ndarray, tol: float) -> bool:
    if np.any(x < problem.lower - tol) or np.any(x > problem.upper + tol):
        return False
    row = problem.constraint_matrix @ x
    for val, rel, rhs in zip(row, problem.relations, problem.rhs):
        if rel == "<=" and val > rhs + tol:
            return False
        if rel == ">=" and val < rhs - tol:
            return False
        if rel == "=" and abs(val - rhs) > tol:
            return False
    return True


class _Search:
    def __init__(
        self,
        problem: MilpProblem,
        config: SolverConfig,
        on_incumbent,
    ):
        self.problem = problem
        self.config = config
        self.on_incumbent = on_incumbent
        self.bvars = np.array(sorted(problem.binary_vars), dtype=np.int64)
        self.base_lower = problem.base.lower.copy()
        self.base_upper = problem.base.upper.copy()
        self.incumbent: np.ndarray | None = None
        self.incumbent_obj = np.inf
        self.nodes = 0
        self.fathom_min = np.inf
        self.counter = itertools.count()
        self.heap: list[tuple[float, int, tuple[tuple[int, int], ...]]] = []
        self.deadline = (
            time.monotonic() + config.time_limit if config.time_limit is not None else None
        )

    def gap(self) -> float:
        if self.incumbent is None:
            return 0.0
        return max(self.config.mip_abs_gap, self.config.mip_rel_gap * abs(self.incumbent_obj))

    def out_of_budget(self) -> bool:
        if self.config.node_limit is not None and self.nodes >= self.config.node_limit:
            return True
        if self.deadline is not None and time.monotonic() >= self.deadline:
            return True
        return False

    def solve_restriction(self, fixings: tuple[tuple[int, int], ...]) -> LpSolution:
        lower = self.base_lower.copy()
        upper = self.base_upper.copy()
        for var, val in fixings:
            lower[var] = float(val)
            upper[var] = float(val)
        sub = replace(self.problem.base, lower=lower, upper=upper)
        sol = solve_lp(sub, self.config)
        if sol.status == LpStatus.UNBOUNDED:
            raise SolverError("relaxation is unbounded; binaries cannot repair that")
        if sol.status == LpStatus.ITERATION_LIMIT:
            raise SolverError("node relaxation hit the simplex iteration limit")
        return sol

    def offer_incumbent(self, values: np.ndarray, objective: float) -> None:
        if objective < self.incumbent_obj:
            self.incumbent = values.copy()
            self.incumbent_obj = objective
            if self.on_incumbent is not None:
                self.on_incumbent(objective, self.nodes)

    def try_warm_start(self, warm_start) -> None:
        ws = np.asarray(warm_start, dtype=float)
        if ws.shape != (self.problem.base.num_vars,):
            raise ProblemError(
                f"warm start has shape {ws.shape}, expected ({self.problem.base.num_vars},)"
            )
        vals = ws.copy()
        if self.bvars.size:
            vals[self.bvars] = np.round(vals[self.bvars])
        if _check_feasible(self.problem.base, vals, self.config.feasibility_tol):
            self.offer_incumbent(vals, float(self.problem.base.objective @ vals))
        else:
            log.info("warm start rejected: infeasible after rounding binaries")

    def run(self) -> MilpSolution:
        heapq.heappush(self.heap, (-np.inf, next(self.counter), ()))
        limit_hit = False
        open_min = np.inf

        while self.heap:
            bound0, _, fixings = heapq.heappop(self.heap)
            if self.incumbent is not None and bound0 >= self.incumbent_obj - self.gap():
                self.fathom_min = min(self.fathom_min, bound0)
                continue
            if self.out_of_budget():
                limit_hit = True
                open_min = min(open_min, bound0)
                break

            # Depth-first dive from this node.
            node_bound = bound0
            while True:
                if self.out_of_budget():
                    limit_hit = True
                    open_min = min(open_min, node_bound)
                    break
                sol = self.solve_restriction(fixings)
                self.nodes += 1
                if sol.status == LpStatus.INFEASIBLE:
                    self.fathom_min = min(self.fathom_min, np.inf)
                    break
                z = sol.objective
                node_bound = z
                if self.incumbent is not None and z >= self.incumbent_obj - self.gap():
                    self.fathom_min = min(self.fathom_min, z)
                    break

                x = sol.values
                bvals = x[self.bvars] if self.bvars.size else np.empty(0)
                frac = np.abs(bvals - np.round(bvals))
                if not self.bvars.size or np.all(frac <= self.config.integrality_tol):
                    done = self.handle_integral(fixings, sol)
                    if done:
                        break
                    # Not fathomed: keep branching on some unfixed binary.
                fixed = {var for var, _ in fixings}
                free_mask = np.array([j not in fixed for j in self.bvars], dtype=bool)
                if not free_mask.any():
                    # Fully fixed and handle_integral chose not to fathom;
                    # nothing left to branch on.
                    self.fathom_min = min(self.fathom_min, z)
                    break
                dist_half = np.where(free_mask, np.abs(bvals - 0.5), np.inf)
                pick = int(np.argmin(dist_half))
                var = int(self.bvars[pick])
                dive_val = 1 if bvals[pick] >= 0.5 else 0
                heapq.heappush(
                    self.heap, (z, next(self.counter), fixings + ((var, 1 - dive_val),))
                )
                fixings = fixings + ((var, dive_val),)

            if limit_hit:
                break

        if limit_hit:
            for bound, _, _ in self.heap:
                open_min = min(open_min, bound)
            best_bound = min(self.incumbent_obj, self.fathom_min, open_min)
            if self.incumbent is not None:
                return MilpSolution(
                    MilpStatus.FEASIBLE_AT_LIMIT,
                    self.incumbent,
                    self.incumbent_obj,
                    best_bound,
                    self.nodes,
                )
            return MilpSolution(
                MilpStatus.NO_INCUMBENT_AT_LIMIT, None, np.inf, best_bound, self.nodes
            )

        if self.incumbent is None:
            return MilpSolution(MilpStatus.INFEASIBLE, None, np.inf, np.inf, self.nodes)
        best_bound = min(self.incumbent_obj, self.fathom_min)
        return MilpSolution(
            MilpStatus.OPTIMAL, self.incumbent, self.incumbent_obj, best_bound, self.nodes
        )

    def handle_integral(self, fixings: tuple[tuple[int, int], ...], sol: LpSolution) -> bool:
        """Relaxation values are integral within tolerance.  Returns True when
        the node is fathomed."""
        z = sol.objective
        fixed = {var for var, _ in fixings}
        all_fixed = all(j in fixed for j in self.bvars)
        if all_fixed:
            self.offer_incumbent(sol.values, z)
            self.fathom_min = min(self.fathom_min, z)
            return True

        # Some binaries are merely close to integral.  Re-solve with all of
        # them pinned to the rounded values so the returned point satisfies
        # every constraint exactly at the solver's feasibility tolerance.
        rounded = np.round(sol.values[self.bvars]).astype(int)
        pinned = tuple(zip((int(j) for j in self.bvars), (int(v) for v in rounded)))
        repaired = self.solve_restriction(pinned)
        if repaired.status == LpStatus.OPTIMAL:
            self.offer_incumbent(repaired.values, repaired.objective)
            if repaired.objective <= z + max(self.config.mip_abs_gap, 1e-9):
                self.fathom_min = min(self.fathom_min, z)
                return True
        return False


def solve_milp(
    problem: MilpProblem,
    config: SolverConfig | None = None,
    warm_start: np.ndarray | None = None,
    on_incumbent=None,
) -> MilpSolution:
    """Minimize a linear objective with some variables restricted to {0, 1}.

    ``warm_start`` is a full-length variable assignment; its binary entries
    are rounded and, if the point then satisfies all constraints within the
    feasibility tolerance, it becomes the initial incumbent.  An infeasible
    warm start is discarded with a log note.  ``on_incumbent(objective,
    nodes)`` is invoked every time the incumbent improves.
    """
    if config is None:
        config = SolverConfig()
    problem.validate()
    search = _Search(problem, config, on_incumbent)
    if warm_start is not None:
        search.try_warm_start(warm_start)
    return search.run()
