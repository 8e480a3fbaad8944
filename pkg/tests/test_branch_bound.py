"""Branch-and-bound tests: enumeration agreement, warm starts, limits, and
bound bookkeeping."""

import dataclasses

import numpy as np
import pytest

from conftest import random_boxed_milp
from lp_oracle import INFEASIBLE, OPTIMAL, audit_point, enumerate_binary_fixings
from milptrain.branch_bound import (
    MilpProblem,
    MilpStatus,
    solve_milp,
)
from milptrain.simplex import LpProblem, LpStatus, SolverConfig, SolverError, solve_lp


def knapsack(values, weights, capacity):
    n = len(values)
    base = LpProblem(
        objective=-np.asarray(values, dtype=float),
        constraint_matrix=np.asarray(weights, dtype=float).reshape(1, n),
        relations=("<=",),
        rhs=np.array([float(capacity)]),
        lower=np.zeros(n),
        upper=np.ones(n),
    )
    return MilpProblem(base=base, binary_vars=frozenset(range(n)))


class TestKnownInstances:
    def test_knapsack_optimum(self):
        # Items (value, weight): value 9 at weight 7 is best, reached by
        # either {0, 2} or {1, 3}.
        values = [6, 5, 3, 4]
        weights = [5, 4, 2, 3]
        p = knapsack(values, weights, 7)
        sol = solve_milp(p)
        assert sol.status == MilpStatus.OPTIMAL
        assert sol.objective == pytest.approx(-9.0, abs=1e-9)
        chosen = {i for i in range(4) if sol.values[i] > 0.5}
        assert chosen in ({0, 2}, {1, 3})
        assert sum(weights[i] for i in chosen) <= 7

    def test_infeasible_integer_problem(self):
        base = LpProblem(
            objective=np.array([1.0]),
            constraint_matrix=np.array([[2.0]]),
            relations=("=",),
            rhs=np.array([1.0]),
            lower=np.zeros(1),
            upper=np.ones(1),
        )
        p = MilpProblem(base=base, binary_vars=frozenset({0}))
        sol = solve_milp(p)
        assert sol.status == MilpStatus.INFEASIBLE

    def test_pure_lp_passthrough(self):
        base = LpProblem(
            objective=np.array([1.0, 1.0]),
            constraint_matrix=np.array([[1.0, 1.0]]),
            relations=(">=",),
            rhs=np.array([1.0]),
            lower=np.zeros(2),
            upper=np.ones(2),
        )
        p = MilpProblem(base=base, binary_vars=frozenset())
        sol = solve_milp(p)
        assert sol.status == MilpStatus.OPTIMAL
        assert sol.objective == pytest.approx(1.0, abs=1e-9)


class TestEnumerationAgreement:
    def test_random_instances_match_brute_force(self):
        rng = np.random.default_rng(77)
        optimal = 0
        for _ in range(40):
            n_cont = int(rng.integers(0, 3))
            n_bin = int(rng.integers(1, 9))
            m = int(rng.integers(1, 5))
            p = random_boxed_milp(rng, n_cont, n_bin, m)
            want_status, want_obj, _ = enumerate_binary_fixings(p)
            sol = solve_milp(p)
            if want_status == INFEASIBLE:
                assert sol.status == MilpStatus.INFEASIBLE
            else:
                optimal += 1
                assert sol.status == MilpStatus.OPTIMAL
                assert sol.objective == pytest.approx(want_obj, abs=1e-6)
                for i in p.binary_vars:
                    assert sol.values[i] in (0.0, 1.0) or abs(sol.values[i] - round(sol.values[i])) <= 1e-9
                assert audit_point(p.base, sol.values) <= 1e-9
        assert optimal >= 10

    def test_returned_binaries_refixable(self):
        rng = np.random.default_rng(3)
        for _ in range(15):
            p = random_boxed_milp(rng, 2, 5, 3)
            sol = solve_milp(p)
            if sol.status != MilpStatus.OPTIMAL:
                continue
            lower = p.base.lower.copy()
            upper = p.base.upper.copy()
            for i in p.binary_vars:
                v = round(sol.values[i])
                lower[i] = v
                upper[i] = v
            fixed = dataclasses.replace(p.base, lower=lower, upper=upper)
            fixed_sol = solve_lp(fixed)
            assert fixed_sol.status == LpStatus.OPTIMAL
            assert fixed_sol.objective <= sol.objective + 1e-7


class TestWarmStartAndLimits:
    def test_warm_start_becomes_incumbent(self):
        p = knapsack([6, 5, 3, 4], [5, 4, 2, 3], 7)
        seen = []
        sol = solve_milp(
            p,
            warm_start=np.array([0.0, 1.0, 0.0, 1.0]),
            on_incumbent=lambda obj, nodes: seen.append((obj, nodes)),
        )
        assert sol.status == MilpStatus.OPTIMAL
        # The warm start is already optimal, so it is the first incumbent
        # reported, before any node is explored.
        assert seen[0][0] == pytest.approx(-9.0, abs=1e-9)
        assert seen[0][1] == 0

    def test_invalid_warm_start_ignored(self):
        p = knapsack([6, 5, 3, 4], [5, 4, 2, 3], 7)
        sol = solve_milp(p, warm_start=np.array([1.0, 1.0, 1.0, 1.0]))
        assert sol.status == MilpStatus.OPTIMAL
        assert sol.objective == pytest.approx(-9.0, abs=1e-9)

    def test_node_limit_without_incumbent(self):
        rng = np.random.default_rng(13)
        p = random_boxed_milp(rng, 1, 6, 3)
        sol = solve_milp(p, SolverConfig(node_limit=0))
        assert sol.status in (
            MilpStatus.NO_INCUMBENT_AT_LIMIT,
            MilpStatus.INFEASIBLE,
        )
        if sol.status == MilpStatus.NO_INCUMBENT_AT_LIMIT:
            assert sol.values is None
            assert np.isfinite(sol.best_bound) or sol.best_bound == -np.inf

    def test_node_limit_with_warm_start_keeps_incumbent(self):
        p = knapsack([6, 5, 3, 4], [5, 4, 2, 3], 7)
        warm = np.array([0.0, 0.0, 1.0, 1.0])  # value 7, feasible
        sol = solve_milp(p, SolverConfig(node_limit=0), warm_start=warm)
        assert sol.status == MilpStatus.FEASIBLE_AT_LIMIT
        assert sol.objective == pytest.approx(-7.0, abs=1e-9)
        assert sol.best_bound <= sol.objective + 1e-9

    def test_incumbent_objectives_decrease(self):
        rng = np.random.default_rng(29)
        p = random_boxed_milp(rng, 2, 7, 4)
        seen = []
        solve_milp(p, on_incumbent=lambda obj, nodes: seen.append(obj))
        for earlier, later in zip(seen, seen[1:]):
            assert later < earlier + 1e-12

    def test_unbounded_relaxation_raises(self):
        base = LpProblem(
            objective=np.array([-1.0, 0.0]),
            constraint_matrix=np.array([[0.0, 1.0]]),
            relations=("<=",),
            rhs=np.array([1.0]),
            lower=np.array([0.0, 0.0]),
            upper=np.array([np.inf, 1.0]),
        )
        p = MilpProblem(base=base, binary_vars=frozenset({1}))
        with pytest.raises(SolverError):
            solve_milp(p)

    def test_best_bound_brackets_optimum(self):
        rng = np.random.default_rng(31)
        for _ in range(10):
            p = random_boxed_milp(rng, 1, 5, 3)
            sol = solve_milp(p)
            if sol.status == MilpStatus.OPTIMAL:
                assert sol.best_bound <= sol.objective + 1e-6
