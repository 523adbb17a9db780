import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import exhaustive_milp, random_binary_milp
from ddip.lp_core import LpProblem
from ddip.milp_bb import (
    MilpInputError,
    MilpOptions,
    MilpProblem,
    MilpStatus,
    add_no_good_cut,
    relax,
    solve_milp,
)


def knapsack():
    # max 10a + 13b + 7c + 8d  s.t.  4a + 6b + 3c + 5d <= 10
    w = [4.0, 6.0, 3.0, 5.0]
    lp = LpProblem([-10.0, -13.0, -7.0, -8.0], [w], ["L"], [10.0], [0] * 4, [1] * 4)
    return MilpProblem(lp, [True] * 4)


def test_knapsack_frozen_optimum():
    sol = solve_milp(knapsack())
    assert sol.status is MilpStatus.OPTIMAL
    # feasible pairs: ab 23, bc 20, ad 18, ac 17, cd 15; no triple fits
    assert sol.objective == pytest.approx(-23.0)
    np.testing.assert_allclose(sol.primal, [1, 1, 0, 0])
    assert sol.gap == pytest.approx(0.0, abs=1e-12)
    assert sol.bound <= sol.objective + 1e-9


def test_root_relaxation_is_a_bound():
    sol = solve_milp(knapsack())
    assert sol.root_objective <= sol.objective + 1e-9
    assert relax(knapsack()).num_vars == 4


def test_general_integer_variable():
    # min -x - y s.t. 2x + 2y <= 7, x, y integer in [0, 5] -> x + y = 3
    lp = LpProblem([-1.0, -1.0], [[2.0, 2.0]], ["L"], [7.0], [0, 0], [5, 5])
    sol = solve_milp(MilpProblem(lp, [True, True]))
    assert sol.objective == pytest.approx(-3.0)


def test_infeasible_milp():
    # 2x = 1 with x binary
    lp = LpProblem([1.0], [[2.0]], ["E"], [1.0], [0], [1])
    sol = solve_milp(MilpProblem(lp, [True]))
    assert sol.status is MilpStatus.INFEASIBLE
    assert not sol.has_solution


def test_node_limit_reports_valid_bound():
    rng = np.random.default_rng(11)
    n = 25
    w = rng.integers(10, 40, size=n).astype(float)
    lp = LpProblem(-(w + rng.integers(0, 5, size=n)), [w], ["L"], [w.sum() / 2 + 0.5], np.zeros(n), np.ones(n))
    milp = MilpProblem(lp, np.ones(n, bool))
    full = solve_milp(milp)
    limited = solve_milp(milp, MilpOptions(node_limit=5))
    assert limited.status in (MilpStatus.NODE_LIMIT, MilpStatus.OPTIMAL)
    assert limited.bound <= full.objective + 1e-9
    assert limited.objective >= full.objective - 1e-9  # +inf when no incumbent was found


def test_integer_mask_requires_finite_bounds():
    lp = LpProblem([1.0], [[1.0]], ["G"], [0.5], [0.0], [np.inf])
    with pytest.raises(MilpInputError):
        MilpProblem(lp, [True])


@pytest.mark.parametrize("direction", ["up", "down", "nearest"])
@pytest.mark.parametrize("plunge", ["first", "always"])
def test_search_options_do_not_change_optimum(direction, plunge):
    rng = np.random.default_rng(5)
    for _ in range(10):
        milp = random_binary_milp(rng, 10)
        ref = exhaustive_milp(milp)
        sol = solve_milp(milp, MilpOptions(branch_direction=direction, plunge=plunge))
        if ref is None:
            assert sol.status is MilpStatus.INFEASIBLE
        else:
            assert sol.objective == pytest.approx(ref, abs=1e-7)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_matches_exhaustive_enumeration(seed):
    milp = random_binary_milp(np.random.default_rng(seed))
    ref = exhaustive_milp(milp)
    sol = solve_milp(milp)
    if ref is None:
        assert sol.status is MilpStatus.INFEASIBLE
    else:
        assert sol.status is MilpStatus.OPTIMAL
        assert sol.objective == pytest.approx(ref, abs=1e-7)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([1e-2, 5e-2]))
def test_loose_gap_bound_stays_valid(seed, gap):
    """Nodes pruned only by the tolerance must still count toward the reported bound."""
    milp = random_binary_milp(np.random.default_rng(seed))
    ref = exhaustive_milp(milp)
    sol = solve_milp(milp, MilpOptions(rel_gap=gap))
    if ref is None:
        return
    assert sol.bound <= ref + 1e-7
    assert sol.objective >= ref - 1e-7
    assert (sol.objective - sol.bound) / max(1.0, abs(sol.objective)) <= gap + 1e-9


def test_no_good_cut_excludes_exactly_one_pattern():
    milp = knapsack()
    first = solve_milp(milp)
    cut = add_no_good_cut(milp, first.primal)
    assert cut.lp.num_rows == milp.lp.num_rows + 1
    second = solve_milp(cut)
    assert not np.allclose(second.primal, first.primal)
    A = cut.lp.dense_rows()[-1]
    for bits in itertools.product((0.0, 1.0), repeat=4):
        x = np.array(bits)
        satisfied = A @ x >= cut.lp.row_rhs[-1] - 1e-9
        assert satisfied == (not np.array_equal(x, np.round(first.primal)))


def test_no_good_cut_rejects_fractional_pattern():
    with pytest.raises(MilpInputError):
        add_no_good_cut(knapsack(), [0.5, 1, 0, 0])


def test_deterministic_node_counts():
    milp = random_binary_milp(np.random.default_rng(77), 12)
    a, b = solve_milp(milp), solve_milp(milp)
    assert a.nodes == b.nodes
    np.testing.assert_array_equal(a.primal, b.primal)
