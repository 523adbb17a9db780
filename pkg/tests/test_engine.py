import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ddip.engine import (
    STATUS_CONVERGED,
    STATUS_ITERATION_LIMIT,
    STATUS_STALLED,
    BendersCut,
    CutPool,
    DdipConfig,
    DdipInfeasibleError,
    audit_cut_validity,
    audit_pool,
    bounds_csv_text,
    dump_cuts,
    gap_of,
    load_cuts,
    make_context,
    forward_sweep,
    run_ddip,
    sample_states,
    tail_lp_value,
)
from ddip.lp_core import solve_lp
from ddip.milp_bb import solve_milp
from ddip.mpc_model import ElasticConfig, MpcProblem, RowBlock, build_extensive_form, partition_uniform
from ddip.toys import battery_toy, scalar_tracking_toy

BOUND_TOL = 1e-9


def grid_dp(targets=(3, 7, 2, 8, 5, 1), weights=(1, 2, 1, 3, 1, 2), prices=(0.5, 1.5, 0.25, 1.0, 0.75, 0.5),
            x_max=10, rate=2, release_cost=0.1):
    """Exact cost-to-go of ``scalar_tracking_toy`` on the integer states 0..x_max.

    Returns ``V`` with ``V[t][x]`` the optimal cost from state ``x`` at time ``t``.
    """
    N = len(targets)
    V = [[0.0] * (x_max + 1) for _ in range(N + 1)]
    for t in range(N - 1, -1, -1):
        for x in range(x_max + 1):
            track = weights[t] * abs(x - targets[t])
            best = math.inf
            for nxt in range(max(0, x - rate), min(x_max, x + rate) + 1):
                move = nxt - x
                step = prices[t] * move if move > 0 else release_cost * -move
                best = min(best, step + V[t + 1][nxt])
            V[t][x] = track + best
    return V


def assert_bound_behaviour(run):
    prev_lb, prev_best = -math.inf, math.inf
    for it in run.iterations:
        assert it.lb >= prev_lb
        assert it.best_ub <= prev_best
        assert it.lb <= it.best_ub + BOUND_TOL * max(1.0, abs(it.best_ub))
        assert it.gap == pytest.approx(gap_of(it.best_ub, it.lb))
        prev_lb, prev_best = it.lb, it.best_ub


def test_scalar_toy_matches_grid_dp():
    V = grid_dp()
    mpc = scalar_tracking_toy()
    assert solve_lp(build_extensive_form(mpc).milp.lp).objective == pytest.approx(V[0][5])
    run = run_ddip(mpc, DdipConfig(epsilon=1e-8))
    assert run.final_status == STATUS_CONVERGED
    assert run.best_ub == pytest.approx(V[0][5], abs=1e-7)
    assert run.best_ub == pytest.approx(14.1)
    assert_bound_behaviour(run)
    # every cut underestimates the exact cost-to-go at every grid state
    blocks = partition_uniform(mpc, mpc.horizon)
    for cut in run.cuts:
        t = blocks[cut.stage].first
        for x in range(11):
            assert cut.value([x]) <= V[t][x] + 1e-7


@pytest.mark.parametrize("stages", [1, 2, 3, 6])
def test_partitions_agree_on_lp(stages):
    run = run_ddip(scalar_tracking_toy(), DdipConfig(num_stages=stages, epsilon=1e-8))
    assert run.converged
    assert run.best_ub == pytest.approx(14.1, abs=1e-7)


def test_explicit_stage_sizes():
    run = run_ddip(scalar_tracking_toy(), DdipConfig(stage_sizes=(1, 3, 2), epsilon=1e-8))
    assert run.converged and run.best_ub == pytest.approx(14.1, abs=1e-7)


def test_first_iteration_is_myopic():
    mpc = battery_toy()
    run = run_ddip(mpc, DdipConfig(record_trajectories=True))
    first = run.iterations[0]
    # no cost-to-go information: nothing is stored and the final demand goes unmet at the penalty
    np.testing.assert_allclose(run.first_trajectory.x[:, 0], 0.0)
    assert first.ub == pytest.approx(100.0 * 10.0)
    assert run.converged and run.best_ub == pytest.approx(15.0)
    assert run.iterations[0].trajectory is not None


def test_integer_battery_finds_optimum_with_valid_bounds():
    mpc = battery_toy(integer=True)
    opt = solve_milp(build_extensive_form(mpc).milp).objective
    run = run_ddip(mpc, DdipConfig(max_iterations=30))
    assert run.best_ub == pytest.approx(opt)
    assert_bound_behaviour(run)
    assert all(it.lb <= opt + 1e-9 for it in run.iterations)
    # the lower bound comes from LP relaxations, so a duality gap may remain
    assert run.final_status in (STATUS_CONVERGED, STATUS_STALLED, STATUS_ITERATION_LIMIT)


def test_zero_iterations():
    run = run_ddip(battery_toy(), DdipConfig(max_iterations=0))
    assert run.iterations == [] and run.final_status == STATUS_ITERATION_LIMIT
    assert math.isinf(run.best_ub) and math.isinf(run.gap)
    assert bounds_csv_text(run) == "k,ub,lb,best_ub,gap\n"


def test_stall_detection():
    run = run_ddip(battery_toy(integer=True), DdipConfig(stall_iterations=3, max_iterations=50))
    assert run.final_status in (STATUS_STALLED, STATUS_CONVERGED)
    if run.final_status == STATUS_STALLED:
        last = run.iterations[-4:]
        assert len({(it.best_ub, it.lb) for it in last}) == 1


def test_callback_sees_every_iteration():
    seen = []
    run = run_ddip(scalar_tracking_toy(), DdipConfig(), callback=seen.append)
    assert [r.k for r in seen] == [r.k for r in run.iterations] == list(range(1, len(run.iterations) + 1))


def test_bounds_csv_is_deterministic():
    a = bounds_csv_text(run_ddip(scalar_tracking_toy(), DdipConfig(num_stages=3)))
    b = bounds_csv_text(run_ddip(scalar_tracking_toy(), DdipConfig(num_stages=3)))
    assert a == b
    assert bounds_csv_text(run_ddip(battery_toy(), DdipConfig()), {"config_hash": "abc"}).startswith(
        "# config_hash=abc\nk,ub,lb,best_ub,gap\n")


def cut_tuples(pool):
    return [(c.stage, c.iteration, c.phi_hat, tuple(c.mu), tuple(c.x_ref)) for c in pool]


def test_parallel_width_does_not_change_cuts():
    mpc = scalar_tracking_toy()
    one = run_ddip(mpc, DdipConfig(backward_mode="parallel", parallelism=1, epsilon=1e-8))
    four = run_ddip(mpc, DdipConfig(backward_mode="parallel", parallelism=4, epsilon=1e-8))
    assert cut_tuples(one.cuts) == cut_tuples(four.cuts)
    assert bounds_csv_text(one) == bounds_csv_text(four)
    seq = run_ddip(mpc, DdipConfig(epsilon=1e-8))
    assert one.best_ub == pytest.approx(seq.best_ub, abs=1e-7)


def test_cut_pool_dedupes_and_routes():
    pool = CutPool(3)
    c = BendersCut(2, 5.0, [1.0, -1.0], [0.0, 1.0], 1)
    assert pool.add(c)
    # same affine function written around a different reference point
    assert not pool.add(BendersCut(2, 5.0 + 1.0 * 1.0 - 1.0 * 0.0, [1.0, -1.0], [1.0, 1.0], 2))
    assert pool.add(BendersCut(2, 6.0, [1.0, -1.0], [0.0, 1.0], 2))
    assert pool.counts() == [0, 0, 2, 0]
    assert len(pool.cuts_for(2)) == 2 and pool.cuts_for(3) == ()
    with pytest.raises(ValueError):
        pool.add(BendersCut(7, 0.0, [0.0], [0.0]))
    with pytest.raises(ValueError):
        BendersCut(1, float("nan"), [0.0], [0.0])


def test_cut_dump_round_trip(tmp_path):
    run = run_ddip(scalar_tracking_toy(), DdipConfig())
    path = tmp_path / "cuts.csv"
    dump_cuts(run.cuts, path)
    back = load_cuts(path, run.cuts.num_stages)
    assert cut_tuples(back) == cut_tuples(run.cuts)


def test_config_round_trip_and_validation():
    cfg = DdipConfig(num_stages=4, epsilon=1e-5, backward_mode="parallel", parallelism=2,
                     elastic=ElasticConfig(penalty=10.0), stage_sizes=(2, 2))
    assert DdipConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError, match="unknown"):
        DdipConfig.from_dict({"bogus": 1})
    for bad in (dict(backward_mode="sideways"), dict(parallelism=0), dict(max_iterations=-1), dict(epsilon=0.0)):
        with pytest.raises(ValueError):
            DdipConfig(**bad)
    assert DdipConfig().resolved_epsilon(battery_toy()) == 1e-4
    assert DdipConfig().resolved_epsilon(battery_toy(integer=True)) == 1e-3


def test_gap_of():
    assert gap_of(math.inf, 0.0) == math.inf
    assert gap_of(0.5, 0.0) == pytest.approx(0.5)  # denominator floors at 1
    assert gap_of(200.0, 100.0) == pytest.approx(0.5)


def _unmeetable(elastic_row: bool) -> MpcProblem:
    # timestep 1 requires u >= 2 with u in [0, 1]
    blk_ok = RowBlock([[0.0]], [[1.0]], ["G"], [elastic_row], ("need",))
    return MpcProblem(np.ones((2, 1, 1)), np.zeros((2, 1, 1)), np.zeros((2, 1)), [[1.0], [1.0]], [0.0, 0.0],
                      np.full((3, 1), -5.0), np.full((3, 1), 5.0), np.zeros((2, 1)), np.ones((2, 1)), [0.0],
                      [False], [False], (blk_ok,), [0, 0], (np.array([0.0]), np.array([2.0])))


def test_infeasible_stage_names_stage_and_sweep():
    with pytest.raises(DdipInfeasibleError) as info:
        run_ddip(_unmeetable(False), DdipConfig())
    assert info.value.stage == 1 and info.value.sweep == "forward"


def test_elastic_rows_keep_stages_feasible():
    run = run_ddip(_unmeetable(True), DdipConfig(elastic=ElasticConfig(penalty=20.0)))
    assert run.converged
    assert run.best_ub == pytest.approx(1.0 + 20.0)
    assert np.sum(run.best_trajectory.elastic_slack[1]) == pytest.approx(1.0)


def test_audit_accepts_generated_cuts_and_rejects_bad_ones():
    mpc = scalar_tracking_toy()
    blocks = partition_uniform(mpc, mpc.horizon)
    run = run_ddip(mpc, DdipConfig())
    reports = audit_pool(mpc, blocks, run.cuts, samples_per_stage=10)
    assert reports and all(r.passed for r in reports)
    assert all(len(r.entries) == 10 for r in reports)
    V = grid_dp()
    bad = BendersCut(2, V[2][4] + 5.0, [0.0], [4.0])
    rep = audit_cut_validity(mpc, blocks, bad, [np.array([4.0])])
    assert not rep.passed and rep.min_margin < -1e-6


def test_tail_oracle_matches_grid_dp_at_integer_states():
    mpc = scalar_tracking_toy()
    blocks = partition_uniform(mpc, mpc.horizon)
    V = grid_dp()
    for stage in (1, 3, 5):
        for x in (0, 4, 10):
            assert tail_lp_value(mpc, blocks, stage, [float(x)]) == pytest.approx(V[stage][x], abs=1e-7)


def test_sample_states_are_seeded_and_in_bounds():
    mpc = scalar_tracking_toy()
    blocks = partition_uniform(mpc, 3)
    a = sample_states(mpc, blocks, 1, 5, seed=3)
    b = sample_states(mpc, blocks, 1, 5, seed=3)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert all(0.0 <= x[0] <= 10.0 for x in a)


def test_forward_sweep_accepts_other_initial_state():
    mpc = scalar_tracking_toy()
    ctx = make_context(mpc, DdipConfig())
    fwd = forward_sweep(ctx, CutPool(mpc.horizon), x0=[2.0])
    assert fwd.trajectory.x[0, 0] == 2.0
    assert fwd.ub == pytest.approx(sum(fwd.stage_costs))


@settings(max_examples=15, deadline=None)
@given(st.lists(st.integers(0, 10), min_size=3, max_size=6), st.integers(0, 10))
def test_random_targets_converge_to_grid_dp(targets, x0):
    n = len(targets)
    weights = [1.0 + (i % 3) for i in range(n)]
    prices = [0.25 * (1 + (i * 7) % 5) for i in range(n)]
    mpc = scalar_tracking_toy(targets, weights, prices, x0=float(x0))
    V = grid_dp(targets, weights, prices)
    run = run_ddip(mpc, DdipConfig(epsilon=1e-8, max_iterations=60))
    assert run.converged
    assert run.best_ub == pytest.approx(V[0][x0], abs=1e-6)
    assert_bound_behaviour(run)
