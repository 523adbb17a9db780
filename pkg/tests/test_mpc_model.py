import json

import numpy as np
import pytest

from ddip.lp_core import solve_lp, solve_lp_reference
from ddip.milp_bb import solve_milp
from ddip.mpc_model import (
    ElasticConfig,
    ModelInputError,
    MpcProblem,
    RowBlock,
    Trajectory,
    build_extensive_form,
    build_stage_subproblem,
    check_partition,
    evaluate_policy_cost,
    load_mpc,
    mpc_from_dict,
    mpc_to_dict,
    partition_sizes,
    partition_uniform,
    save_mpc,
    stage_dimensions,
)
from ddip.toys import battery_toy, scalar_tracking_toy, symmetric_units_toy


class _Cut:
    def __init__(self, phi_hat, mu, x_ref):
        self.phi_hat, self.mu, self.x_ref = phi_hat, np.asarray(mu, float), np.asarray(x_ref, float)


def test_battery_extensive_optimum_frozen():
    # buy 5 at price 1 (t=0) and 5 at price 2 (t=2): 5 + 10 = 15
    ext = build_extensive_form(battery_toy())
    sol = solve_lp(ext.milp.lp)
    assert sol.objective == pytest.approx(15.0)
    traj = ext.trajectory(sol.primal)
    np.testing.assert_allclose(traj.x[:, 0], [0, 5, 5, 10, 0], atol=1e-9)


def test_extensive_form_matches_reference_solver():
    mpc = scalar_tracking_toy()
    lp = build_extensive_form(mpc).milp.lp
    assert solve_lp(lp).objective == pytest.approx(solve_lp_reference(lp).objective, abs=1e-8)


def test_single_block_stage_equals_extensive():
    mpc = scalar_tracking_toy()
    blocks = partition_uniform(mpc, 1)
    sub = build_stage_subproblem(mpc, blocks[0], [], mpc.initial_state)
    ext = build_extensive_form(mpc)
    a = solve_lp(sub.milp.lp)
    b = solve_lp(ext.milp.lp)
    assert a.objective == pytest.approx(b.objective, abs=1e-9)
    assert sub.theta_column >= 0 and a.primal[sub.theta_column] == pytest.approx(0.0)


def test_stage_subproblem_linking_rows_pin_incoming_state():
    mpc = scalar_tracking_toy()
    blk = partition_uniform(mpc, 3)[1]
    sub = build_stage_subproblem(mpc, blk, [], [7.5])
    sol = solve_lp(sub.milp.lp)
    assert sol.primal[sub.state_cols[0][0]] == pytest.approx(7.5)
    assert len(sub.linking_row_ids) == 1
    # the dual on the linking row is the slope of the stage value in the incoming state
    h = 1e-4
    up = solve_lp(build_stage_subproblem(mpc, blk, [], [7.5 + h]).milp.lp)
    assert (up.objective - sol.objective) / h == pytest.approx(sol.row_duals[sub.linking_row_ids[0]], abs=1e-5)


def test_cut_rows_bound_theta():
    mpc = scalar_tracking_toy()
    blk = partition_uniform(mpc, 2)[0]
    cut = _Cut(phi_hat=4.0, mu=[-1.0], x_ref=[5.0])
    sub = build_stage_subproblem(mpc, blk, [cut], mpc.initial_state)
    assert sub.num_cuts == 1
    sol = solve_lp(sub.milp.lp)
    x_out = sol.primal[sub.out_state_cols[0]]
    assert sol.primal[sub.theta_column] >= 4.0 - (x_out - 5.0) - 1e-9
    assert sub.stage_cost(sol.primal) == pytest.approx(sol.objective - sol.primal[sub.theta_column])
    with pytest.raises(ModelInputError):
        build_stage_subproblem(mpc, blk, [_Cut(0.0, [1.0, 2.0], [0.0, 0.0])], mpc.initial_state)


def test_final_stage_theta_fixed_at_zero():
    mpc = scalar_tracking_toy()
    last = partition_uniform(mpc, 3)[-1]
    sub = build_stage_subproblem(mpc, last, [], [3.0])
    lp = sub.milp.lp
    assert lp.var_lower[sub.theta_column] == 0.0 and lp.var_upper[sub.theta_column] == 0.0


def test_stage_dimensions_match_built_problem():
    mpc = battery_toy(integer=True)
    for blk in partition_uniform(mpc, 2):
        sub = build_stage_subproblem(mpc, blk, [_Cut(0.0, [0.0], [0.0])] * 3, [0.0])
        assert stage_dimensions(mpc, blk, num_cuts=3) == (sub.milp.lp.num_vars, sub.milp.lp.num_rows)


def test_partitions():
    mpc = battery_toy(prices=[1.0] * 10)
    assert [len(b) for b in partition_uniform(mpc, 3)] == [4, 3, 3]
    assert [len(b) for b in partition_sizes(mpc, [1, 2, 7])] == [1, 2, 7]
    for bad in (0, 11):
        with pytest.raises(ModelInputError):
            partition_uniform(mpc, bad)
    with pytest.raises(ModelInputError):
        partition_sizes(mpc, [5, 4])
    blocks = partition_uniform(mpc, 2)
    with pytest.raises(ModelInputError):
        check_partition(mpc, blocks[::-1])


def test_tail_satisfies_principle_of_optimality():
    mpc = scalar_tracking_toy()
    ext = build_extensive_form(mpc)
    sol = solve_lp(ext.milp.lp)
    traj = ext.trajectory(sol.primal)
    t = 3
    head_cost = float(sum(mpc.cost_u[s] @ traj.u[s] + mpc.cost_x[s] @ traj.x[s] + mpc.cost_const[s]
                          for s in range(t)))
    tail = mpc.tail(t, traj.x[t])
    assert tail.horizon == mpc.horizon - t
    tail_opt = solve_lp(build_extensive_form(tail).milp.lp).objective
    assert head_cost + tail_opt == pytest.approx(sol.objective, abs=1e-9)


def test_policy_cost_and_dynamics_check():
    mpc = battery_toy()
    ext = build_extensive_form(mpc)
    sol = solve_lp(ext.milp.lp)
    traj = ext.trajectory(sol.primal)
    cost = evaluate_policy_cost(mpc, traj)
    assert cost.raw == pytest.approx(15.0)
    x = traj.x.copy()
    x[2, 0] += 1.0
    with pytest.raises(ModelInputError, match=r"dyn\[1,0\]"):
        evaluate_policy_cost(mpc, Trajectory(x, traj.u))


def test_elastic_slack_restores_feasibility():
    # u in [0, 1] but the row asks u >= 2: infeasible unless the row is elastic
    blk = RowBlock([[0.0]], [[1.0]], ["G"], [True], ("need",))
    mpc = MpcProblem(np.ones((1, 1, 1)), np.zeros((1, 1, 1)), np.zeros((1, 1)), [[1.0]], [0.0],
                     [[-10.0], [-10.0]], [[10.0], [10.0]], [[0.0]], [[1.0]], [0.0], [False], [False],
                     (blk,), [0], (np.array([2.0]),))
    assert not solve_lp(build_extensive_form(mpc).milp.lp).optimal
    ext = build_extensive_form(mpc, ElasticConfig(penalty=50.0))
    sol = solve_lp(ext.milp.lp)
    assert sol.objective == pytest.approx(1.0 + 50.0)
    assert any(role in ("slack+", "slack-") for role, *_ in ext.var_map)


def test_symmetric_toy_has_two_optima():
    ext = build_extensive_form(symmetric_units_toy())
    sol = solve_milp(ext.milp)
    assert sol.objective == pytest.approx(15.0)
    assert sorted(np.round(sol.primal[ext.control_cols[0][:2]])) == [0.0, 1.0]


def test_serialization_round_trip(tmp_path):
    mpc = battery_toy(integer=True)
    path = tmp_path / "p.json"
    save_mpc(mpc, path)
    back = load_mpc(path)
    assert mpc_to_dict(back) == mpc_to_dict(mpc)
    a = solve_milp(build_extensive_form(mpc).milp).objective
    b = solve_milp(build_extensive_form(back).milp).objective
    assert a == b


def test_serialization_errors(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ModelInputError, match="invalid JSON"):
        load_mpc(bad)
    doc = mpc_to_dict(battery_toy())
    with pytest.raises(ModelInputError):
        mpc_from_dict({**doc, "schema": "other"})
    broken = json.loads(json.dumps(doc))
    del broken["cost_u"]
    with pytest.raises(ModelInputError, match="malformed"):
        mpc_from_dict(broken)


def test_shape_validation():
    with pytest.raises(ModelInputError):
        MpcProblem(np.ones((2, 1, 1)), np.zeros((2, 1, 1)), np.zeros((2, 1)), np.zeros((3, 1)), np.zeros(2),
                   np.zeros((3, 1)), np.ones((3, 1)), np.zeros((2, 1)), np.ones((2, 1)), [0.0], [False], [False])


def test_relaxed_drops_integrality():
    mpc = battery_toy(integer=True)
    assert not mpc.is_continuous
    assert mpc.relaxed().is_continuous
