"""Small hand-built MPC instances with known structure, used by tests, scripts and the CLI."""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from .mpc_model import MpcProblem, RowBlock


def battery_toy(
    prices: Sequence[float] = (1.0, 3.0, 2.0, 5.0),
    demand: Optional[Sequence[float]] = None,
    capacity: float = 20.0,
    charge_rate: float = 5.0,
    penalty: float = 100.0,
    integer: bool = False,
) -> MpcProblem:
    """Storage that must be filled ahead of a demand it cannot meet from the grid.

    State ``E`` (stored energy). Controls ``(c, d, U)``: charge bought at
    ``prices[t]``, discharge, and unmet demand at ``penalty``. Per timestep
    ``d <= E_t`` (only energy already stored can be delivered) and
    ``d + U >= demand[t]``; dynamics ``E_{t+1} = E_t + c - d``. With
    ``integer=True`` charging is all-or-nothing: ``c = charge_rate * y`` with
    binary ``y`` appended as a fourth control.

    The default demand sits entirely in the last step and exceeds one step's
    charge, so a policy that ignores the future leaves it unmet.
    """
    N = len(prices)
    if demand is None:
        demand = [0.0] * (N - 1) + [2.0 * charge_rate]
    demand = np.asarray(demand, dtype=float)
    n_u = 4 if integer else 3
    A = np.ones((N, 1, 1))
    Bt = np.zeros((1, n_u))
    Bt[0, 0], Bt[0, 1] = 1.0, -1.0
    B = np.broadcast_to(Bt, (N, 1, n_u))
    cost_u = np.zeros((N, n_u))
    cost_u[:, 0] = prices
    cost_u[:, 2] = penalty
    u_lo = np.zeros((N, n_u))
    u_up = np.tile([charge_rate, np.inf, np.inf] + ([1.0] if integer else []), (N, 1))
    G = np.array([[-1.0], [0.0]])
    H = np.zeros((2, n_u))
    H[0, 1] = 1.0
    H[1, 1] = H[1, 2] = 1.0
    kinds = ["L", "G"]
    names = ["deliver_stored", "demand"]
    if integer:
        G = np.vstack([G, [[0.0]]])
        row = np.zeros(n_u)
        row[0], row[3] = 1.0, -charge_rate
        H = np.vstack([H, row])
        kinds.append("E")
        names.append("block_charge")
    blk = RowBlock(G, H, kinds, None, tuple(names))
    rhs = tuple(np.array([0.0, demand[t]] + ([0.0] if integer else [])) for t in range(N))
    int_mask = np.zeros(n_u, bool)
    if integer:
        int_mask[3] = True
    control_names = ("charge", "discharge", "unmet") + (("charge_on",) if integer else ())
    return MpcProblem(
        A, B, np.zeros((N, 1)), cost_u, np.zeros(N),
        np.zeros((N + 1, 1)), np.full((N + 1, 1), capacity),
        u_lo, u_up, np.zeros(1), np.zeros(1, bool), int_mask,
        (blk,), np.zeros(N, int), rhs, ("E",), control_names,
    )


def scalar_tracking_toy(
    targets: Sequence[float] = (3.0, 7.0, 2.0, 8.0, 5.0, 1.0),
    weights: Sequence[float] = (1.0, 2.0, 1.0, 3.0, 1.0, 2.0),
    prices: Sequence[float] = (0.5, 1.5, 0.25, 1.0, 0.75, 0.5),
    x0: float = 5.0,
    x_max: float = 10.0,
    rate: float = 2.0,
    release_cost: float = 0.1,
) -> MpcProblem:
    """Scalar integrator ``x_{t+1} = x_t + up_t - down_t`` tracking integer targets.

    Stage cost ``prices[t]*up + release_cost*down + weights[t]*|x_t - targets[t]|``
    with the absolute value split into ``e+ - e-``. All data are integral or
    dyadic, so optimal trajectories stay on any grid containing the integers,
    which makes the cost-to-go exactly computable by grid dynamic programming.
    """
    N = len(targets)
    A = np.ones((N, 1, 1))
    B = np.broadcast_to(np.array([[1.0, -1.0, 0.0, 0.0]]), (N, 1, 4))
    cost_u = np.column_stack([prices, np.full(N, release_cost), weights, weights]).astype(float)
    blk = RowBlock([[1.0]], [[0.0, 0.0, -1.0, 1.0]], ["E"], None, ("track",))
    rhs = tuple(np.array([float(v)]) for v in targets)
    return MpcProblem(
        A, B, np.zeros((N, 1)), cost_u, np.zeros(N),
        np.zeros((N + 1, 1)), np.full((N + 1, 1), x_max),
        np.zeros((N, 4)), np.tile([rate, rate, np.inf, np.inf], (N, 1)),
        np.array([x0]), np.zeros(1, bool), np.zeros(4, bool),
        (blk,), np.zeros(N, int), rhs, ("x",), ("up", "down", "over", "under"),
    )


def symmetric_units_toy(demand: float = 5.0, fixed_cost: float = 10.0, unit_cost: float = 1.0,
                        p_min: float = 3.0, p_max: float = 6.0) -> MpcProblem:
    """One timestep, two identical units; exactly one should run.

    Controls ``(y1, y2, p1, p2)`` with ``p1 + p2 = demand`` and
    ``p_min*y_i <= p_i <= p_max*y_i``; cost ``fixed_cost*y_i + unit_cost*p_i``.
    The state is a passive counter with no dynamics coupling.
    """
    H = np.array([
        [0.0, 0.0, 1.0, 1.0],
        [-p_min, 0.0, 1.0, 0.0],
        [0.0, -p_min, 0.0, 1.0],
        [-p_max, 0.0, 1.0, 0.0],
        [0.0, -p_max, 0.0, 1.0],
    ])
    blk = RowBlock(np.zeros((5, 1)), H, ["E", "G", "G", "L", "L"], None,
                   ("demand", "min_1", "min_2", "max_1", "max_2"))
    rhs = (np.array([demand, 0.0, 0.0, 0.0, 0.0]),)
    return MpcProblem(
        np.ones((1, 1, 1)), np.zeros((1, 1, 4)), np.zeros((1, 1)),
        np.array([[fixed_cost, fixed_cost, unit_cost, unit_cost]]), np.zeros(1),
        np.zeros((2, 1)), np.ones((2, 1)), np.zeros((1, 4)), np.array([[1.0, 1.0, p_max, p_max]]),
        np.zeros(1), np.zeros(1, bool), np.array([True, True, False, False]),
        (blk,), np.zeros(1, int), rhs, ("counter",), ("y1", "y2", "p1", "p2"),
    )
