"""Shared oracles and instance generators for the test suite."""

from __future__ import annotations

import itertools

import numpy as np
import pytest

from ddip.hvac_plant import PlantParams
from ddip.lp_core import LpProblem
from ddip.milp_bb import MilpProblem

COMPACT_PLANT = dict(
    units={"cs": 2, "hrc": 1, "hwg": 1, "ct": 2, "hx": 1},
    max_load={"cs": 4000.0, "hrc": 1500.0, "hwg": 3000.0, "ct": 6000.0, "hx": 6000.0},
)


def compact_plant() -> PlantParams:
    """Seven-unit plant used for MILP runs whose extensive form must be solved exactly."""
    return PlantParams.from_dict(COMPACT_PLANT)


def random_lp(rng: np.random.Generator, max_vars: int = 6, max_rows: int = 10) -> LpProblem:
    """Small LP with box bounds (so it is never unbounded) and mixed row kinds."""
    n = int(rng.integers(1, max_vars + 1))
    m = int(rng.integers(1, max_rows + 1))
    A = np.round(rng.normal(size=(m, n)) * 4) / 2
    x_feas = rng.uniform(0, 3, size=n)
    kinds = rng.choice(["L", "G", "E"], size=m, p=[0.45, 0.45, 0.1])
    act = A @ x_feas
    slack = rng.uniform(0, 2, size=m)
    rhs = np.where(kinds == "L", act + slack, np.where(kinds == "G", act - slack, act))
    if rng.random() < 0.15:  # occasionally infeasible: contradict a row
        i = int(rng.integers(m))
        kinds[i] = "L"
        rhs[i] = act[i] - 50.0 - np.abs(A[i]).sum() * 5
    lo = np.zeros(n)
    up = np.full(n, 5.0)
    c = np.round(rng.normal(size=n) * 4) / 2
    return LpProblem(c, A, kinds, rhs, lo, up)


def vertex_enumeration(lp: LpProblem, tol: float = 1e-7):
    """Optimal value by enumerating every basic solution (rows and bounds as constraints).

    Returns ``None`` when no feasible vertex exists. Requires finite bounds.
    """
    A = lp.dense_rows()
    n = lp.num_vars
    # constraint list: a @ x (<=|>=|=) b
    cons = []
    for i in range(lp.num_rows):
        cons.append((A[i], lp.row_rhs[i], int(lp.row_kinds[i])))
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1.0
        cons.append((e, lp.var_lower[j], 2))
        cons.append((e, lp.var_upper[j], 1))
    G = np.array([c[0] for c in cons])
    h = np.array([c[1] for c in cons])
    kinds = np.array([c[2] for c in cons])
    # keep a linearly independent subset of equalities (redundant ones are still checked below)
    eq = []
    for i in np.nonzero(kinds == 0)[0]:
        if np.linalg.matrix_rank(G[eq + [i]]) > len(eq):
            eq.append(int(i))
    eq = np.array(eq, dtype=int)
    others = np.nonzero(kinds != 0)[0]
    best = None
    need = n - len(eq)
    if need < 0:
        need = 0
    for pick in itertools.combinations(others, need):
        idx = np.concatenate([eq, np.array(pick, dtype=int)])
        M = G[idx]
        if np.linalg.matrix_rank(M) < n:
            continue
        x = np.linalg.lstsq(M, h[idx], rcond=None)[0]
        if np.max(np.abs(M @ x - h[idx])) > 1e-7:
            continue
        act = G @ x
        scale = 1 + np.abs(h)
        ok = np.all(np.where(kinds == 1, act <= h + tol * scale,
                             np.where(kinds == 2, act >= h - tol * scale, np.abs(act - h) <= tol * scale)))
        if ok:
            val = float(lp.objective @ x + lp.objective_offset)
            best = val if best is None else min(best, val)
    return best


def random_binary_milp(rng: np.random.Generator, max_binaries: int = 12) -> MilpProblem:
    """Pure-binary problem with a few knapsack/cover rows and one continuous column."""
    nb = int(rng.integers(2, max_binaries + 1))
    m = int(rng.integers(1, 5))
    W = rng.integers(1, 10, size=(m, nb)).astype(float)
    cap = np.floor(W.sum(axis=1) * rng.uniform(0.3, 0.7, size=m))
    # one continuous column z in [0, 3] with z <= sum of first two binaries (mixes in continuity)
    A = np.zeros((m + 1, nb + 1))
    A[:m, :nb] = W
    A[m, nb] = 1.0
    A[m, :2] = -1.0
    kinds = ["L"] * m + ["L"]
    rhs = np.concatenate([cap, [0.0]])
    c = np.concatenate([-rng.integers(1, 20, size=nb).astype(float), [-rng.uniform(0.5, 3.0)]])
    if rng.random() < 0.3:  # a covering row keeps some instances tight
        A = np.vstack([A, np.concatenate([np.ones(nb), [0.0]])])
        kinds.append("G")
        rhs = np.concatenate([rhs, [float(rng.integers(1, 3))]])
    lp = LpProblem(c, A, kinds, rhs, np.zeros(nb + 1), np.concatenate([np.ones(nb), [3.0]]))
    return MilpProblem(lp, np.concatenate([np.ones(nb, bool), [False]]))


def exhaustive_milp(milp: MilpProblem):
    """Optimum by enumerating every binary pattern and solving the continuous rest in closed form.

    The continuous column z of ``random_binary_milp`` has cost < 0 and only the
    upper bound ``min(3, y0 + y1)``, so it sits at that bound.
    """
    lp = milp.lp
    nb = int(milp.integer_mask.sum())
    A = lp.dense_rows()
    best = None
    for bits in itertools.product((0.0, 1.0), repeat=nb):
        y = np.array(bits)
        z = min(3.0, y[0] + y[1])
        x = np.concatenate([y, [z]])
        act = A @ x
        kinds = lp.row_kinds
        ok = np.all(np.where(kinds == 1, act <= lp.row_rhs + 1e-9,
                             np.where(kinds == 2, act >= lp.row_rhs - 1e-9, np.abs(act - lp.row_rhs) <= 1e-9)))
        if ok:
            val = float(lp.objective @ x)
            best = val if best is None else min(best, val)
    return best


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
