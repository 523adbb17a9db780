"""LP-based branch and bound for small mixed-integer programs."""

from __future__ import annotations

import enum
import heapq
import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .lp_core import BasisSnapshot, LpOptions, LpProblem, LpStatus, solve_lp_warm


class MilpInputError(ValueError):
    pass


class MilpStatus(str, enum.Enum):
    OPTIMAL = "optimal"
    FEASIBLE_GAP = "feasible-gap"
    INFEASIBLE = "infeasible"
    NODE_LIMIT = "node-limit"


@dataclass(frozen=True, eq=False)
class MilpProblem:
    lp: LpProblem
    integer_mask: np.ndarray

    def __post_init__(self):
        mask = np.array(self.integer_mask, dtype=bool).ravel()
        if mask.size != self.lp.num_vars:
            raise MilpInputError(f"integer_mask has length {mask.size}, expected {self.lp.num_vars}")
        lo, up = self.lp.var_lower[mask], self.lp.var_upper[mask]
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(up))):
            raise MilpInputError("integer variables must have finite bounds")
        mask.setflags(write=False)
        object.__setattr__(self, "integer_mask", mask)

    @property
    def binary_mask(self) -> np.ndarray:
        lp = self.lp
        return self.integer_mask & (lp.var_lower >= 0.0) & (lp.var_upper <= 1.0)

    @property
    def num_integers(self) -> int:
        return int(self.integer_mask.sum())


@dataclass(frozen=True)
class MilpOptions:
    rel_gap: float = 1e-6
    int_tol: float = 1e-6
    node_limit: int = 200_000
    time_limit: Optional[float] = None
    branch_direction: str = "up"  # child explored first: "up", "down" or "nearest"
    plunge: str = "first"  # "first": dive only until the first incumbent; "always": dive after every best-bound pick
    lp: LpOptions = field(default_factory=LpOptions)


@dataclass(frozen=True, eq=False)
class MilpSolution:
    status: MilpStatus
    objective: float
    primal: np.ndarray
    bound: float
    gap: float
    nodes: int
    root_basis: Optional[BasisSnapshot] = None
    root_objective: float = math.nan
    trace: tuple = ()

    @property
    def has_solution(self) -> bool:
        return self.status in (MilpStatus.OPTIMAL, MilpStatus.FEASIBLE_GAP)


def relax(problem: MilpProblem) -> LpProblem:
    """The LP relaxation: same rows, bounds and objective, integrality dropped."""
    return problem.lp


def relative_gap(incumbent: float, bound: float) -> float:
    return (incumbent - bound) / max(1.0, abs(incumbent))


def add_no_good_cut(problem: MilpProblem, binary_solution, int_tol: float = 1e-6) -> MilpProblem:
    """Append a row cutting off exactly the binary assignment in ``binary_solution``.

    Only binary columns enter the row; other entries of ``binary_solution`` are
    ignored.
    """
    y = np.asarray(binary_solution, dtype=float).ravel()
    if y.size != problem.lp.num_vars:
        raise MilpInputError(f"solution has length {y.size}, expected {problem.lp.num_vars}")
    binaries = np.nonzero(problem.binary_mask)[0]
    if binaries.size == 0:
        raise MilpInputError("problem has no binary variables")
    yb = y[binaries]
    if np.any(np.abs(yb - np.round(yb)) > int_tol) or np.any((yb < -int_tol) | (yb > 1 + int_tol)):
        raise MilpInputError("binary_solution is not integral on the binary variables")
    ones = np.round(yb) == 1.0
    row = np.zeros(problem.lp.num_vars)
    row[binaries[ones]] = -1.0
    row[binaries[~ones]] = 1.0
    lp = problem.lp.with_rows(row[None, :], ["G"], [1.0 - ones.sum()], names=["no_good"])
    return MilpProblem(lp, problem.integer_mask)


@dataclass(order=True)
class _Node:
    bound: float
    neg_depth: int
    seq: int
    lower: np.ndarray = field(compare=False, repr=False)
    upper: np.ndarray = field(compare=False, repr=False)
    int_values: np.ndarray = field(compare=False, repr=False)
    basis: Optional[BasisSnapshot] = field(compare=False, repr=False)

    @property
    def depth(self) -> int:
        return -self.neg_depth


def solve_milp(
    problem: MilpProblem,
    opts: Optional[MilpOptions] = None,
    start_basis: Optional[BasisSnapshot] = None,
    record_trace: bool = False,
) -> MilpSolution:
    """Branch and bound: depth-first plunge until the first incumbent, best bound afterwards.

    Branching is on the most fractional integer variable (lowest index on ties).
    Both children are solved as soon as they are created, warm-started from the
    parent basis, and queued under their own LP bound; among equal bounds the
    deeper node is taken first.
    """
    opts = opts or MilpOptions()
    lp = problem.lp
    int_idx = np.nonzero(problem.integer_mask)[0]
    t_start = time.perf_counter()

    root = solve_lp_warm(lp, start_basis, opts.lp)
    if root.status is LpStatus.UNBOUNDED:
        raise MilpInputError("LP relaxation is unbounded")
    if root.status is LpStatus.INFEASIBLE:
        return MilpSolution(MilpStatus.INFEASIBLE, math.inf, np.full(lp.num_vars, np.nan), math.inf, math.inf, 1,
                            root.basis)
    if root.status is not LpStatus.OPTIMAL:
        raise RuntimeError(f"root relaxation failed: {root.status.value}")

    incumbent = math.inf
    best_x: Optional[np.ndarray] = None
    trace = []
    nodes = 1
    seq = 0
    stack: list[_Node] = []
    heap: list[_Node] = []
    # smallest bound among nodes dropped only because they lie within rel_gap of the incumbent
    tolerance_bound = math.inf

    def prune_level() -> float:
        return incumbent - opts.rel_gap * max(1.0, abs(incumbent))

    def drop(bound: float) -> None:
        nonlocal tolerance_bound
        if bound < incumbent:
            tolerance_bound = min(tolerance_bound, bound)

    def open_bound() -> float:
        b = heap[0].bound if heap else math.inf
        if stack:
            b = min(b, min(n.bound for n in stack))
        return b

    def try_incumbent(x: np.ndarray, obj: float, basis) -> None:
        nonlocal incumbent, best_x
        if int_idx.size:
            lo = lp.var_lower.copy()
            up = lp.var_upper.copy()
            fixed = np.round(x[int_idx])
            lo[int_idx] = fixed
            up[int_idx] = fixed
            sol = solve_lp_warm(lp.with_bounds(lo, up), basis, opts.lp)
            if sol.status is LpStatus.OPTIMAL:
                x, obj = sol.primal, sol.objective
                x[int_idx] = fixed
        if obj < incumbent:
            incumbent = obj
            best_x = x.copy()

    def integral(vals: np.ndarray) -> bool:
        return bool(np.all(np.abs(vals - np.round(vals)) <= opts.int_tol))

    def evaluate(lower, upper, sol, depth) -> Optional[_Node]:
        """Record an integral LP solution or wrap a fractional one as an open node."""
        nonlocal seq
        if sol.status is not LpStatus.OPTIMAL:
            return None
        if sol.objective >= prune_level():
            drop(sol.objective)
            return None
        vals = sol.primal[int_idx]
        if integral(vals):
            try_incumbent(sol.primal, sol.objective, sol.basis)
            return None
        seq += 1
        return _Node(sol.objective, -depth, seq, lower, upper, vals, sol.basis)

    def branch(node: _Node) -> list[_Node]:
        """Solve both children of ``node``; returns the open ones, preferred child first."""
        nonlocal nodes
        vals = node.int_values
        frac = np.abs(vals - np.round(vals))
        dist = np.abs((vals - np.floor(vals)) - 0.5)
        dist[frac <= opts.int_tol] = np.inf
        k = int(np.argmin(dist))
        j = int(int_idx[k])
        v = vals[k]
        down_up = node.upper.copy()
        down_up[j] = math.floor(v)
        up_lo = node.lower.copy()
        up_lo[j] = math.ceil(v)
        sides = [(node.lower, down_up), (up_lo, node.upper)]
        if opts.branch_direction == "up" or (opts.branch_direction == "nearest" and v - math.floor(v) >= 0.5):
            sides.reverse()
        out = []
        for lower, upper in sides:
            sol = solve_lp_warm(lp.with_bounds(lower, upper), node.basis, opts.lp)
            nodes += 1
            child = evaluate(lower, upper, sol, node.depth + 1)
            if child is not None:
                out.append(child)
        return out

    root_node = evaluate(lp.var_lower, lp.var_upper, root, 0)
    if root_node is not None:
        stack.append(root_node)
    if record_trace:
        trace.append((nodes, incumbent, min(root.objective, incumbent)))

    status = None
    while stack or heap:
        if incumbent < math.inf and stack and opts.plunge != "always":
            for n in stack:
                heapq.heappush(heap, n)
            stack.clear()
        global_bound = min(open_bound(), tolerance_bound, incumbent)
        if incumbent < math.inf and relative_gap(incumbent, global_bound) <= opts.rel_gap:
            break
        if nodes >= opts.node_limit or (
            opts.time_limit is not None and time.perf_counter() - t_start > opts.time_limit
        ):
            status = MilpStatus.FEASIBLE_GAP if best_x is not None else MilpStatus.NODE_LIMIT
            break
        node = stack.pop() if stack else heapq.heappop(heap)
        if node.bound >= prune_level():
            drop(node.bound)
            continue
        children = branch(node)
        if incumbent < math.inf and opts.plunge == "always":
            # continue the dive with the preferred child, queue the sibling
            if children:
                stack.append(children[0])
                for c in children[1:]:
                    heapq.heappush(heap, c)
        elif incumbent < math.inf:
            for c in children:
                heapq.heappush(heap, c)
        else:
            # plunge: preferred child on top of the stack
            stack.extend(reversed(children))
        if record_trace:
            trace.append((nodes, incumbent, min(open_bound(), tolerance_bound, incumbent)))

    bound = min(open_bound(), tolerance_bound, incumbent)
    if best_x is None:
        if status is None:
            status = MilpStatus.INFEASIBLE
            bound = math.inf
        return MilpSolution(status, math.inf, np.full(lp.num_vars, np.nan), bound, math.inf, nodes,
                            root.basis, root.objective, tuple(trace))
    gap = max(0.0, relative_gap(incumbent, bound))
    if status is None:
        status = MilpStatus.OPTIMAL
    return MilpSolution(status, incumbent, best_x, bound, gap, nodes, root.basis, root.objective, tuple(trace))
