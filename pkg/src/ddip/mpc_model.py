"""Linear state-space MPC problems, block partitions and the MILPs built from them.

A problem has horizon ``N``, states ``x_0 .. x_N`` and controls ``u_0 .. u_{N-1}``::

    min  sum_t  cost_x[t] @ x_t + cost_u[t] @ u_t + cost_const[t]
    s.t. x_{t+1} = A[t] @ x_t + B[t] @ u_t
         x_0 = initial_state
         x_lower[t] <= x_t <= x_upper[t],  u_lower[t] <= u_t <= u_upper[t]
         G[t] @ x_t + H[t] @ u_t  (=, <=, >=)  rhs[t]     (per-timestep rows)

with integrality on the masked state/control components.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .lp_core import LpProblem, _kind_codes
from .milp_bb import MilpProblem

SCHEMA_NAME = "ddip.mpc-problem"
SCHEMA_VERSION = 1
FEAS_TOL = 1e-7
DENSE_STAGE_ROWS = 400  # larger stage problems stay sparse


class ModelInputError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class RowBlock:
    """Row structure shared by timesteps: ``state_coef @ x_t + control_coef @ u_t (kind) rhs``.

    ``elastic`` flags rows that may receive penalized slack pairs.
    """

    state_coef: np.ndarray
    control_coef: np.ndarray
    kinds: np.ndarray
    elastic: np.ndarray
    names: tuple = ()

    def __post_init__(self):
        G = np.atleast_2d(np.array(self.state_coef, dtype=float))
        H = np.atleast_2d(np.array(self.control_coef, dtype=float))
        kinds = _kind_codes(self.kinds)
        m = kinds.size
        if G.size == 0:
            G = G.reshape(m, -1) if m else G.reshape(0, G.shape[-1] if G.ndim == 2 else 0)
        if H.size == 0:
            H = H.reshape(m, -1) if m else H.reshape(0, H.shape[-1] if H.ndim == 2 else 0)
        elastic = np.zeros(m, dtype=bool) if self.elastic is None else np.array(self.elastic, dtype=bool).ravel()
        if G.shape[0] != m or H.shape[0] != m or elastic.size != m:
            raise ModelInputError("row block arrays disagree on the number of rows")
        for arr in (G, H, kinds, elastic):
            arr.setflags(write=False)
        object.__setattr__(self, "state_coef", G)
        object.__setattr__(self, "control_coef", H)
        object.__setattr__(self, "kinds", kinds)
        object.__setattr__(self, "elastic", elastic)
        object.__setattr__(self, "names", tuple(self.names))

    @property
    def num_rows(self) -> int:
        return self.kinds.size

    @classmethod
    def empty(cls, n_x: int, n_u: int) -> "RowBlock":
        return cls(np.zeros((0, n_x)), np.zeros((0, n_u)), np.zeros(0, dtype=np.int8), np.zeros(0, dtype=bool))


def _frozen(a, dtype=float) -> np.ndarray:
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class MpcProblem:
    dynamics_A: np.ndarray  # (N, n_x, n_x)
    dynamics_B: np.ndarray  # (N, n_x, n_u)
    cost_x: np.ndarray  # (N, n_x)
    cost_u: np.ndarray  # (N, n_u)
    cost_const: np.ndarray  # (N,)
    x_lower: np.ndarray  # (N+1, n_x)
    x_upper: np.ndarray
    u_lower: np.ndarray  # (N, n_u)
    u_upper: np.ndarray
    initial_state: np.ndarray
    integer_state_mask: np.ndarray
    integer_control_mask: np.ndarray
    row_blocks: tuple = ()
    row_block_index: Optional[np.ndarray] = None  # (N,) index into row_blocks
    row_rhs: tuple = ()  # N arrays
    state_names: tuple = ()
    control_names: tuple = ()

    def __post_init__(self):
        A = _frozen(self.dynamics_A)
        B = _frozen(self.dynamics_B)
        if A.ndim != 3 or B.ndim != 3:
            raise ModelInputError("dynamics_A/B must be (N, n_x, n_x) and (N, n_x, n_u)")
        N, n_x, n_x2 = A.shape
        if n_x != n_x2 or B.shape[:2] != (N, n_x):
            raise ModelInputError(f"dynamics shapes {A.shape} and {B.shape} are inconsistent")
        n_u = B.shape[2]
        expect = {
            "cost_x": (N, n_x),
            "cost_u": (N, n_u),
            "cost_const": (N,),
            "x_lower": (N + 1, n_x),
            "x_upper": (N + 1, n_x),
            "u_lower": (N, n_u),
            "u_upper": (N, n_u),
            "initial_state": (n_x,),
        }
        for name, shape in expect.items():
            arr = _frozen(getattr(self, name))
            if arr.shape != shape:
                raise ModelInputError(f"{name} has shape {arr.shape}, expected {shape}")
            object.__setattr__(self, name, arr)
        for name, size in (("integer_state_mask", n_x), ("integer_control_mask", n_u)):
            arr = _frozen(np.asarray(getattr(self, name), dtype=bool).ravel(), bool)
            if arr.size != size:
                raise ModelInputError(f"{name} has length {arr.size}, expected {size}")
            object.__setattr__(self, name, arr)
        if np.any(self.x_lower > self.x_upper) or np.any(self.u_lower > self.u_upper):
            raise ModelInputError("lower bound exceeds upper bound")
        blocks = tuple(self.row_blocks) or (RowBlock.empty(n_x, n_u),)
        index = np.zeros(N, dtype=int) if self.row_block_index is None else np.array(self.row_block_index, dtype=int)
        if index.shape != (N,) or (N and (index.min() < 0 or index.max() >= len(blocks))):
            raise ModelInputError("row_block_index must map every timestep to a row block")
        for blk in blocks:
            if blk.state_coef.shape[1] != n_x or blk.control_coef.shape[1] != n_u:
                raise ModelInputError("row block coefficient widths do not match n_x/n_u")
        rhs = tuple(_frozen(r) for r in self.row_rhs) if self.row_rhs else tuple(
            _frozen(np.zeros(blocks[index[t]].num_rows)) for t in range(N)
        )
        if len(rhs) != N or any(rhs[t].shape != (blocks[index[t]].num_rows,) for t in range(N)):
            raise ModelInputError("row_rhs must hold one vector per timestep matching its row block")
        index.setflags(write=False)
        object.__setattr__(self, "dynamics_A", A)
        object.__setattr__(self, "dynamics_B", B)
        object.__setattr__(self, "row_blocks", blocks)
        object.__setattr__(self, "row_block_index", index)
        object.__setattr__(self, "row_rhs", rhs)
        object.__setattr__(self, "state_names", tuple(self.state_names))
        object.__setattr__(self, "control_names", tuple(self.control_names))
        x0 = self.initial_state
        if np.any(x0 < self.x_lower[0] - FEAS_TOL) or np.any(x0 > self.x_upper[0] + FEAS_TOL):
            raise ModelInputError("initial state lies outside the time-0 state bounds")
        for mask, lo, up in (
            (self.integer_state_mask, self.x_lower, self.x_upper),
            (self.integer_control_mask, self.u_lower, self.u_upper),
        ):
            if mask.any() and not (np.all(np.isfinite(lo[:, mask])) and np.all(np.isfinite(up[:, mask]))):
                raise ModelInputError("integer components need finite bounds")

    @property
    def horizon(self) -> int:
        return self.dynamics_A.shape[0]

    @property
    def num_states(self) -> int:
        return self.dynamics_A.shape[1]

    @property
    def num_controls(self) -> int:
        return self.dynamics_B.shape[2]

    def rows_at(self, t: int) -> tuple[RowBlock, np.ndarray]:
        return self.row_blocks[self.row_block_index[t]], self.row_rhs[t]

    def relaxed(self) -> "MpcProblem":
        """Same problem with all integrality dropped."""
        return _replace(
            self,
            integer_state_mask=np.zeros(self.num_states, bool),
            integer_control_mask=np.zeros(self.num_controls, bool),
        )

    @property
    def is_continuous(self) -> bool:
        return not (self.integer_state_mask.any() or self.integer_control_mask.any())

    def with_initial_state(self, x0) -> "MpcProblem":
        return _replace(self, initial_state=np.asarray(x0, dtype=float))

    def tail(self, start: int, x_start) -> "MpcProblem":
        """Subproblem over timesteps ``start .. N-1`` starting from ``x_start``."""
        N = self.horizon
        if not 0 <= start <= N:
            raise ModelInputError(f"tail start {start} outside [0, {N}]")
        x_lower = self.x_lower[start:].copy()
        x_upper = self.x_upper[start:].copy()
        # the incoming state is fixed by the caller; its own bounds do not apply
        x_lower[0] = -np.inf
        x_upper[0] = np.inf
        return MpcProblem(
            self.dynamics_A[start:],
            self.dynamics_B[start:],
            self.cost_x[start:],
            self.cost_u[start:],
            self.cost_const[start:],
            x_lower,
            x_upper,
            self.u_lower[start:],
            self.u_upper[start:],
            np.asarray(x_start, dtype=float),
            self.integer_state_mask,
            self.integer_control_mask,
            self.row_blocks,
            self.row_block_index[start:],
            self.row_rhs[start:],
            self.state_names,
            self.control_names,
        )


def _replace(mpc: MpcProblem, **changes) -> MpcProblem:
    fields = dict(
        dynamics_A=mpc.dynamics_A,
        dynamics_B=mpc.dynamics_B,
        cost_x=mpc.cost_x,
        cost_u=mpc.cost_u,
        cost_const=mpc.cost_const,
        x_lower=mpc.x_lower,
        x_upper=mpc.x_upper,
        u_lower=mpc.u_lower,
        u_upper=mpc.u_upper,
        initial_state=mpc.initial_state,
        integer_state_mask=mpc.integer_state_mask,
        integer_control_mask=mpc.integer_control_mask,
        row_blocks=mpc.row_blocks,
        row_block_index=mpc.row_block_index,
        row_rhs=mpc.row_rhs,
        state_names=mpc.state_names,
        control_names=mpc.control_names,
    )
    fields.update(changes)
    return MpcProblem(**fields)


# ---------------------------------------------------------------------------
# partitions


@dataclass(frozen=True)
class StageBlock:
    stage_index: int
    inner_times: tuple
    incoming_state_dim: int

    @property
    def first(self) -> int:
        return self.inner_times[0]

    @property
    def end(self) -> int:
        """Global index of the outgoing state (one past the last inner timestep)."""
        return self.inner_times[-1] + 1

    def __len__(self) -> int:
        return len(self.inner_times)


def partition_uniform(mpc: MpcProblem, num_stages: int) -> list[StageBlock]:
    """Split ``0..N-1`` into ``num_stages`` contiguous blocks.

    When ``num_stages`` does not divide ``N`` the first ``N % num_stages``
    blocks get one extra timestep (N=10, 3 stages -> sizes 4, 3, 3).
    """
    N = mpc.horizon
    if num_stages < 1 or num_stages > N:
        raise ModelInputError(f"num_stages must lie in [1, {N}], got {num_stages}")
    base, extra = divmod(N, num_stages)
    blocks = []
    start = 0
    for s in range(num_stages):
        size = base + (1 if s < extra else 0)
        blocks.append(StageBlock(s, tuple(range(start, start + size)), mpc.num_states))
        start += size
    return blocks


def partition_sizes(mpc: MpcProblem, sizes: Sequence[int]) -> list[StageBlock]:
    if sum(sizes) != mpc.horizon or any(s < 1 for s in sizes):
        raise ModelInputError("block sizes must be positive and sum to the horizon")
    blocks, start = [], 0
    for s, size in enumerate(sizes):
        blocks.append(StageBlock(s, tuple(range(start, start + size)), mpc.num_states))
        start += size
    return blocks


def check_partition(mpc: MpcProblem, blocks: Sequence[StageBlock]) -> None:
    expect = 0
    for s, blk in enumerate(blocks):
        if blk.stage_index != s or not blk.inner_times:
            raise ModelInputError(f"block {s} is empty or misnumbered")
        if list(blk.inner_times) != list(range(expect, expect + len(blk))):
            raise ModelInputError(f"block {s} is not contiguous with its predecessor")
        expect += len(blk)
    if expect != mpc.horizon:
        raise ModelInputError("blocks do not cover the horizon")


# ---------------------------------------------------------------------------
# MILP assembly


@dataclass(frozen=True)
class ElasticConfig:
    """Penalized slack pairs on rows flagged ``elastic`` in their row block."""

    enabled: bool = True
    penalty: float = 1e4


class _Assembler:
    """Incremental sparse builder for one LP/MILP."""

    def __init__(self):
        self.cost: list[float] = []
        self.lo: list[float] = []
        self.up: list[float] = []
        self.integer: list[bool] = []
        self.names: list[str] = []
        self.var_map: dict = {}
        self.ri: list[int] = []
        self.ci: list[int] = []
        self.vals: list[float] = []
        self.kinds: list[int] = []
        self.rhs: list[float] = []
        self.row_names: list[str] = []

    def add_vars(self, role: str, t: int, cost, lo, up, integer, names=None) -> np.ndarray:
        k = len(cost)
        start = len(self.cost)
        self.cost.extend(np.asarray(cost, float).tolist())
        self.lo.extend(np.asarray(lo, float).tolist())
        self.up.extend(np.asarray(up, float).tolist())
        self.integer.extend(np.asarray(integer, bool).tolist())
        for i in range(k):
            self.var_map[(role, t, i)] = start + i
            self.names.append(f"{role}[{t},{names[i] if names else i}]")
        return np.arange(start, start + k)

    def add_rows(self, cols_coefs: Iterable[tuple[np.ndarray, np.ndarray]], kinds, rhs, names) -> np.ndarray:
        """Add ``len(rhs)`` rows; each (cols, coef) pair is a dense coefficient block."""
        start = len(self.rhs)
        m = len(rhs)
        for cols, coef in cols_coefs:
            coef = np.asarray(coef, float).reshape(m, len(cols))
            r, c = np.nonzero(coef)
            self.ri.extend((start + r).tolist())
            self.ci.extend(np.asarray(cols)[c].tolist())
            self.vals.extend(coef[r, c].tolist())
        self.kinds.extend(np.asarray(kinds, int).tolist())
        self.rhs.extend(np.asarray(rhs, float).tolist())
        self.row_names.extend(names)
        return np.arange(start, start + m)

    def matrix(self):
        return sp.csr_matrix(
            (self.vals, (self.ri, self.ci)), shape=(len(self.rhs), len(self.cost))
        )

    def build(self, offset: float, dense: bool) -> MilpProblem:
        A = self.matrix()
        lp = LpProblem(
            np.array(self.cost),
            A.toarray() if dense else A,
            np.array(self.kinds, dtype=np.int8),
            np.array(self.rhs),
            np.array(self.lo),
            np.array(self.up),
            objective_offset=offset,
            var_names=self.names,
            row_names=self.row_names,
        )
        return MilpProblem(lp, np.array(self.integer, dtype=bool))


def _add_timestep_rows(asm: _Assembler, mpc: MpcProblem, t: int, x_cols, u_cols, elastic: Optional[ElasticConfig]):
    blk, rhs = mpc.rows_at(t)
    if blk.num_rows == 0:
        return
    parts = [(x_cols, blk.state_coef), (u_cols, blk.control_coef)]
    if elastic is not None and elastic.enabled and blk.elastic.any():
        idx = np.nonzero(blk.elastic)[0]
        k = idx.size
        sp_cols = asm.add_vars("slack+", t, np.full(k, elastic.penalty), np.zeros(k), np.full(k, np.inf), np.zeros(k, bool), idx.tolist())
        sm_cols = asm.add_vars("slack-", t, np.full(k, elastic.penalty), np.zeros(k), np.full(k, np.inf), np.zeros(k, bool), idx.tolist())
        E = np.zeros((blk.num_rows, k))
        E[idx, np.arange(k)] = 1.0
        parts += [(sp_cols, E), (sm_cols, -E)]
    names = [f"{blk.names[i] if blk.names else 'row' + str(i)}[{t}]" for i in range(blk.num_rows)]
    asm.add_rows(parts, blk.kinds, rhs, names)


def _dynamics_rows(asm, mpc, t, x_prev_cols, u_cols, x_next_cols):
    n_x = mpc.num_states
    names = [f"dyn[{t},{i}]" for i in range(n_x)]
    asm.add_rows(
        [(x_next_cols, np.eye(n_x)), (x_prev_cols, -mpc.dynamics_A[t]), (u_cols, -mpc.dynamics_B[t])],
        np.zeros(n_x, int),
        np.zeros(n_x),
        names,
    )


@dataclass(frozen=True, eq=False)
class ExtensiveForm:
    milp: MilpProblem
    var_map: dict
    state_cols: np.ndarray  # (N+1, n_x)
    control_cols: np.ndarray  # (N, n_u)
    slack_cols: tuple = ()  # per timestep, elastic slack columns (both signs)

    def trajectory(self, x: np.ndarray) -> "Trajectory":
        slack = tuple(x[c] for c in self.slack_cols)
        return Trajectory(x[self.state_cols], x[self.control_cols], slack)


def build_extensive_form(
    mpc: MpcProblem, elastic: Optional[ElasticConfig] = None, dense: bool = False
) -> ExtensiveForm:
    """The monolithic MILP over the whole horizon."""
    N, n_x, n_u = mpc.horizon, mpc.num_states, mpc.num_controls
    asm = _Assembler()
    state_cols = np.zeros((N + 1, n_x), dtype=int)
    control_cols = np.zeros((N, n_u), dtype=int)
    slack_cols = []
    zero_cost = np.zeros(n_x)
    state_cols[0] = asm.add_vars("state", 0, mpc.cost_x[0] if N else zero_cost, mpc.x_lower[0], mpc.x_upper[0],
                                 mpc.integer_state_mask, mpc.state_names or None)
    asm.add_rows([(state_cols[0], np.eye(n_x))], np.zeros(n_x, int), mpc.initial_state,
                 [f"init[{i}]" for i in range(n_x)])
    for t in range(N):
        control_cols[t] = asm.add_vars("control", t, mpc.cost_u[t], mpc.u_lower[t], mpc.u_upper[t],
                                       mpc.integer_control_mask, mpc.control_names or None)
        cost_next = mpc.cost_x[t + 1] if t + 1 < N else zero_cost
        state_cols[t + 1] = asm.add_vars("state", t + 1, cost_next, mpc.x_lower[t + 1], mpc.x_upper[t + 1],
                                         mpc.integer_state_mask, mpc.state_names or None)
        _dynamics_rows(asm, mpc, t, state_cols[t], control_cols[t], state_cols[t + 1])
        before = len(asm.cost)
        _add_timestep_rows(asm, mpc, t, state_cols[t], control_cols[t], elastic)
        slack_cols.append(np.arange(before, len(asm.cost)))
    milp = asm.build(float(mpc.cost_const.sum()), dense=dense)
    return ExtensiveForm(milp, asm.var_map, state_cols, control_cols, tuple(slack_cols))


@dataclass(frozen=True, eq=False)
class StageSubproblem:
    """One stage's MILP: copy variables ``z`` pinned to the incoming state, inner
    controls/states, and the cost-to-go variable ``theta`` bounded below by cuts."""

    milp: MilpProblem
    var_map: dict
    linking_row_ids: np.ndarray
    theta_column: int
    block: StageBlock
    state_cols: np.ndarray  # (len+1, n_x); row 0 holds the z columns
    control_cols: np.ndarray  # (len, n_u)
    num_cuts: int
    base_offset: float

    @property
    def out_state_cols(self) -> np.ndarray:
        return self.state_cols[-1]

    def stage_cost(self, x: np.ndarray) -> float:
        """Objective value without theta (includes constant offsets)."""
        lp = self.milp.lp
        return float(lp.objective @ x - x[self.theta_column] + lp.objective_offset)


@dataclass(frozen=True, eq=False)
class _StageTemplate:
    asm_matrix: sp.csr_matrix
    cost: np.ndarray
    lo: np.ndarray
    up: np.ndarray
    integer: np.ndarray
    kinds: np.ndarray
    rhs: np.ndarray
    var_map: dict
    linking_rows: np.ndarray
    theta: int
    state_cols: np.ndarray
    control_cols: np.ndarray
    offset: float
    names: list
    row_names: list


_TEMPLATE_CACHE: dict = {}


def _stage_template(mpc: MpcProblem, block: StageBlock, elastic: Optional[ElasticConfig], theta_min: float,
                    final: bool) -> _StageTemplate:
    key = (id(mpc), block.inner_times, elastic, theta_min, final)
    hit = _TEMPLATE_CACHE.get(key)
    if hit is not None and hit[0] is mpc:
        return hit[1]
    n_x, n_u = mpc.num_states, mpc.num_controls
    L = len(block)
    asm = _Assembler()
    state_cols = np.zeros((L + 1, n_x), dtype=int)
    control_cols = np.zeros((L, n_u), dtype=int)
    t0 = block.first
    # copy of the incoming state: free, continuous
    state_cols[0] = asm.add_vars("copy", t0, mpc.cost_x[t0], np.full(n_x, -np.inf), np.full(n_x, np.inf),
                                 np.zeros(n_x, bool), mpc.state_names or None)
    linking = asm.add_rows([(state_cols[0], np.eye(n_x))], np.zeros(n_x, int), np.zeros(n_x),
                           [f"link[{t0},{i}]" for i in range(n_x)])
    for p, t in enumerate(block.inner_times):
        control_cols[p] = asm.add_vars("control", t, mpc.cost_u[t], mpc.u_lower[t], mpc.u_upper[t],
                                       mpc.integer_control_mask, mpc.control_names or None)
        last = p == L - 1
        cost_next = np.zeros(n_x) if last else mpc.cost_x[t + 1]
        state_cols[p + 1] = asm.add_vars("state", t + 1, cost_next, mpc.x_lower[t + 1], mpc.x_upper[t + 1],
                                         mpc.integer_state_mask, mpc.state_names or None)
        _dynamics_rows(asm, mpc, t, state_cols[p], control_cols[p], state_cols[p + 1])
        _add_timestep_rows(asm, mpc, t, state_cols[p], control_cols[p], elastic)
    theta_lo, theta_up = (0.0, 0.0) if final else (theta_min, np.inf)
    theta = int(asm.add_vars("theta", block.end, [1.0], [theta_lo], [theta_up], [False])[0])
    offset = float(sum(mpc.cost_const[t] for t in block.inner_times))
    tmpl = _StageTemplate(
        asm.matrix(), np.array(asm.cost), np.array(asm.lo), np.array(asm.up), np.array(asm.integer, bool),
        np.array(asm.kinds, dtype=np.int8), np.array(asm.rhs), asm.var_map, linking, theta, state_cols,
        control_cols, offset, asm.names, asm.row_names,
    )
    if len(_TEMPLATE_CACHE) > 4096:
        _TEMPLATE_CACHE.clear()
    _TEMPLATE_CACHE[key] = (mpc, tmpl)
    return tmpl


def build_stage_subproblem(
    mpc: MpcProblem,
    block: StageBlock,
    cuts: Sequence,
    incoming_state,
    penalties: Optional[ElasticConfig] = None,
    theta_min: float = 0.0,
    final: Optional[bool] = None,
) -> StageSubproblem:
    """Assemble the stage MILP for ``block`` with the incoming state pinned.

    ``cuts`` are objects with ``phi_hat``, ``mu`` and ``x_ref`` bounding the
    cost-to-go of the successor stage; each becomes the row
    ``theta - mu @ x_out >= phi_hat - mu @ x_ref``. The final block has theta
    fixed at zero.
    """
    n_x = mpc.num_states
    incoming = np.asarray(incoming_state, dtype=float).ravel()
    if incoming.size != n_x:
        raise ModelInputError(f"incoming state has length {incoming.size}, expected {n_x}")
    if final is None:
        final = block.end == mpc.horizon
    tmpl = _stage_template(mpc, block, penalties, float(theta_min), final)
    rhs = tmpl.rhs.copy()
    rhs[tmpl.linking_rows] = incoming
    ncols = tmpl.cost.size
    out_cols = tmpl.state_cols[-1]
    K = len(cuts)
    big = tmpl.rhs.size + K > DENSE_STAGE_ROWS
    dense = tmpl.asm_matrix if big else tmpl.asm_matrix.toarray()
    if K:
        cut_rows = np.zeros((K, ncols))
        cut_rhs = np.empty(K)
        for k, cut in enumerate(cuts):
            mu = np.asarray(cut.mu, dtype=float)
            if mu.size != n_x or np.asarray(cut.x_ref).size != n_x:
                raise ModelInputError(f"cut {k} has dimension {mu.size}, expected {n_x}")
            cut_rows[k, tmpl.theta] = 1.0
            cut_rows[k, out_cols] = -mu
            cut_rhs[k] = cut.phi_hat - mu @ np.asarray(cut.x_ref, dtype=float)
        dense = sp.vstack([dense, sp.csr_matrix(cut_rows)], format="csr") if big else np.vstack([dense, cut_rows])
        kinds = np.concatenate([tmpl.kinds, np.full(K, 2, dtype=np.int8)])
        rhs = np.concatenate([rhs, cut_rhs])
        row_names = tmpl.row_names + [f"cut[{block.stage_index},{k}]" for k in range(K)]
    else:
        kinds = tmpl.kinds
        row_names = tmpl.row_names
    lp = LpProblem(tmpl.cost, dense, kinds, rhs, tmpl.lo, tmpl.up, tmpl.offset, tmpl.names, row_names)
    return StageSubproblem(
        MilpProblem(lp, tmpl.integer), tmpl.var_map, tmpl.linking_rows, tmpl.theta, block,
        tmpl.state_cols, tmpl.control_cols, K, tmpl.offset,
    )


def stage_dimensions(mpc: MpcProblem, block: StageBlock, num_cuts: int = 0,
                     elastic: Optional[ElasticConfig] = None) -> tuple[int, int]:
    """(columns, rows) of a stage subproblem, computed without building it.

    columns = n_x + sum_t (n_u + n_x + 2 e_t) + 1, rows = n_x + sum_t (n_x + m_t) + num_cuts,
    where m_t is the number of timestep rows and e_t the number of elastic ones.
    """
    n_x, n_u = mpc.num_states, mpc.num_controls
    cols, rows = n_x + 1, n_x + num_cuts
    for t in block.inner_times:
        blk, _ = mpc.rows_at(t)
        e = int(blk.elastic.sum()) if elastic is not None and elastic.enabled else 0
        cols += n_u + n_x + 2 * e
        rows += n_x + blk.num_rows
    return cols, rows


# ---------------------------------------------------------------------------
# trajectories and policy cost


@dataclass(frozen=True, eq=False)
class Trajectory:
    x: np.ndarray  # (N+1, n_x)
    u: np.ndarray  # (N, n_u)
    elastic_slack: tuple = ()  # per timestep: slack magnitudes on elastic rows


@dataclass(frozen=True)
class PolicyCost:
    raw: float
    penalized: float


def evaluate_policy_cost(mpc: MpcProblem, trajectory: Trajectory, elastic: Optional[ElasticConfig] = None,
                         tol: float = 1e-6) -> PolicyCost:
    """Sum of stage costs (with constants) along ``trajectory``.

    ``raw`` excludes elastic penalties, ``penalized`` adds penalty * total slack.
    Raises ModelInputError naming the first dynamics row violated beyond ``tol``
    (scaled by the state magnitude).
    """
    x = np.asarray(trajectory.x, dtype=float)
    u = np.asarray(trajectory.u, dtype=float)
    N = mpc.horizon
    if x.shape != (N + 1, mpc.num_states) or u.shape != (N, mpc.num_controls):
        raise ModelInputError("trajectory shape does not match the problem")
    if np.max(np.abs(x[0] - mpc.initial_state), initial=0.0) > tol * (1 + np.abs(mpc.initial_state).max(initial=0)):
        raise ModelInputError("trajectory does not start at the initial state")
    for t in range(N):
        pred = mpc.dynamics_A[t] @ x[t] + mpc.dynamics_B[t] @ u[t]
        err = np.abs(x[t + 1] - pred)
        scale = tol * (1.0 + np.abs(x[t + 1]))
        if np.any(err > scale):
            i = int(np.argmax(err - scale))
            raise ModelInputError(f"dynamics row dyn[{t},{i}] violated by {err[i]:.3g}")
    raw = float(
        np.einsum("ti,ti->", mpc.cost_x, x[:N]) + np.einsum("ti,ti->", mpc.cost_u, u) + mpc.cost_const.sum()
    )
    total_slack = float(sum(np.sum(s) for s in trajectory.elastic_slack)) if trajectory.elastic_slack else 0.0
    penalty = elastic.penalty if elastic is not None else 0.0
    return PolicyCost(raw, raw + penalty * total_slack)


# ---------------------------------------------------------------------------
# JSON interchange


def _arr(a) -> list:
    return np.asarray(a).tolist()


def _float_list(a) -> list:
    return [None if not np.isfinite(v) else float(v) for v in np.asarray(a, float).ravel()]


def _bounds(values, fill: float, shape) -> np.ndarray:
    flat = np.array([fill if v is None else v for v in values], dtype=float)
    return flat.reshape(shape)


def mpc_to_dict(mpc: MpcProblem) -> dict:
    """Versioned JSON-compatible dict. Infinite bounds are written as null."""
    N, n_x, n_u = mpc.horizon, mpc.num_states, mpc.num_controls
    return {
        "schema": SCHEMA_NAME,
        "version": SCHEMA_VERSION,
        "horizon": N,
        "num_states": n_x,
        "num_controls": n_u,
        "state_names": list(mpc.state_names),
        "control_names": list(mpc.control_names),
        "integer_state_mask": _arr(mpc.integer_state_mask),
        "integer_control_mask": _arr(mpc.integer_control_mask),
        "initial_state": _arr(mpc.initial_state),
        "dynamics_A": _arr(mpc.dynamics_A),
        "dynamics_B": _arr(mpc.dynamics_B),
        "cost_x": _arr(mpc.cost_x),
        "cost_u": _arr(mpc.cost_u),
        "cost_const": _arr(mpc.cost_const),
        "x_lower": _float_list(mpc.x_lower),
        "x_upper": _float_list(mpc.x_upper),
        "u_lower": _float_list(mpc.u_lower),
        "u_upper": _float_list(mpc.u_upper),
        "row_blocks": [
            {
                "state_coef": _arr(b.state_coef),
                "control_coef": _arr(b.control_coef),
                "kinds": [("E", "L", "G")[k] for k in b.kinds],
                "elastic": _arr(b.elastic),
                "names": list(b.names),
            }
            for b in mpc.row_blocks
        ],
        "row_block_index": _arr(mpc.row_block_index),
        "row_rhs": [_arr(r) for r in mpc.row_rhs],
    }


def mpc_from_dict(d: dict) -> MpcProblem:
    if d.get("schema") != SCHEMA_NAME:
        raise ModelInputError(f"not an MPC problem document (schema={d.get('schema')!r})")
    if d.get("version") != SCHEMA_VERSION:
        raise ModelInputError(f"unsupported schema version {d.get('version')!r}")
    try:
        N, n_x, n_u = int(d["horizon"]), int(d["num_states"]), int(d["num_controls"])
        blocks = tuple(
            RowBlock(
                np.array(b["state_coef"], float).reshape(len(b["kinds"]), n_x),
                np.array(b["control_coef"], float).reshape(len(b["kinds"]), n_u),
                b["kinds"],
                b["elastic"],
                tuple(b.get("names", ())),
            )
            for b in d["row_blocks"]
        )
        return MpcProblem(
            np.array(d["dynamics_A"], float).reshape(N, n_x, n_x),
            np.array(d["dynamics_B"], float).reshape(N, n_x, n_u),
            np.array(d["cost_x"], float).reshape(N, n_x),
            np.array(d["cost_u"], float).reshape(N, n_u),
            np.array(d["cost_const"], float).reshape(N),
            _bounds(d["x_lower"], -np.inf, (N + 1, n_x)),
            _bounds(d["x_upper"], np.inf, (N + 1, n_x)),
            _bounds(d["u_lower"], -np.inf, (N, n_u)),
            _bounds(d["u_upper"], np.inf, (N, n_u)),
            np.array(d["initial_state"], float),
            np.array(d["integer_state_mask"], bool),
            np.array(d["integer_control_mask"], bool),
            blocks,
            np.array(d["row_block_index"], int),
            tuple(np.array(r, float) for r in d["row_rhs"]),
            tuple(d.get("state_names", ())),
            tuple(d.get("control_names", ())),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ModelInputError):
            raise
        raise ModelInputError(f"malformed MPC problem document: {exc}") from None


def save_mpc(mpc: MpcProblem, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(mpc_to_dict(mpc), fh)
        fh.write("\n")


def load_mpc(path) -> MpcProblem:
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ModelInputError(f"{path}: invalid JSON ({exc})") from None
    return mpc_from_dict(data)
