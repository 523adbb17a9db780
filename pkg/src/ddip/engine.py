"""Deterministic dual dynamic integer programming over a block partition of the horizon.

Each iteration runs

* a forward sweep: stage MILPs solved in order, each starting from the previous
  stage's outgoing state, giving a feasible policy and an upper bound;
* a backward sweep: LP relaxations of the stage problems at the forward states,
  whose optimal values and linking-row duals become Benders cuts on the
  predecessor stage's cost-to-go variable; re-solving the first stage's LP with
  the enlarged pool gives the lower bound.

Cost-to-go values exclude the constant per-timestep cost terms, which are added
back when bounds are reported.
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from .lp_core import BasisSnapshot, LpOptions, LpStatus, solve_lp_reference, solve_lp_warm
from .milp_bb import MilpOptions, solve_milp
from .mpc_model import (
    ElasticConfig,
    MpcProblem,
    StageBlock,
    Trajectory,
    build_extensive_form,
    build_stage_subproblem,
    check_partition,
    partition_sizes,
    partition_uniform,
)

DUPLICATE_TOL = 1e-9
STATUS_CONVERGED = "converged"
STATUS_ITERATION_LIMIT = "iteration-limit"
STATUS_STALLED = "stalled"


class DdipInfeasibleError(RuntimeError):
    """A stage problem has no feasible point for the given incoming state."""

    def __init__(self, stage: int, sweep: str, detail: str = ""):
        self.stage = stage
        self.sweep = sweep
        super().__init__(f"stage {stage} is infeasible in the {sweep} sweep{': ' + detail if detail else ''}")


class DdipNumericError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class BendersCut:
    """Affine lower bound ``phi_hat + mu @ (x - x_ref)`` on the cost-to-go of ``stage``."""

    stage: int
    phi_hat: float
    mu: np.ndarray
    x_ref: np.ndarray
    iteration: int = 0

    def __post_init__(self):
        mu = np.array(self.mu, dtype=float).ravel()
        x_ref = np.array(self.x_ref, dtype=float).ravel()
        if mu.size != x_ref.size:
            raise ValueError("mu and x_ref must have the same length")
        if not (math.isfinite(self.phi_hat) and np.all(np.isfinite(mu)) and np.all(np.isfinite(x_ref))):
            raise ValueError("cut coefficients must be finite")
        mu.setflags(write=False)
        x_ref.setflags(write=False)
        object.__setattr__(self, "phi_hat", float(self.phi_hat))
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "x_ref", x_ref)

    def value(self, x) -> float:
        return float(self.phi_hat + self.mu @ (np.asarray(x, dtype=float) - self.x_ref))

    @property
    def intercept(self) -> float:
        """Constant term when written as ``intercept + mu @ x``."""
        return float(self.phi_hat - self.mu @ self.x_ref)

    def same_as(self, other: "BendersCut", tol: float = DUPLICATE_TOL) -> bool:
        if self.stage != other.stage or self.mu.size != other.mu.size:
            return False
        if np.max(np.abs(self.mu - other.mu), initial=0.0) > tol:
            return False
        scale = max(1.0, abs(self.intercept), abs(other.intercept))
        return abs(self.intercept - other.intercept) <= tol * scale


class CutPool:
    """Append-only per-stage cut lists."""

    def __init__(self, num_stages: int):
        self._cuts: list[list[BendersCut]] = [[] for _ in range(num_stages + 1)]

    @property
    def num_stages(self) -> int:
        return len(self._cuts) - 1

    def add(self, cut: BendersCut) -> bool:
        """Append ``cut`` unless an equivalent cut is already stored; returns whether it was added."""
        if not 0 <= cut.stage <= self.num_stages:
            raise ValueError(f"cut stage {cut.stage} outside [0, {self.num_stages}]")
        bucket = self._cuts[cut.stage]
        if any(cut.same_as(c) for c in bucket):
            return False
        bucket.append(cut)
        return True

    def cuts_for(self, stage: int) -> tuple:
        """Cuts bounding the cost-to-go of ``stage`` (attached to stage - 1)."""
        if stage > self.num_stages - 1:
            return ()
        return tuple(self._cuts[stage])

    def snapshot(self) -> list[tuple]:
        return [tuple(b) for b in self._cuts]

    def __len__(self) -> int:
        return sum(len(b) for b in self._cuts)

    def __iter__(self):
        for bucket in self._cuts:
            yield from bucket

    def counts(self) -> list[int]:
        return [len(b) for b in self._cuts]


@dataclass(frozen=True)
class DdipConfig:
    num_stages: Optional[int] = None  # uniform partition; None means one stage per timestep
    stage_sizes: Optional[tuple] = None  # explicit block sizes (overrides num_stages)
    epsilon: Optional[float] = None  # None: 1e-4 for LP instances, 1e-3 with integers
    max_iterations: int = 100
    backward_mode: str = "sequential"  # or "parallel"
    parallelism: int = 1
    elastic: Optional[ElasticConfig] = None
    stall_iterations: int = 20
    stall_tol: float = 1e-9
    theta_min: float = 0.0
    stage_rel_gap: float = 1e-6
    stage_node_limit: int = 200_000
    record_trajectories: bool = False
    time_limit: Optional[float] = None

    def __post_init__(self):
        if self.backward_mode not in ("sequential", "parallel"):
            raise ValueError(f"backward_mode must be 'sequential' or 'parallel', got {self.backward_mode!r}")
        if self.parallelism < 1:
            raise ValueError("parallelism must be at least 1")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be nonnegative")
        if self.epsilon is not None and self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.stage_sizes is not None:
            object.__setattr__(self, "stage_sizes", tuple(int(s) for s in self.stage_sizes))

    def resolved_epsilon(self, mpc: MpcProblem) -> float:
        if self.epsilon is not None:
            return self.epsilon
        return 1e-4 if mpc.is_continuous else 1e-3

    def blocks(self, mpc: MpcProblem) -> list[StageBlock]:
        if self.stage_sizes is not None:
            return partition_sizes(mpc, self.stage_sizes)
        return partition_uniform(mpc, self.num_stages if self.num_stages is not None else mpc.horizon)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stage_sizes"] = list(self.stage_sizes) if self.stage_sizes is not None else None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DdipConfig":
        d = dict(d)
        if d.get("elastic") is not None:
            d["elastic"] = ElasticConfig(**d["elastic"])
        if d.get("stage_sizes") is not None:
            d["stage_sizes"] = tuple(d["stage_sizes"])
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown DDIP option(s): {', '.join(sorted(unknown))}")
        return cls(**d)


def gap_of(best_ub: float, lb: float) -> float:
    if not math.isfinite(best_ub):
        return math.inf
    return (best_ub - lb) / max(1.0, abs(best_ub))


@dataclass(frozen=True, eq=False)
class IterationRecord:
    k: int
    ub: float
    lb: float
    best_ub: float
    gap: float
    forward_time: float
    backward_time: float
    lb_raw: float
    cuts_added: int
    trajectory: Optional[Trajectory] = None

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in ("k", "ub", "lb", "best_ub", "gap", "forward_time", "backward_time",
                                           "lb_raw", "cuts_added")}
        if self.trajectory is not None:
            d["trajectory"] = {"x": self.trajectory.x.tolist(), "u": self.trajectory.u.tolist()}
        return d


@dataclass(eq=False)
class DdipRun:
    iterations: list
    final_status: str
    config: DdipConfig
    epsilon: float
    cuts: CutPool
    best_trajectory: Optional[Trajectory] = None
    first_trajectory: Optional[Trajectory] = None
    wall_time: float = 0.0

    @property
    def best_ub(self) -> float:
        return self.iterations[-1].best_ub if self.iterations else math.inf

    @property
    def lb(self) -> float:
        return self.iterations[-1].lb if self.iterations else -math.inf

    @property
    def gap(self) -> float:
        return gap_of(self.best_ub, self.lb)

    @property
    def converged(self) -> bool:
        return self.final_status == STATUS_CONVERGED

    def to_dict(self) -> dict:
        return {
            "final_status": self.final_status,
            "epsilon": self.epsilon,
            "config": self.config.to_dict(),
            "best_ub": _json_float(self.best_ub),
            "lb": _json_float(self.lb),
            "gap": _json_float(self.gap),
            "num_iterations": len(self.iterations),
            "num_cuts": len(self.cuts),
            "wall_time": self.wall_time,
            "iterations": [{k: _json_float(v) if isinstance(v, float) else v for k, v in it.to_dict().items()}
                           for it in self.iterations],
        }


def _json_float(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None if math.isnan(v) else ("inf" if v > 0 else "-inf")
    return v


# ---------------------------------------------------------------------------
# sweeps


class _Context:
    """State shared by the sweeps of one run: problem, partition, options, basis caches."""

    def __init__(self, mpc: MpcProblem, blocks: Sequence[StageBlock], config: DdipConfig):
        check_partition(mpc, blocks)
        self.mpc = mpc
        self.blocks = list(blocks)
        self.config = config
        self.milp_opts = MilpOptions(rel_gap=config.stage_rel_gap, node_limit=config.stage_node_limit)
        self.lp_opts = LpOptions()
        self.forward_basis: dict = {}
        self.backward_basis: dict = {}
        self.offsets = [float(sum(mpc.cost_const[t] for t in b.inner_times)) for b in self.blocks]

    def subproblem(self, s: int, pool_cuts: Sequence[BendersCut], incoming):
        return build_stage_subproblem(self.mpc, self.blocks[s], pool_cuts, incoming, self.config.elastic,
                                      self.config.theta_min, final=s == len(self.blocks) - 1)

    @staticmethod
    def _warm(cache: dict, s: int, num_rows: int) -> Optional[BasisSnapshot]:
        snap = cache.get(s)
        if snap is None or snap.num_rows > num_rows:
            return None
        return snap.extended(num_rows)


@dataclass(frozen=True, eq=False)
class ForwardResult:
    trajectory: Trajectory
    ub: float
    stage_costs: tuple
    stage_states: tuple  # incoming state of every stage


def forward_sweep(ctx: _Context, pool: CutPool, x0=None) -> ForwardResult:
    """Solve the stage MILPs in order and return the resulting policy and its cost."""
    mpc = ctx.mpc
    N, n_x, n_u = mpc.horizon, mpc.num_states, mpc.num_controls
    x = np.zeros((N + 1, n_x))
    u = np.zeros((N, n_u))
    slack: list = [np.zeros(0)] * N
    incoming = np.array(mpc.initial_state if x0 is None else x0, dtype=float)
    x[0] = incoming
    costs, states = [], []
    for s, blk in enumerate(ctx.blocks):
        states.append(incoming.copy())
        sub = ctx.subproblem(s, pool.cuts_for(s + 1), incoming)
        start = ctx._warm(ctx.forward_basis, s, sub.milp.lp.num_rows)
        sol = solve_milp(sub.milp, ctx.milp_opts, start_basis=start)
        if not sol.has_solution:
            raise DdipInfeasibleError(s, "forward", sol.status.value)
        ctx.forward_basis[s] = sol.root_basis
        z = sol.primal
        slack_cols: dict = {}
        for key, col in sub.var_map.items():
            if key[0] in ("slack+", "slack-"):
                slack_cols.setdefault(key[1], []).append(col)
        for p, t in enumerate(blk.inner_times):
            u[t] = z[sub.control_cols[p]]
            x[t + 1] = z[sub.state_cols[p + 1]]
            if t in slack_cols:
                slack[t] = z[sorted(slack_cols[t])]
        costs.append(sub.stage_cost(z))
        incoming = x[blk.end].copy()
    traj = Trajectory(x, u, tuple(slack))
    ub = float(sum(costs))
    return ForwardResult(traj, ub, tuple(costs), tuple(states))


def _backward_stage(ctx: _Context, s: int, cuts: Sequence[BendersCut], incoming, k: int,
                    warm: Optional[BasisSnapshot]):
    sub = ctx.subproblem(s, cuts, incoming)
    lp = sub.milp.lp
    start = warm.extended(lp.num_rows) if warm is not None and warm.num_rows <= lp.num_rows else None
    sol = solve_lp_warm(lp, start, ctx.lp_opts)
    if sol.status is not LpStatus.OPTIMAL:
        raise DdipInfeasibleError(s, "backward", sol.status.value)
    mu = sol.row_duals[sub.linking_row_ids]
    phi_hat = sol.objective - sub.base_offset
    return BendersCut(s, phi_hat, mu, np.array(incoming, dtype=float), k), sol.basis


@dataclass(frozen=True, eq=False)
class BackwardResult:
    cuts: tuple
    added: int
    lb: float


def backward_sweep(ctx: _Context, pool: CutPool, forward: ForwardResult, k: int) -> BackwardResult:
    """Generate one cut per stage ``S-1 .. 1`` and re-solve stage 0 for the lower bound."""
    S = len(ctx.blocks)
    new_cuts: list[BendersCut] = []
    added = 0
    if ctx.config.backward_mode == "sequential":
        for s in range(S - 1, 0, -1):
            cut, basis = _backward_stage(ctx, s, pool.cuts_for(s + 1), forward.stage_states[s], k,
                                         ctx.backward_basis.get(s))
            ctx.backward_basis[s] = basis
            new_cuts.append(cut)
            added += pool.add(cut)
    else:
        snapshot = {s: pool.cuts_for(s + 1) for s in range(1, S)}
        warm = {s: ctx.backward_basis.get(s) for s in range(1, S)}

        def task(s):
            return _backward_stage(ctx, s, snapshot[s], forward.stage_states[s], k, warm[s])

        stages = list(range(S - 1, 0, -1))
        if ctx.config.parallelism > 1 and len(stages) > 1:
            with ThreadPoolExecutor(max_workers=ctx.config.parallelism) as ex:
                results = list(ex.map(task, stages))
        else:
            results = [task(s) for s in stages]
        for s, (cut, basis) in zip(stages, results):
            ctx.backward_basis[s] = basis
            new_cuts.append(cut)
            added += pool.add(cut)
    cut0, basis0 = _backward_stage(ctx, 0, pool.cuts_for(1), forward.stage_states[0], k,
                                   ctx.backward_basis.get(0))
    ctx.backward_basis[0] = basis0
    lb = cut0.phi_hat + sum(ctx.offsets)
    return BackwardResult(tuple(new_cuts), added, lb)


def run_ddip(mpc: MpcProblem, config: Optional[DdipConfig] = None, blocks: Optional[Sequence[StageBlock]] = None,
             callback=None) -> DdipRun:
    """Alternate forward and backward sweeps until the relative gap drops below epsilon."""
    config = config or DdipConfig()
    blocks = list(blocks) if blocks is not None else config.blocks(mpc)
    ctx = _Context(mpc, blocks, config)
    eps = config.resolved_epsilon(mpc)
    pool = CutPool(len(blocks))
    records: list[IterationRecord] = []
    best_ub, lb = math.inf, -math.inf
    best_traj = first_traj = None
    status = STATUS_ITERATION_LIMIT
    still = 0
    t_run = time.perf_counter()
    for k in range(1, config.max_iterations + 1):
        t0 = time.perf_counter()
        fwd = forward_sweep(ctx, pool)
        t1 = time.perf_counter()
        bwd = backward_sweep(ctx, pool, fwd, k)
        t2 = time.perf_counter()
        prev_best, prev_lb = best_ub, lb
        if fwd.ub < best_ub:
            best_ub = fwd.ub
            best_traj = fwd.trajectory
        if first_traj is None:
            first_traj = fwd.trajectory
        lb = max(lb, bwd.lb)
        gap = gap_of(best_ub, lb)
        rec = IterationRecord(k, fwd.ub, lb, best_ub, gap, t1 - t0, t2 - t1, bwd.lb, bwd.added,
                              fwd.trajectory if config.record_trajectories else None)
        records.append(rec)
        if callback is not None:
            callback(rec)
        if gap < eps:
            status = STATUS_CONVERGED
            break
        scale = config.stall_tol * max(1.0, abs(best_ub))
        unchanged = (k > 1 and abs(prev_best - best_ub) <= scale and abs(prev_lb - lb) <= scale)
        still = still + 1 if unchanged else 0
        if still >= config.stall_iterations:
            status = STATUS_STALLED
            break
        if config.time_limit is not None and time.perf_counter() - t_run > config.time_limit:
            break
    return DdipRun(records, status, config, eps, pool, best_traj, first_traj, time.perf_counter() - t_run)


def make_context(mpc: MpcProblem, config: Optional[DdipConfig] = None,
                 blocks: Optional[Sequence[StageBlock]] = None) -> _Context:
    config = config or DdipConfig()
    return _Context(mpc, list(blocks) if blocks is not None else config.blocks(mpc), config)


# ---------------------------------------------------------------------------
# cut auditing


@dataclass(frozen=True)
class AuditEntry:
    state: tuple
    cut_value: float
    oracle_value: Optional[float]
    margin: Optional[float]  # oracle - cut; None when the oracle is infeasible

    @property
    def skipped(self) -> bool:
        return self.oracle_value is None


@dataclass(frozen=True)
class AuditReport:
    stage: int
    entries: tuple
    tol: float

    @property
    def min_margin(self) -> float:
        m = [e.margin for e in self.entries if e.margin is not None]
        return min(m) if m else math.inf

    @property
    def passed(self) -> bool:
        return self.min_margin >= -self.tol

    @property
    def skipped(self) -> int:
        return sum(e.skipped for e in self.entries)


def tail_lp_value(mpc: MpcProblem, blocks: Sequence[StageBlock], stage: int, state, elastic=None) -> Optional[float]:
    """Optimal LP-relaxed cost from ``state`` at the start of ``stage`` to the horizon,
    excluding constant cost terms; None if infeasible. Solved with an independent LP code."""
    start = blocks[stage].first
    tail = mpc.relaxed().tail(start, np.asarray(state, dtype=float))
    ext = build_extensive_form(tail, elastic)
    sol = solve_lp_reference(ext.milp.lp)
    if sol.status is LpStatus.INFEASIBLE:
        return None
    if sol.status is not LpStatus.OPTIMAL:
        raise DdipNumericError(f"tail oracle at stage {stage} returned {sol.status.value}")
    return sol.objective - ext.milp.lp.objective_offset


class TailOracle:
    """Memoized tail-LP values keyed by (stage, state)."""

    def __init__(self, mpc: MpcProblem, blocks: Sequence[StageBlock], elastic=None):
        self.mpc = mpc.relaxed()
        self.blocks = list(blocks)
        self.elastic = elastic
        self._memo: dict = {}

    def __call__(self, stage: int, state) -> Optional[float]:
        key = (stage, tuple(np.asarray(state, dtype=float).round(12).tolist()))
        if key not in self._memo:
            self._memo[key] = tail_lp_value(self.mpc, self.blocks, stage, state, self.elastic)
        return self._memo[key]


def audit_cut_validity(mpc: MpcProblem, blocks: Sequence[StageBlock], cut: BendersCut, sample_states,
                       tol: float = 1e-6, elastic=None, oracle: Optional[TailOracle] = None) -> AuditReport:
    """Compare ``cut`` with the tail-LP cost at each sample state; margins must be >= -tol
    (scaled by ``max(1, |oracle|)``)."""
    oracle = oracle or TailOracle(mpc, blocks, elastic)
    entries = []
    for x in sample_states:
        cv = cut.value(x)
        ov = oracle(cut.stage, x)
        if ov is None:
            entries.append(AuditEntry(tuple(map(float, x)), cv, None, None))
            continue
        margin = (ov - cv) / max(1.0, abs(ov))
        entries.append(AuditEntry(tuple(map(float, x)), cv, ov, margin))
    return AuditReport(cut.stage, tuple(entries), tol)


def sample_states(mpc: MpcProblem, blocks: Sequence[StageBlock], stage: int, count: int, seed: int,
                  include=None) -> list[np.ndarray]:
    """Seeded states inside the state bounds at the start of ``stage`` (infinite bounds
    are replaced by a box around ``include`` or the initial state)."""
    t = blocks[stage].first
    lo = mpc.x_lower[t].copy()
    up = mpc.x_upper[t].copy()
    centre = np.asarray(include if include is not None else mpc.initial_state, dtype=float)
    width = np.maximum(1.0, np.abs(centre))
    lo = np.where(np.isfinite(lo), lo, centre - width)
    up = np.where(np.isfinite(up), up, centre + width)
    rng = np.random.default_rng([seed, stage])
    return [lo + (up - lo) * rng.random(lo.size) for _ in range(count)]


def audit_pool(mpc: MpcProblem, blocks: Sequence[StageBlock], pool: CutPool, samples_per_stage: int = 10,
               seed: int = 0, tol: float = 1e-6, elastic=None) -> list[AuditReport]:
    """Audit every cut in ``pool``; all cuts of one stage share the same sample states."""
    oracle = TailOracle(mpc, blocks, elastic)
    reports = []
    samples = {}
    for cut in pool:
        if cut.stage not in samples:
            samples[cut.stage] = sample_states(mpc, blocks, cut.stage, samples_per_stage, seed)
        reports.append(audit_cut_validity(mpc, blocks, cut, samples[cut.stage], tol, elastic, oracle))
    return reports


# ---------------------------------------------------------------------------
# serialization

BOUNDS_HEADER = ("k", "ub", "lb", "best_ub", "gap")


def _fmt(v: float) -> str:
    return repr(float(v))


def meta_comment(meta: Optional[dict]) -> str:
    """A leading ``# key=value ...`` line for CSV artifacts (empty without metadata)."""
    if not meta:
        return ""
    return "# " + " ".join(f"{k}={v}" for k, v in meta.items()) + "\n"


def bounds_csv_text(run: DdipRun, meta: Optional[dict] = None) -> str:
    """Bound trace as CSV; gaps are recomputed from the emitted bounds."""
    buf = io.StringIO()
    buf.write(meta_comment(meta))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(BOUNDS_HEADER)
    for it in run.iterations:
        w.writerow([it.k, _fmt(it.ub), _fmt(it.lb), _fmt(it.best_ub), _fmt(gap_of(it.best_ub, it.lb))])
    return buf.getvalue()


def write_bounds_csv(run: DdipRun, path, meta: Optional[dict] = None) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(bounds_csv_text(run, meta))


def write_run_json(run: DdipRun, path, extra: Optional[dict] = None) -> None:
    doc = run.to_dict()
    if extra:
        doc.update(extra)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def dump_cuts(pool: CutPool, path) -> None:
    """CSV with columns ``stage, iteration, phi_hat, mu_0.., x_ref_0..``."""
    cuts = list(pool)
    n = cuts[0].mu.size if cuts else 0
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["stage", "iteration", "phi_hat"] + [f"mu_{i}" for i in range(n)]
                   + [f"x_ref_{i}" for i in range(n)])
        for c in cuts:
            w.writerow([c.stage, c.iteration, _fmt(c.phi_hat)] + [_fmt(v) for v in c.mu]
                       + [_fmt(v) for v in c.x_ref])


def load_cuts(path, num_stages: int) -> CutPool:
    pool = CutPool(num_stages)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        n = sum(h.startswith("mu_") for h in header)
        for row in reader:
            vals = [float(v) for v in row[3:]]
            pool.add(BendersCut(int(row[0]), float(row[2]), vals[:n], vals[n:], int(row[1])))
    return pool
