"""Command-line front end: build instances, solve, compare, enumerate optima, scale.

Usage::

    ddip build    --config run.json
    ddip solve    --config run.json --solver both
    ddip enumerate-optima --config run.json --count 3
    ddip scaling  --config run.json --horizons 24 48 96

Every verb reads a JSON run configuration (see ``RunConfig``); flags override
individual fields. ``DDIP_OUTPUT_DIR`` overrides the configured output
directory (an explicit ``--output-dir`` wins over both). Exit codes: 0 success,
2 input error, 3 solver hard error, 4 iteration or stall limit.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .engine import (
    DdipConfig,
    DdipInfeasibleError,
    DdipNumericError,
    DdipRun,
    gap_of,
    meta_comment,
    run_ddip,
    write_bounds_csv,
    write_run_json,
)
from .hvac_plant import (
    PlantInputError,
    PlantParams,
    SynthProfile,
    build_hvac_mpc,
    load_timeseries_csv,
    relax_min_capacity,
    structure_counts,
    synth_timeseries,
)
from .milp_bb import MilpInputError, MilpOptions, MilpSolution, MilpStatus, add_no_good_cut, solve_milp
from .mpc_model import ModelInputError, MpcProblem, Trajectory, build_extensive_form, load_mpc, save_mpc
from .toys import battery_toy, scalar_tracking_toy, symmetric_units_toy

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_SOLVER = 3
EXIT_LIMIT = 4

OUTPUT_ENV = "DDIP_OUTPUT_DIR"
SOURCES = ("synthetic", "csv", "problem", "toy")
SOLVERS = ("extensive", "ddip", "both")
DEFAULT_HORIZON = 24
TOYS = {"battery": battery_toy, "scalar": scalar_tracking_toy, "symmetric": symmetric_units_toy}


class ConfigError(ValueError):
    """Invalid run configuration (exit code 2)."""


class SolverError(RuntimeError):
    """A solve that could not produce a usable answer (exit code 3)."""


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class InstanceSpec:
    """Where the MPC problem comes from; ``source`` selects which fields apply.

    - ``synthetic``: HVAC plant over ``synth_timeseries(seed, horizon, profile)``
    - ``csv``: HVAC plant over the disturbance CSV at ``path`` (first ``horizon`` rows if given)
    - ``problem``: a serialized problem at ``path`` (``horizon`` must match or be omitted)
    - ``toy``: one of the built-in toys named by ``toy`` (``battery``, ``scalar``, ``symmetric``)
    """

    source: str = "synthetic"
    seed: int = 0
    horizon: Optional[int] = None  # synthetic default: DEFAULT_HORIZON; other sources: taken from the data
    path: Optional[str] = None
    toy: Optional[str] = None
    toy_args: dict = field(default_factory=dict)
    profile: dict = field(default_factory=dict)
    plant: dict = field(default_factory=dict)
    relax_min_capacity: bool = False
    integer: bool = True

    def __post_init__(self):
        if self.source not in SOURCES:
            raise ConfigError(f"instance.source must be one of {', '.join(SOURCES)}, got {self.source!r}")
        if self.source in ("csv", "problem") and not self.path:
            raise ConfigError(f"instance.source={self.source!r} needs instance.path")
        if self.source != "toy" and self.toy is not None:
            raise ConfigError("instance.toy is only meaningful with source='toy'")
        if self.source in ("synthetic", "toy") and self.path is not None:
            raise ConfigError(f"instance.path is not used by source={self.source!r}; give exactly one source")
        if self.source == "toy" and self.toy not in TOYS:
            raise ConfigError(f"instance.toy must be one of {', '.join(TOYS)}, got {self.toy!r}")
        if self.horizon is not None and int(self.horizon) < 1:
            raise ConfigError("instance.horizon must be at least 1")


@dataclass(frozen=True)
class ExtensiveSpec:
    rel_gap: float = 1e-4
    node_limit: int = 200_000
    time_limit: float = 600.0
    plunge: str = "always"

    def options(self) -> MilpOptions:
        return MilpOptions(rel_gap=self.rel_gap, node_limit=self.node_limit, time_limit=self.time_limit,
                           plunge=self.plunge)


@dataclass(frozen=True)
class RunConfig:
    instance: InstanceSpec = field(default_factory=InstanceSpec)
    solver: str = "both"
    ddip: DdipConfig = field(default_factory=DdipConfig)
    extensive: ExtensiveSpec = field(default_factory=ExtensiveSpec)
    output_dir: str = "runs/default"
    formats: tuple = ("json", "csv")
    count: int = 2  # enumerate-optima
    optimum_tolerance: float = 1e-4  # enumerate-optima: relative window around the optimum
    horizons: tuple = ()  # scaling
    max_extensive_binaries: int = 2000  # scaling: larger instances skip the extensive solve

    def __post_init__(self):
        if self.solver not in SOLVERS:
            raise ConfigError(f"solver must be one of {', '.join(SOLVERS)}, got {self.solver!r}")
        if self.count < 1:
            raise ConfigError("count must be at least 1")
        bad = set(self.formats) - {"json", "csv"}
        if bad:
            raise ConfigError(f"unknown report format(s): {', '.join(sorted(bad))}")
        object.__setattr__(self, "formats", tuple(self.formats))
        object.__setattr__(self, "horizons", tuple(int(h) for h in self.horizons))

    def to_dict(self) -> dict:
        return {
            "instance": asdict(self.instance),
            "solver": self.solver,
            "ddip": self.ddip.to_dict(),
            "extensive": asdict(self.extensive),
            "output_dir": self.output_dir,
            "formats": list(self.formats),
            "count": self.count,
            "optimum_tolerance": self.optimum_tolerance,
            "horizons": list(self.horizons),
            "max_extensive_binaries": self.max_extensive_binaries,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("run configuration must be a JSON object")
        d = dict(d)
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown configuration key(s): {', '.join(sorted(unknown))}")
        try:
            if "instance" in d:
                d["instance"] = InstanceSpec(**d["instance"])
            if "ddip" in d:
                d["ddip"] = DdipConfig.from_dict(d["ddip"])
            if "extensive" in d:
                d["extensive"] = ExtensiveSpec(**d["extensive"])
            return cls(**d)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def config_hash(self) -> str:
        """Digest of everything that determines results (the output location excluded)."""
        doc = self.to_dict()
        doc.pop("output_dir")
        blob = json.dumps(doc, sort_keys=True, separators=(",", ":"), allow_nan=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def meta(self) -> dict:
        return {"config_hash": self.config_hash(), "version": __version__}


def load_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
    try:
        return RunConfig.from_dict(doc)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


# ---------------------------------------------------------------------------
# instances


def build_instance(spec: InstanceSpec) -> MpcProblem:
    """Materialize the MPC problem described by ``spec``."""
    if spec.source == "toy":
        mpc = TOYS[spec.toy](**spec.toy_args)
        if spec.horizon is not None and spec.horizon != mpc.horizon:
            raise ConfigError(f"toy {spec.toy!r} has horizon {mpc.horizon}, config says {spec.horizon}")
        return mpc.relaxed() if not spec.integer else mpc
    if spec.source == "problem":
        mpc = load_mpc(spec.path)
        if spec.horizon is not None and spec.horizon != mpc.horizon:
            raise ConfigError(f"{spec.path}: problem has horizon {mpc.horizon}, config says {spec.horizon}")
        return mpc.relaxed() if not spec.integer else mpc
    params = PlantParams.from_dict(spec.plant) if spec.plant else PlantParams()
    if spec.relax_min_capacity:
        params = relax_min_capacity(params)
    if spec.source == "csv":
        series = load_timeseries_csv(spec.path)
        if spec.horizon is not None:
            if spec.horizon > len(series):
                raise ConfigError(f"{spec.path}: has {len(series)} rows, horizon {spec.horizon} requested")
            series = series.head(spec.horizon)
    else:
        profile = SynthProfile(**spec.profile) if spec.profile else SynthProfile()
        series = synth_timeseries(spec.seed, spec.horizon or DEFAULT_HORIZON, profile)
    return build_hvac_mpc(params, series, integer=spec.integer)


def problem_summary(mpc: MpcProblem) -> dict:
    try:
        sc = structure_counts(mpc)
        return {"horizon": sc.horizon, "variables": sc.variables, "binaries": sc.binaries, "rows": sc.rows,
                "rows_reported": sc.rows_reported, "variables_reported": sc.variables_reported}
    except Exception:  # pragma: no cover - structure_counts is generic, kept defensive for odd inputs
        ext = build_extensive_form(mpc)
        return {"horizon": mpc.horizon, "variables": ext.milp.lp.num_vars,
                "binaries": int(ext.milp.binary_mask.sum()), "rows": ext.milp.lp.num_rows}


# ---------------------------------------------------------------------------
# artifacts


def _jsonable(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None if math.isnan(v) else ("inf" if v > 0 else "-inf")
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.generic):
        return _jsonable(v.item())
    return v


def write_json(path: Path, doc: dict) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(_jsonable(doc), fh, indent=1, sort_keys=False)
        fh.write("\n")


def soc_csv_text(mpc: MpcProblem, columns: dict, meta: Optional[dict] = None) -> str:
    """State trajectories side by side: ``t`` then ``<label>_<state>`` per trajectory."""
    names = mpc.state_names or tuple(f"x{i}" for i in range(mpc.num_states))
    buf = io.StringIO()
    buf.write(meta_comment(meta))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t"] + [f"{label}_{n}" for label in columns for n in names])
    for t in range(mpc.horizon + 1):
        row = [t]
        for traj in columns.values():
            row += [repr(float(v)) for v in traj.x[t]]
        w.writerow(row)
    return buf.getvalue()


def _write_text(path: Path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


@dataclass
class ExtensiveResult:
    status: str
    objective: float
    bound: float
    nodes: int
    solve_time: float
    trajectory: Optional[Trajectory]
    solution: Optional[MilpSolution] = None

    def to_dict(self) -> dict:
        return {"status": self.status, "objective": self.objective, "bound": self.bound,
                "gap": gap_of(self.objective, self.bound), "nodes": self.nodes, "solve_time": self.solve_time}


def solve_extensive(mpc: MpcProblem, spec: ExtensiveSpec, elastic=None) -> ExtensiveResult:
    ext = build_extensive_form(mpc, elastic)
    t0 = time.perf_counter()
    sol = solve_milp(ext.milp, spec.options())
    dt = time.perf_counter() - t0
    traj = ext.trajectory(sol.primal) if sol.has_solution else None
    return ExtensiveResult(sol.status.value, sol.objective, sol.bound, sol.nodes, dt, traj, sol)


@dataclass
class ComparisonReport:
    extensive: Optional[dict]
    ddip: Optional[dict]
    bound_trace: list
    optimality_gap: Optional[float]

    @classmethod
    def build(cls, ext: Optional[ExtensiveResult], run: Optional[DdipRun]) -> "ComparisonReport":
        ddip = trace = None
        if run is not None:
            ddip = {"best_ub": run.best_ub, "lb": run.lb, "gap": gap_of(run.best_ub, run.lb),
                    "iterations": len(run.iterations), "solve_time": run.wall_time, "status": run.final_status}
            trace = [{"k": it.k, "ub": it.ub, "lb": it.lb, "best_ub": it.best_ub, "gap": gap_of(it.best_ub, it.lb)}
                     for it in run.iterations]
        opt_gap = None
        if ext is not None and run is not None and math.isfinite(ext.objective) and math.isfinite(run.best_ub):
            opt_gap = (run.best_ub - ext.objective) / max(1.0, abs(ext.objective))
        return cls(ext.to_dict() if ext is not None else None, ddip, trace or [], opt_gap)

    def to_dict(self) -> dict:
        return {"extensive": self.extensive, "ddip": self.ddip, "optimality_gap": self.optimality_gap,
                "bound_trace": self.bound_trace}


# ---------------------------------------------------------------------------
# verbs


def output_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_build(cfg: RunConfig, out=sys.stdout) -> int:
    mpc = build_instance(cfg.instance)
    d = output_dir(cfg)
    path = d / "problem.json"
    save_mpc(mpc, path)
    summary = {"problem": str(path), **problem_summary(mpc), **cfg.meta()}
    print(json.dumps(summary), file=out)
    return EXIT_OK


def cmd_solve(cfg: RunConfig, out=sys.stdout) -> int:
    mpc = build_instance(cfg.instance)
    d = output_dir(cfg)
    meta = cfg.meta()
    ext = run = None
    if cfg.solver in ("extensive", "both"):
        ext = solve_extensive(mpc, cfg.extensive, cfg.ddip.elastic)
        if ext.status == MilpStatus.INFEASIBLE.value:
            raise SolverError("extensive form is infeasible")
        write_json(d / "extensive.json", {**ext.to_dict(), **meta})
    if cfg.solver in ("ddip", "both"):
        run = run_ddip(mpc, cfg.ddip)
        write_run_json(run, d / "ddip_run.json", extra=meta)
        write_bounds_csv(run, d / "bounds.csv", meta)
    columns = {}
    if ext is not None and ext.trajectory is not None:
        columns["extensive"] = ext.trajectory
    if run is not None and run.best_trajectory is not None:
        columns["ddip"] = run.best_trajectory
    if run is not None and run.first_trajectory is not None:
        columns["ddip_iter1"] = run.first_trajectory
    if columns:
        _write_text(d / "soc.csv", soc_csv_text(mpc, columns, meta))
    report = ComparisonReport.build(ext, run)
    if ext is not None and run is not None:
        write_json(d / "comparison.json", {**report.to_dict(), **meta})
    print(json.dumps(_jsonable({"output_dir": str(d), "extensive": report.extensive, "ddip": report.ddip,
                                "optimality_gap": report.optimality_gap})), file=out)
    if run is not None and not run.converged:
        return EXIT_LIMIT
    if ext is not None and ext.status == MilpStatus.NODE_LIMIT.value:
        return EXIT_LIMIT
    return EXIT_OK


def enumerate_optima(milp, opts: MilpOptions, count: int, tolerance: float) -> list[MilpSolution]:
    """Up to ``count`` solutions with distinct binary patterns within ``tolerance`` of the optimum.

    Each round excludes the previous binary pattern with a no-good row and
    re-solves; enumeration stops at the first objective outside the window or
    when the problem becomes infeasible.
    """
    found: list[MilpSolution] = []
    problem = milp
    best = None
    for _ in range(count):
        sol = solve_milp(problem, opts)
        if not sol.has_solution:
            break
        if best is None:
            best = sol.objective
        elif sol.objective - best > tolerance * max(1.0, abs(best)):
            break
        found.append(sol)
        if problem.binary_mask.sum() == 0:
            break
        problem = add_no_good_cut(problem, sol.primal)
    return found


def cmd_enumerate_optima(cfg: RunConfig, out=sys.stdout) -> int:
    mpc = build_instance(cfg.instance)
    d = output_dir(cfg)
    meta = cfg.meta()
    ext = build_extensive_form(mpc, cfg.ddip.elastic)
    if ext.milp.binary_mask.sum() == 0:
        raise ConfigError("instance has no binary variables to enumerate")
    sols = enumerate_optima(ext.milp, cfg.extensive.options(), cfg.count, cfg.optimum_tolerance)
    if not sols:
        raise SolverError("extensive form has no feasible solution")
    binaries = np.nonzero(ext.milp.binary_mask)[0]
    listing = []
    for i, sol in enumerate(sols):
        traj = ext.trajectory(sol.primal)
        name = f"soc_{i}.csv"
        _write_text(d / name, soc_csv_text(mpc, {f"solution{i}": traj}, meta))
        listing.append({"index": i, "objective": sol.objective, "status": sol.status.value, "soc_csv": name,
                        "binary_pattern": "".join("1" if v > 0.5 else "0" for v in sol.primal[binaries])})
    doc = {"count_requested": cfg.count, "tolerance": cfg.optimum_tolerance, "solutions": listing, **meta}
    write_json(d / "optima.json", doc)
    print(json.dumps(_jsonable({"output_dir": str(d), "found": len(sols),
                                "objectives": [s.objective for s in sols]})), file=out)
    return EXIT_OK


SCALING_HEADER = ("N", "variables", "binaries", "rows", "rows_reported", "extensive_time", "extensive_objective",
                  "ddip_time", "ddip_iterations", "ddip_best_ub", "ddip_lb", "gap", "status", "error")


def scaling_rows(cfg: RunConfig, horizons: Sequence[int]) -> list[dict]:
    rows = []
    for N in horizons:
        row = {k: "" for k in SCALING_HEADER}
        row["N"] = N
        try:
            mpc = build_instance(replace(cfg.instance, horizon=int(N)))
            summary = problem_summary(mpc)
            for k in ("variables", "binaries", "rows", "rows_reported"):
                row[k] = summary.get(k, "")
            if cfg.solver in ("extensive", "both"):
                if summary["binaries"] > cfg.max_extensive_binaries:
                    row["extensive_time"] = row["extensive_objective"] = "skipped"
                else:
                    ext = solve_extensive(mpc, cfg.extensive, cfg.ddip.elastic)
                    row["extensive_time"] = repr(ext.solve_time)
                    row["extensive_objective"] = repr(ext.objective)
            if cfg.solver in ("ddip", "both"):
                run = run_ddip(mpc, cfg.ddip)
                row.update(ddip_time=repr(run.wall_time), ddip_iterations=len(run.iterations),
                           ddip_best_ub=repr(run.best_ub), ddip_lb=repr(run.lb),
                           gap=repr(gap_of(run.best_ub, run.lb)), status=run.final_status)
        except Exception as exc:  # per-row failures are recorded and the sweep continues
            row["status"] = "error"
            row["error"] = f"{type(exc).__name__}: {exc}"
        rows.append(row)
    return rows


def cmd_scaling(cfg: RunConfig, out=sys.stdout) -> int:
    d = output_dir(cfg)
    rows = scaling_rows(cfg, cfg.horizons)
    buf = io.StringIO()
    buf.write(meta_comment(cfg.meta()))
    w = csv.DictWriter(buf, fieldnames=SCALING_HEADER, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    _write_text(d / "scaling.csv", buf.getvalue())
    print(json.dumps({"output_dir": str(d), "rows": len(rows),
                      "errors": sum(r["status"] == "error" for r in rows)}), file=out)
    return EXIT_OK


VERBS = {"build": cmd_build, "solve": cmd_solve, "enumerate-optima": cmd_enumerate_optima, "scaling": cmd_scaling}


# ---------------------------------------------------------------------------
# argument handling


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ddip", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="verb", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="JSON run configuration (defaults apply when omitted)")
        p.add_argument("--output-dir", help=f"artifact directory (overrides ${OUTPUT_ENV} and the config)")
        p.add_argument("--source", choices=SOURCES, help="instance source")
        p.add_argument("--seed", type=int, help="synthetic data seed")
        p.add_argument("--horizon", type=int, help="number of timesteps N")
        p.add_argument("--path", help="CSV or serialized problem path for --source csv/problem")
        p.add_argument("--toy", choices=sorted(TOYS), help="built-in toy instance for --source toy")
        p.add_argument("--lp", action="store_true", help="drop integrality (LP relaxation of the instance)")
        p.add_argument("--relax-min-capacity", action="store_true", help="zero all minimum-capacity fractions")

    def solving(p: argparse.ArgumentParser) -> None:
        p.add_argument("--solver", choices=SOLVERS, help="which solver(s) to run")
        p.add_argument("--stages", type=int, help="number of DDIP stages (uniform partition)")
        p.add_argument("--epsilon", type=float, help="DDIP convergence tolerance on the relative gap")
        p.add_argument("--max-iterations", type=int, help="DDIP iteration limit")
        p.add_argument("--backward-mode", choices=("sequential", "parallel"), help="DDIP backward sweep mode")
        p.add_argument("--parallelism", type=int, help="worker threads for the parallel backward sweep")
        p.add_argument("--node-limit", type=int, help="extensive-form branch-and-bound node cap")
        p.add_argument("--time-limit", type=float, help="extensive-form time cap in seconds")

    p = sub.add_parser("build", help="build an instance and write problem.json")
    common(p)
    p = sub.add_parser("solve", help="solve with the extensive form, DDIP or both and write run artifacts")
    common(p)
    solving(p)
    p = sub.add_parser("enumerate-optima", help="list alternate optima of the extensive form via no-good rows")
    common(p)
    solving(p)
    p.add_argument("--count", type=int, help="maximum number of solutions")
    p.add_argument("--tolerance", type=float, help="relative objective window around the optimum")
    p = sub.add_parser("scaling", help="tabulate model size and solve effort over horizons")
    common(p)
    solving(p)
    p.add_argument("--horizons", type=int, nargs="*", help="horizon list (overrides the config)")
    p.add_argument("--max-extensive-binaries", type=int, help="skip extensive solves above this many binaries")
    return parser


def resolve_config(args: argparse.Namespace, environ=None) -> RunConfig:
    environ = os.environ if environ is None else environ
    cfg = load_config(args.config) if args.config else RunConfig()
    inst = {}
    for flag, key in (("source", "source"), ("seed", "seed"), ("horizon", "horizon"), ("path", "path"),
                      ("toy", "toy")):
        v = getattr(args, flag, None)
        if v is not None:
            inst[key] = v
    if "toy" in inst and "source" not in inst:
        inst["source"] = "toy"
    if inst.get("source") in ("toy", "synthetic") and "path" not in inst:
        inst["path"] = None
    if inst.get("source") not in (None, "toy"):
        inst["toy"] = None
    if getattr(args, "lp", False):
        inst["integer"] = False
    if getattr(args, "relax_min_capacity", False):
        inst["relax_min_capacity"] = True
    ddip = {}
    for flag, key in (("stages", "num_stages"), ("epsilon", "epsilon"), ("max_iterations", "max_iterations"),
                      ("backward_mode", "backward_mode"), ("parallelism", "parallelism")):
        v = getattr(args, flag, None)
        if v is not None:
            ddip[key] = v
    ext = {}
    for flag, key in (("node_limit", "node_limit"), ("time_limit", "time_limit")):
        v = getattr(args, flag, None)
        if v is not None:
            ext[key] = v
    top = {}
    for flag, key in (("solver", "solver"), ("count", "count"), ("tolerance", "optimum_tolerance"),
                      ("horizons", "horizons"), ("max_extensive_binaries", "max_extensive_binaries")):
        v = getattr(args, flag, None)
        if v is not None:
            top[key] = v
    if environ.get(OUTPUT_ENV):
        top["output_dir"] = environ[OUTPUT_ENV]
    if args.output_dir:
        top["output_dir"] = args.output_dir
    try:
        if inst:
            top["instance"] = replace(cfg.instance, **inst)
        if ddip:
            top["ddip"] = replace(cfg.ddip, **ddip)
        if ext:
            top["extensive"] = replace(cfg.extensive, **ext)
        return replace(cfg, **top)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _error(kind: str, message: str, err=sys.stderr, **extra) -> None:
    print(json.dumps({"error": kind, "message": message, **extra}), file=err)


def main(argv: Optional[Sequence[str]] = None, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors and 0 on --help
        return int(exc.code or 0)
    try:
        cfg = resolve_config(args)
        return VERBS[args.verb](cfg, out)
    except DdipInfeasibleError as exc:
        _error("stage-infeasible", str(exc), err, stage=exc.stage, sweep=exc.sweep)
        return EXIT_SOLVER
    except (DdipNumericError, SolverError) as exc:
        _error("solver", str(exc), err)
        return EXIT_SOLVER
    except (ConfigError, PlantInputError, ModelInputError, MilpInputError) as exc:
        _error("input", str(exc), err)
        return EXIT_INPUT
    except OSError as exc:
        _error("io", f"{exc.filename or ''}: {exc.strerror or exc}", err)
        return EXIT_INPUT


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
