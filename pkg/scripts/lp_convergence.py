"""DDIP on the week-long zero-minimum-capacity (LP) plant with 84 two-hour stages.

Writes the bound trace and the SOC trajectories next to the extensive-form LP
optimum, e.g.::

    python3 scripts/lp_convergence.py --out runs/lp_week
"""

import argparse
import json
import time
from pathlib import Path

from ddip.cli import soc_csv_text
from ddip.engine import DdipConfig, run_ddip, write_bounds_csv
from ddip.hvac_plant import PlantParams, build_hvac_mpc, relax_min_capacity, synth_timeseries
from ddip.lp_core import solve_lp
from ddip.mpc_model import build_extensive_form


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--horizon", type=int, default=168)
    ap.add_argument("--stages", type=int, nargs="+", default=[84])
    ap.add_argument("--out", default="runs/lp_convergence")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    mpc = build_hvac_mpc(relax_min_capacity(PlantParams()), synth_timeseries(args.seed, args.horizon), integer=False)
    ext = build_extensive_form(mpc)
    t0 = time.perf_counter()
    opt = solve_lp(ext.milp.lp)
    summary = {"extensive_objective": opt.objective, "extensive_time": time.perf_counter() - t0, "runs": []}
    for S in args.stages:
        run = run_ddip(mpc, DdipConfig(num_stages=S, max_iterations=400))
        write_bounds_csv(run, out / f"bounds_S{S}.csv")
        (out / f"soc_S{S}.csv").write_text(soc_csv_text(mpc, {
            "extensive": ext.trajectory(opt.primal), "ddip": run.best_trajectory, "ddip_iter1": run.first_trajectory}))
        rel = abs(run.best_ub - opt.objective) / abs(opt.objective)
        summary["runs"].append({"stages": S, "status": run.final_status, "iterations": len(run.iterations),
                                "best_ub": run.best_ub, "lb": run.lb, "gap": run.gap, "vs_extensive": rel,
                                "time": run.wall_time})
        print(f"S={S:4d} {run.final_status:10s} it={len(run.iterations):4d} best_ub={run.best_ub:.4f} "
              f"gap={run.gap:.2e} |ub-opt|/opt={rel:.2e} t={run.wall_time:.1f}s")
    (out / "summary.json").write_text(json.dumps(summary, indent=1) + "\n")


if __name__ == "__main__":
    main()
