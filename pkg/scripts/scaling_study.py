"""Wall time and iteration counts of DDIP over horizons N, 2N, 4N, ... on compact-plant MILPs.

    python3 scripts/scaling_study.py --horizons 24 48 96 192 --out runs/scaling
"""

import argparse
import csv
from pathlib import Path

from ddip.engine import DdipConfig, run_ddip
from ddip.hvac_plant import PlantParams, build_hvac_mpc, structure_counts, synth_timeseries

from milp_comparison import COMPACT


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--seed", type=int, default=4)
    ap.add_argument("--horizons", type=int, nargs="+", default=[24, 48, 96, 192])
    ap.add_argument("--inner-steps", type=int, default=1, help="timesteps per DDIP stage")
    ap.add_argument("--out", default="runs/scaling")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    params = PlantParams.from_dict(COMPACT)
    rows = []
    for N in args.horizons:
        mpc = build_hvac_mpc(params, synth_timeseries(args.seed, N))
        sc = structure_counts(mpc)
        run = run_ddip(mpc, DdipConfig(num_stages=N // args.inner_steps))
        rows.append({"N": N, "binaries": sc.binaries, "rows_reported": sc.rows_reported,
                     "iterations": len(run.iterations), "time": run.wall_time, "gap": run.gap,
                     "status": run.final_status})
        print(rows[-1])
    for a in rows:
        for b in rows:
            if b["N"] == 4 * a["N"]:
                print(f"N={a['N']} -> {b['N']}: time ratio {b['time'] / a['time']:.2f}")
    with open(out / "scaling.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


if __name__ == "__main__":
    main()
