"""First-iteration myopia on the storage toy: iteration 1 ignores the future demand.

Prints the bound trace and the gap of every iterate to the optimum::

    python3 scripts/myopia_demo.py
"""

from ddip.engine import DdipConfig, run_ddip
from ddip.lp_core import solve_lp
from ddip.mpc_model import build_extensive_form
from ddip.toys import battery_toy


def main():
    mpc = battery_toy()
    opt = solve_lp(build_extensive_form(mpc).milp.lp).objective
    run = run_ddip(mpc, DdipConfig(record_trajectories=True))
    print(f"optimum {opt:g}")
    print("k  ub        best_ub   lb        gap-to-optimum  stored energy")
    for it in run.iterations:
        print(f"{it.k:<2d} {it.ub:<9.4g} {it.best_ub:<9.4g} {it.lb:<9.4g} {(it.best_ub - opt) / opt:>13.2%}  "
              f"{it.trajectory.x[:, 0].round(3).tolist()}")


if __name__ == "__main__":
    main()
