"""Deterministic dual dynamic integer programming for mixed-integer MPC."""

__version__ = "0.1.0"

from .lp_core import LpOptions, LpProblem, LpSolution, LpStatus, solve_lp, solve_lp_warm
from .milp_bb import MilpOptions, MilpProblem, MilpSolution, MilpStatus, add_no_good_cut, relax, solve_milp
from .mpc_model import (
    ElasticConfig,
    MpcProblem,
    RowBlock,
    StageBlock,
    build_extensive_form,
    build_stage_subproblem,
    load_mpc,
    partition_uniform,
    save_mpc,
)
from .engine import BendersCut, CutPool, DdipConfig, DdipRun, audit_cut_validity, audit_pool, run_ddip
from .hvac_plant import PlantParams, PlantTimeSeries, SynthProfile, build_hvac_mpc, synth_timeseries

__all__ = [
    "__version__",
    "LpOptions", "LpProblem", "LpSolution", "LpStatus", "solve_lp", "solve_lp_warm",
    "MilpOptions", "MilpProblem", "MilpSolution", "MilpStatus", "add_no_good_cut", "relax", "solve_milp",
    "ElasticConfig", "MpcProblem", "RowBlock", "StageBlock", "build_extensive_form", "build_stage_subproblem",
    "load_mpc", "partition_uniform", "save_mpc",
    "BendersCut", "CutPool", "DdipConfig", "DdipRun", "audit_cut_validity", "audit_pool", "run_ddip",
    "PlantParams", "PlantTimeSeries", "SynthProfile", "build_hvac_mpc", "synth_timeseries",
]
