"""Central HVAC plant scheduling benchmark as a state-space MILP.

Plant: chillers (cs), heat-recovery chillers (hrc), hot water generators (hwg),
cooling towers (ct) and one dump heat exchanger (hx), plus chilled- and
hot-water storage tanks whose energy levels ``E_cw, E_hw`` are the states.

Per timestep the controls are, in column order::

    Y[20]  on/off per unit            (binary)
    p[20]  per-unit load               kW
    P[5]   subplant totals cs,hrc,hwg,ct,hx
    r[3]   purchased electricity, water, natural gas
    S[2]   storage discharge rates cw, hw (negative = charging)
    U[2]   unmet chilled / hot water load

and 51 rows: two-sided unit operating bounds (40), subplant totals (5),
purchase definitions (3), condenser balance (1), chilled and hot water
balances (2). Storage dynamics are ``E_{t+1} = E_t - S_t``. The baseline
electricity bill ``pi_e * L_e`` is subtracted through the constant cost term.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np

from .mpc_model import MpcProblem, RowBlock, build_extensive_form

CLASSES = ("cs", "hrc", "hwg", "ct", "hx")
CSV_HEADER = ("t", "pi_e", "L_e", "L_cw", "L_hw")


class PlantInputError(ValueError):
    pass


@dataclass(frozen=True)
class PlantParams:
    """Equipment data. Capacities, conversion factors and penalties are
    placeholder defaults sized for the synthetic load generator; unit counts,
    minimum-load fractions and water/gas prices follow the benchmark plant."""

    units: dict = field(default_factory=lambda: {"cs": 4, "hrc": 3, "hwg": 3, "ct": 9, "hx": 1})
    max_load: dict = field(
        default_factory=lambda: {"cs": 2500.0, "hrc": 1500.0, "hwg": 2000.0, "ct": 3000.0, "hx": 6000.0}
    )
    min_fraction: dict = field(default_factory=lambda: {"cs": 0.5, "hrc": 0.8, "hwg": 0.5, "ct": 0.5, "hx": 0.0})
    alpha_e: dict = field(default_factory=lambda: {"cs": 0.18, "hrc": 0.25, "hwg": 0.02, "ct": 0.02})
    alpha_w_ct: float = 0.5  # gal per kW condenser water
    alpha_ng_hwg: float = 1.25
    alpha_cond_cs: float = 1.18
    alpha_h_hrc: float = 1.25
    storage_capacity: dict = field(default_factory=lambda: {"cw": 20000.0, "hw": 20000.0})
    storage_rate: dict = field(default_factory=lambda: {"cw": 5000.0, "hw": 5000.0})
    initial_fraction: dict = field(default_factory=lambda: {"cw": 0.5, "hw": 0.5})
    price_water: float = 0.009  # $/gal
    price_gas: float = 0.018  # $/kWh
    penalty: dict = field(default_factory=lambda: {"cw": 10.0, "hw": 10.0})
    cyclic_storage: bool = False

    def __post_init__(self):
        for cls in CLASSES:
            if self.units.get(cls, 0) < 1:
                raise PlantInputError(f"unit count for {cls} must be positive")
            if self.max_load.get(cls, -1) < 0:
                raise PlantInputError(f"max load for {cls} must be nonnegative")
            beta = self.min_fraction.get(cls, -1)
            if not 0.0 <= beta <= 1.0:
                raise PlantInputError(f"minimum load fraction for {cls} must lie in [0, 1]")
        scalars = [self.alpha_w_ct, self.alpha_ng_hwg, self.alpha_cond_cs, self.alpha_h_hrc,
                   self.price_water, self.price_gas]
        nested = [*self.alpha_e.values(), *self.storage_capacity.values(), *self.storage_rate.values(),
                  *self.penalty.values()]
        if any(v < 0 for v in scalars + nested):
            raise PlantInputError("plant coefficients must be nonnegative")
        for j in ("cw", "hw"):
            if not 0.0 <= self.initial_fraction[j] <= 1.0:
                raise PlantInputError("initial storage fraction must lie in [0, 1]")

    @property
    def num_units(self) -> int:
        return sum(self.units[c] for c in CLASSES)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PlantParams":
        base = cls()
        merged = {}
        for k, v in d.items():
            if not hasattr(base, k):
                raise PlantInputError(f"unknown plant parameter {k!r}")
            cur = getattr(base, k)
            merged[k] = {**cur, **v} if isinstance(cur, dict) else v
        return replace(base, **merged)


def load_params(path) -> PlantParams:
    with open(path, encoding="utf-8") as fh:
        return PlantParams.from_dict(json.load(fh))


def relax_min_capacity(params: PlantParams) -> PlantParams:
    """Every unit may run at any load in [0, max] when on."""
    return replace(params, min_fraction={c: 0.0 for c in CLASSES})


@dataclass(frozen=True, eq=False)
class PlantTimeSeries:
    pi_e: np.ndarray
    L_e: np.ndarray
    L_cw: np.ndarray
    L_hw: np.ndarray

    def __post_init__(self):
        arrays = [np.array(getattr(self, k), dtype=float).ravel() for k in ("pi_e", "L_e", "L_cw", "L_hw")]
        n = arrays[0].size
        if any(a.size != n for a in arrays):
            raise PlantInputError("time series must all have the same length")
        if not all(np.all(np.isfinite(a)) for a in arrays):
            raise PlantInputError("time series must be finite")
        for name, a in zip(("L_e", "L_cw", "L_hw"), arrays[1:]):
            if np.any(a < 0):
                raise PlantInputError(f"{name} has a negative load at t={int(np.argmax(a < 0))}")
        for k, a in zip(("pi_e", "L_e", "L_cw", "L_hw"), arrays):
            a.setflags(write=False)
            object.__setattr__(self, k, a)

    def __len__(self) -> int:
        return self.pi_e.size

    def head(self, n: int) -> "PlantTimeSeries":
        return PlantTimeSeries(self.pi_e[:n], self.L_e[:n], self.L_cw[:n], self.L_hw[:n])


def load_timeseries_csv(path) -> PlantTimeSeries:
    """Read a ``t,pi_e,L_e,L_cw,L_hw`` file (one row per hour)."""
    cols = {k: [] for k in CSV_HEADER[1:]}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise PlantInputError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        missing = [h for h in CSV_HEADER if h not in header]
        if missing:
            raise PlantInputError(f"{path}: missing column(s) {', '.join(missing)}")
        pos = {h: header.index(h) for h in CSV_HEADER}
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            datarow = lineno - 1
            for key in CSV_HEADER[1:]:
                try:
                    val = float(row[pos[key]])
                except (IndexError, ValueError):
                    raise PlantInputError(f"{path}: row {datarow}: non-numeric or missing {key}") from None
                if not math.isfinite(val):
                    raise PlantInputError(f"{path}: row {datarow}: {key} is not finite")
                if key != "pi_e" and val < 0:
                    raise PlantInputError(f"{path}: row {datarow}: negative load {key}={val}")
                cols[key].append(val)
    if not cols["pi_e"]:
        raise PlantInputError(f"{path}: no data rows")
    return PlantTimeSeries(**{k: np.array(v) for k, v in cols.items()})


def write_timeseries_csv(series: PlantTimeSeries, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for t in range(len(series)):
            writer.writerow([t] + [repr(float(getattr(series, k)[t])) for k in CSV_HEADER[1:]])


@dataclass(frozen=True)
class SynthProfile:
    """Coefficients of the synthetic load/price generator.

    With ``d = start_day + t/24`` (day of year) and ``h = t mod 24``::

        L_cw = cw_mean + cw_season*cos(2pi(d - cw_peak_day)/365) + cw_daily*cos(2pi(h - cw_peak_hour)/24) + cw_noise*e
        L_hw = hw_mean + hw_season*cos(2pi(d - hw_peak_day)/365) + hw_daily*cos(2pi(h - hw_peak_hour)/24) + hw_noise*e
        L_e  = e_mean  + e_daily*cos(2pi(h - e_peak_hour)/24) + e_noise*e
        pi_e = price_mean + price_daily*cos(2pi(h - price_peak_hour)/24)
               + price_weekly*cos(2pi d/7) + price_noise*e

    where each ``e`` is an independent standard normal draw. Loads are clipped
    at zero and prices at ``price_floor``.
    """

    start_day: float = 196.0  # mid July
    cw_mean: float = 4000.0
    cw_season: float = 2500.0
    cw_peak_day: float = 200.0
    cw_daily: float = 2000.0
    cw_peak_hour: float = 15.0
    cw_noise: float = 150.0
    hw_mean: float = 2500.0
    hw_season: float = 1200.0
    hw_peak_day: float = 15.0
    hw_daily: float = 500.0
    hw_peak_hour: float = 6.0
    hw_noise: float = 80.0
    e_mean: float = 8000.0
    e_daily: float = 2000.0
    e_peak_hour: float = 14.0
    e_noise: float = 200.0
    price_mean: float = 0.06
    price_daily: float = 0.03
    price_peak_hour: float = 16.0
    price_weekly: float = 0.005
    price_noise: float = 0.004
    price_floor: float = 0.0

    def cw_band(self, day: float) -> tuple[float, float]:
        """Deterministic seasonal level of L_cw on ``day``."""
        return self.cw_mean + self.cw_season * math.cos(2 * math.pi * (day - self.cw_peak_day) / 365.0)


def synth_timeseries(seed: int, N: int, profile: Optional[SynthProfile] = None) -> PlantTimeSeries:
    """Seeded synthetic disturbances following the ``SynthProfile`` formula."""
    prof = profile or SynthProfile()
    rng = np.random.default_rng(seed)
    t = np.arange(N, dtype=float)
    d = prof.start_day + t / 24.0
    h = np.mod(t, 24.0)
    two_pi = 2.0 * np.pi
    noise = rng.standard_normal((N, 4)).T  # row-major draw: a longer series extends a shorter one
    L_cw = (prof.cw_mean + prof.cw_season * np.cos(two_pi * (d - prof.cw_peak_day) / 365.0)
            + prof.cw_daily * np.cos(two_pi * (h - prof.cw_peak_hour) / 24.0) + prof.cw_noise * noise[0])
    L_hw = (prof.hw_mean + prof.hw_season * np.cos(two_pi * (d - prof.hw_peak_day) / 365.0)
            + prof.hw_daily * np.cos(two_pi * (h - prof.hw_peak_hour) / 24.0) + prof.hw_noise * noise[1])
    L_e = prof.e_mean + prof.e_daily * np.cos(two_pi * (h - prof.e_peak_hour) / 24.0) + prof.e_noise * noise[2]
    pi_e = (prof.price_mean + prof.price_daily * np.cos(two_pi * (h - prof.price_peak_hour) / 24.0)
            + prof.price_weekly * np.cos(two_pi * d / 7.0) + prof.price_noise * noise[3])
    return PlantTimeSeries(
        np.maximum(pi_e, prof.price_floor), np.maximum(L_e, 0.0), np.maximum(L_cw, 0.0), np.maximum(L_hw, 0.0)
    )


# ---------------------------------------------------------------------------
# model


@dataclass(frozen=True)
class PlantLayout:
    """Column positions inside one timestep's control vector."""

    units: dict

    def _offsets(self):
        off, start = {}, 0
        for c in CLASSES:
            off[c] = (start, start + self.units[c])
            start += self.units[c]
        return off, start

    @property
    def num_units(self) -> int:
        return self._offsets()[1]

    def Y(self, cls: str) -> range:
        a, b = self._offsets()[0][cls]
        return range(a, b)

    def p(self, cls: str) -> range:
        a, b = self._offsets()[0][cls]
        n = self.num_units
        return range(n + a, n + b)

    def P(self, cls: str) -> int:
        return 2 * self.num_units + CLASSES.index(cls)

    def r(self, kind: str) -> int:
        return 2 * self.num_units + 5 + ("e", "w", "ng").index(kind)

    def S(self, tank: str) -> int:
        return 2 * self.num_units + 8 + ("cw", "hw").index(tank)

    def U(self, tank: str) -> int:
        return 2 * self.num_units + 10 + ("cw", "hw").index(tank)

    @property
    def num_controls(self) -> int:
        return 2 * self.num_units + 12

    def names(self) -> list[str]:
        names = []
        for c in CLASSES:
            names += [f"Y_{c}{k + 1}" for k in range(self.units[c])]
        for c in CLASSES:
            names += [f"p_{c}{k + 1}" for k in range(self.units[c])]
        names += [f"P_{c}" for c in CLASSES]
        names += ["r_e", "r_w", "r_ng", "S_cw", "S_hw", "U_cw", "U_hw"]
        return names


ROW_LOAD_CW = -2  # position of the chilled water balance in the row block
ROW_LOAD_HW = -1


def _row_block(params: PlantParams, lay: PlantLayout) -> RowBlock:
    nu = lay.num_controls
    rows, kinds, names = [], [], []

    def add(coefs: dict, kind: str, name: str):
        r = np.zeros(nu)
        for j, v in coefs.items():
            r[j] += v
        rows.append(r)
        kinds.append(kind)
        names.append(name)

    for c in CLASSES:
        pbar, beta = params.max_load[c], params.min_fraction[c]
        for k, (yj, pj) in enumerate(zip(lay.Y(c), lay.p(c))):
            add({pj: 1.0, yj: -beta * pbar}, "G", f"minload_{c}{k + 1}")
            add({pj: 1.0, yj: -pbar}, "L", f"maxload_{c}{k + 1}")
    for c in CLASSES:
        coefs = {lay.P(c): 1.0}
        for pj in lay.p(c):
            coefs[pj] = -1.0
        add(coefs, "E", f"total_{c}")
    add({lay.r("e"): 1.0, **{lay.P(c): -params.alpha_e[c] for c in ("cs", "hrc", "hwg", "ct")}}, "E", "elec")
    add({lay.r("w"): 1.0, lay.P("ct"): -params.alpha_w_ct}, "E", "water")
    add({lay.r("ng"): 1.0, lay.P("hwg"): -params.alpha_ng_hwg}, "E", "gas")
    add({lay.P("ct"): 1.0, lay.P("cs"): -params.alpha_cond_cs, lay.P("hx"): -1.0}, "E", "condenser")
    add({lay.P("cs"): 1.0, lay.P("hrc"): 1.0, lay.S("cw"): 1.0, lay.U("cw"): 1.0}, "E", "cw_load")
    add({lay.P("hrc"): params.alpha_h_hrc, lay.P("hwg"): 1.0, lay.P("hx"): -1.0, lay.S("hw"): 1.0,
         lay.U("hw"): 1.0}, "E", "hw_load")
    H = np.array(rows)
    return RowBlock(np.zeros((H.shape[0], 2)), H, kinds, np.zeros(H.shape[0], bool), tuple(names))


def build_hvac_mpc(params: PlantParams, series: PlantTimeSeries, integer: bool = True) -> MpcProblem:
    """State-space MILP of the plant over ``len(series)`` hourly steps."""
    N = len(series)
    if N < 1:
        raise PlantInputError("time series is empty")
    lay = PlantLayout(dict(params.units))
    nu = lay.num_controls
    nunits = lay.num_units
    blk = _row_block(params, lay)
    rhs = np.zeros((N, blk.num_rows))
    rhs[:, blk.names.index("elec")] = series.L_e
    rhs[:, blk.names.index("cw_load")] = series.L_cw
    rhs[:, blk.names.index("hw_load")] = series.L_hw

    A = np.broadcast_to(np.eye(2), (N, 2, 2))
    Bt = np.zeros((2, nu))
    Bt[0, lay.S("cw")] = -1.0
    Bt[1, lay.S("hw")] = -1.0
    B = np.broadcast_to(Bt, (N, 2, nu))

    cost_u = np.zeros((N, nu))
    cost_u[:, lay.r("e")] = series.pi_e
    cost_u[:, lay.r("w")] = params.price_water
    cost_u[:, lay.r("ng")] = params.price_gas
    cost_u[:, lay.U("cw")] = params.penalty["cw"]
    cost_u[:, lay.U("hw")] = params.penalty["hw"]
    cost_const = -series.pi_e * series.L_e

    u_lo = np.zeros(nu)
    u_up = np.full(nu, np.inf)
    u_up[:nunits] = 1.0
    for c in CLASSES:
        for pj in lay.p(c):
            u_up[pj] = params.max_load[c]
        u_up[lay.P(c)] = params.max_load[c] * params.units[c]
    for kind in ("e", "w", "ng"):
        u_lo[lay.r(kind)] = -np.inf
    for tank in ("cw", "hw"):
        u_lo[lay.S(tank)] = -params.storage_rate[tank]
        u_up[lay.S(tank)] = params.storage_rate[tank]

    Ebar = np.array([params.storage_capacity["cw"], params.storage_capacity["hw"]])
    x0 = Ebar * np.array([params.initial_fraction["cw"], params.initial_fraction["hw"]])
    x_lo = np.zeros((N + 1, 2))
    x_up = np.tile(Ebar, (N + 1, 1))
    if params.cyclic_storage:
        x_lo[N] = x0
        x_up[N] = x0
    int_mask = np.zeros(nu, bool)
    int_mask[:nunits] = integer
    return MpcProblem(
        A, B, np.zeros((N, 2)), cost_u, cost_const, x_lo, x_up,
        np.tile(u_lo, (N, 1)), np.tile(u_up, (N, 1)), x0, np.zeros(2, bool), int_mask,
        (blk,), np.zeros(N, int), tuple(rhs), ("E_cw", "E_hw"), tuple(lay.names()),
    )


def plant_layout(params: PlantParams) -> PlantLayout:
    return PlantLayout(dict(params.units))


@dataclass(frozen=True)
class StructureCounts:
    """Size of the extensive MILP.

    ``rows_reported`` counts rows the way the benchmark tables do: every
    two-sided unit bound as two rows, each storage level's bound pair as one
    row per tank and time (``2(N+1)``), and the initial condition as a single
    row, i.e. ``55N + 3`` for the default plant. ``variables`` is the column
    count of our model (``52N + 2(N+1)``); ``variables_reported`` adds one more
    ``2(N+1)`` block of storage-level columns, which reproduces the published
    totals (``56N + 4``) but is an inferred convention.
    """

    horizon: int
    variables: int
    binaries: int
    rows: int
    rows_reported: int
    variables_reported: int


def structure_counts(mpc: MpcProblem) -> StructureCounts:
    ext = build_extensive_form(mpc)
    milp = ext.milp
    lp = milp.lp
    N, n_x = mpc.horizon, mpc.num_states
    rows = lp.num_rows
    state_cols = ext.state_cols.ravel()
    bounded_states = int(np.sum(np.isfinite(lp.var_lower[state_cols]) | np.isfinite(lp.var_upper[state_cols])))
    # binaries by declared domain: integer columns with 0/1 bounds
    binaries = int(np.sum(mpc.integer_control_mask & (mpc.u_lower >= 0) & (mpc.u_upper <= 1)))
    binaries += int(np.sum(mpc.integer_state_mask & (mpc.x_lower >= 0) & (mpc.x_upper <= 1)))
    return StructureCounts(
        horizon=N,
        variables=lp.num_vars,
        binaries=binaries,
        rows=rows,
        rows_reported=rows - n_x + 1 + bounded_states,
        variables_reported=lp.num_vars + state_cols.size,
    )


def unit_commitment_violations(params: PlantParams, u: np.ndarray, tol: float = 1e-6) -> int:
    """Count (unit, t) pairs breaking ``Y=0 -> p=0`` or ``Y=1 -> beta*pbar <= p <= pbar``."""
    lay = plant_layout(params)
    bad = 0
    for c in CLASSES:
        pbar, beta = params.max_load[c], params.min_fraction[c]
        for yj, pj in zip(lay.Y(c), lay.p(c)):
            y, p = u[:, yj], u[:, pj]
            off = y < 0.5
            bad += int(np.sum(off & (np.abs(p) > tol * max(1.0, pbar))))
            bad += int(np.sum(~off & ((p < beta * pbar - tol * max(1.0, pbar)) | (p > pbar + tol * max(1.0, pbar)))))
    return bad
