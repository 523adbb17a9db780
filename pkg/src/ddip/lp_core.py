"""Dense/sparse bounded-variable simplex for small and medium linear programs.

Problems are stated as::

    min  c @ x + offset
    s.t. rows @ x  (=, <=, >=)  rhs
         lower <= x <= upper

Internally every row gets a logical variable ``s`` with ``rows @ x + s = rhs``
whose bounds encode the row kind, so the initial basis is the identity.
Row duals follow the convention ``d objective / d rhs``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, fields, replace
from typing import Optional, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

INF = np.inf

# basis status codes
BASIC = 0
AT_LOWER = 1
AT_UPPER = 2
AT_ZERO = 3  # nonbasic free variable parked at zero

_KIND_CODES = {"E": 0, "=": 0, "==": 0, "L": 1, "<=": 1, "G": 2, ">=": 2}
KIND_NAMES = ("E", "L", "G")


class LpInputError(ValueError):
    """Malformed problem data."""


class LpNumericError(RuntimeError):
    """The basis could not be factorized even after recovery."""


class LpStatus(str, enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    ITERATION_LIMIT = "iteration-limit"


def _kind_codes(kinds) -> np.ndarray:
    if isinstance(kinds, np.ndarray) and kinds.dtype.kind in "iu":
        codes = kinds.astype(np.int8)
        if codes.size and (codes.min() < 0 or codes.max() > 2):
            raise LpInputError("row kind codes must be 0 (E), 1 (L) or 2 (G)")
        return codes
    try:
        return np.array([_KIND_CODES[k] for k in kinds], dtype=np.int8)
    except KeyError as exc:
        raise LpInputError(f"unknown row kind {exc.args[0]!r}") from None


@dataclass(frozen=True, eq=False)
class LpProblem:
    """Linear program in row form. Arrays are copied and frozen on construction."""

    objective: np.ndarray
    rows: "np.ndarray | sp.spmatrix"
    row_kinds: np.ndarray
    row_rhs: np.ndarray
    var_lower: np.ndarray
    var_upper: np.ndarray
    objective_offset: float = 0.0
    var_names: Optional[Sequence[str]] = None
    row_names: Optional[Sequence[str]] = None

    def __post_init__(self):
        c = np.array(self.objective, dtype=float).ravel()
        n = c.size
        if sp.issparse(self.rows):
            rows = sp.csr_matrix(self.rows, dtype=float)
        else:
            rows = np.array(self.rows, dtype=float)
            if rows.size == 0:
                rows = rows.reshape(0, n)
            if rows.ndim != 2:
                raise LpInputError("rows must be a 2-d matrix")
        m = rows.shape[0]
        if rows.shape[1] != n:
            raise LpInputError(f"rows have {rows.shape[1]} columns, objective has {n}")
        kinds = _kind_codes(self.row_kinds)
        rhs = np.array(self.row_rhs, dtype=float).ravel()
        lo = np.array(self.var_lower, dtype=float).ravel()
        up = np.array(self.var_upper, dtype=float).ravel()
        if kinds.size != m or rhs.size != m:
            raise LpInputError(f"row_kinds/row_rhs must have length {m}")
        if lo.size != n or up.size != n:
            raise LpInputError(f"variable bounds must have length {n}")
        if np.any(lo > up):
            bad = int(np.argmax(lo > up))
            raise LpInputError(f"variable {bad}: lower bound {lo[bad]} > upper bound {up[bad]}")
        if np.any(lo == INF) or np.any(up == -INF):
            raise LpInputError("lower bounds cannot be +inf nor upper bounds -inf")
        data = rows.data if sp.issparse(rows) else rows
        if not (np.all(np.isfinite(c)) and np.all(np.isfinite(data)) and np.all(np.isfinite(rhs))):
            raise LpInputError("objective, row coefficients and rhs must be finite")
        if not np.isfinite(self.objective_offset):
            raise LpInputError("objective_offset must be finite")
        for arr in (c, kinds, rhs, lo, up):
            arr.setflags(write=False)
        if not sp.issparse(rows):
            rows.setflags(write=False)
        object.__setattr__(self, "objective", c)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "row_kinds", kinds)
        object.__setattr__(self, "row_rhs", rhs)
        object.__setattr__(self, "var_lower", lo)
        object.__setattr__(self, "var_upper", up)
        object.__setattr__(self, "objective_offset", float(self.objective_offset))

    @property
    def num_vars(self) -> int:
        return self.objective.size

    @property
    def num_rows(self) -> int:
        return self.rows.shape[0]

    def dense_rows(self) -> np.ndarray:
        return self.rows.toarray() if sp.issparse(self.rows) else np.asarray(self.rows)

    def with_bounds(self, lower=None, upper=None) -> "LpProblem":
        """Copy with new variable bounds; the (already validated) rows are shared."""
        n = self.num_vars
        lo = self.var_lower if lower is None else np.array(lower, dtype=float).ravel()
        up = self.var_upper if upper is None else np.array(upper, dtype=float).ravel()
        if lo.size != n or up.size != n:
            raise LpInputError(f"variable bounds must have length {n}")
        if np.any(lo > up):
            bad = int(np.argmax(lo > up))
            raise LpInputError(f"variable {bad}: lower bound {lo[bad]} > upper bound {up[bad]}")
        if np.any(lo == INF) or np.any(up == -INF):
            raise LpInputError("lower bounds cannot be +inf nor upper bounds -inf")
        new = object.__new__(LpProblem)
        for f in fields(self):
            object.__setattr__(new, f.name, getattr(self, f.name))
        for name, arr in (("var_lower", lo), ("var_upper", up)):
            if arr.flags.writeable:
                arr.setflags(write=False)
            object.__setattr__(new, name, arr)
        return new

    def with_rows(self, rows, kinds, rhs, names=None) -> "LpProblem":
        """Return a copy with extra rows appended at the bottom."""
        rows = np.atleast_2d(np.asarray(rows, dtype=float))
        if sp.issparse(self.rows):
            new_rows = sp.vstack([self.rows, sp.csr_matrix(rows)], format="csr")
        else:
            new_rows = np.vstack([self.rows, rows])
        row_names = None
        if self.row_names is not None:
            extra = list(names) if names is not None else [f"r{self.num_rows + i}" for i in range(rows.shape[0])]
            row_names = list(self.row_names) + extra
        return replace(
            self,
            rows=new_rows,
            row_kinds=np.concatenate([self.row_kinds, _kind_codes(kinds)]),
            row_rhs=np.concatenate([self.row_rhs, np.asarray(rhs, dtype=float).ravel()]),
            row_names=row_names,
        )

    def row_activity(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(self.rows @ np.asarray(x, dtype=float)).ravel()

    def max_violation(self, x: np.ndarray) -> float:
        """Largest violation of any row or variable bound at ``x``."""
        x = np.asarray(x, dtype=float)
        act = self.row_activity(x)
        viol = np.zeros(self.num_rows)
        eq = self.row_kinds == 0
        le = self.row_kinds == 1
        ge = self.row_kinds == 2
        viol[eq] = np.abs(act[eq] - self.row_rhs[eq])
        viol[le] = np.maximum(act[le] - self.row_rhs[le], 0.0)
        viol[ge] = np.maximum(self.row_rhs[ge] - act[ge], 0.0)
        bnd = np.maximum(np.maximum(self.var_lower - x, x - self.var_upper), 0.0)
        return float(max(viol.max(initial=0.0), bnd.max(initial=0.0)))


@dataclass(frozen=True, eq=False)
class BasisSnapshot:
    """Status of every structural and logical variable (length n + m)."""

    num_vars: int
    num_rows: int
    status: np.ndarray

    def extended(self, num_rows: int) -> "BasisSnapshot":
        """Snapshot for the same columns with extra rows whose logicals are basic."""
        extra = num_rows - self.num_rows
        if extra < 0:
            raise LpInputError("cannot shrink a basis snapshot")
        status = np.concatenate([self.status, np.full(extra, BASIC, dtype=np.int8)])
        return BasisSnapshot(self.num_vars, num_rows, status)


@dataclass(frozen=True)
class LpOptions:
    feas_tol: float = 1e-7
    opt_tol: float = 1e-7
    pivot_tol: float = 1e-9
    max_iterations: int = 100_000
    refactor_every: int = 50
    stall_threshold: int = 50
    dense_limit: int = 400


@dataclass(frozen=True, eq=False)
class LpSolution:
    status: LpStatus
    objective: float
    primal: np.ndarray
    row_duals: np.ndarray
    reduced_costs: np.ndarray
    iterations: int
    basis: Optional[BasisSnapshot] = None
    meta: dict = field(default_factory=dict)

    @property
    def optimal(self) -> bool:
        return self.status is LpStatus.OPTIMAL


# ---------------------------------------------------------------------------
# basis factorizations


class _DenseInverse:
    """Explicit basis inverse with product-form rank-one updates."""

    def __init__(self, B: np.ndarray):
        try:
            lu = scipy.linalg.lu_factor(B, check_finite=False)
        except (ValueError, np.linalg.LinAlgError) as exc:
            raise LpNumericError(str(exc)) from None
        diag = np.abs(np.diag(lu[0]))
        if diag.size and diag.min() <= 1e-11 * max(1.0, diag.max()):
            raise LpNumericError("singular basis")
        self.inv = scipy.linalg.lu_solve(lu, np.eye(B.shape[0]), check_finite=False, overwrite_b=True)

    def ftran(self, a: np.ndarray) -> np.ndarray:
        return self.inv @ a

    def btran(self, v: np.ndarray) -> np.ndarray:
        return v @ self.inv

    def row(self, r: int) -> np.ndarray:
        return self.inv[r].copy()

    def update(self, r: int, alpha: np.ndarray) -> None:
        inv = self.inv
        piv = inv[r] / alpha[r]
        col = alpha.copy()
        col[r] = 0.0
        inv -= np.outer(col, piv)
        inv[r] = piv


class _SparseLU:
    """Sparse LU of the basis with an eta file between refactorizations."""

    def __init__(self, B: sp.csc_matrix):
        try:
            self.lu = spla.splu(B, permc_spec="COLAMD")
        except RuntimeError as exc:
            raise LpNumericError(str(exc)) from None
        udiag = np.abs(self.lu.U.diagonal())
        if udiag.size and udiag.min() <= 1e-11 * max(1.0, udiag.max()):
            raise LpNumericError("singular basis")
        self.etas: list[tuple[int, np.ndarray]] = []

    def ftran(self, a: np.ndarray) -> np.ndarray:
        x = self.lu.solve(a)
        for r, eta in self.etas:
            xr = x[r] / eta[r]
            if xr != 0.0:
                x -= xr * eta
            x[r] = xr
        return x

    def btran(self, v: np.ndarray) -> np.ndarray:
        v = np.array(v, dtype=float)
        for r, eta in reversed(self.etas):
            # v_new[r] = (v[r] - sum_{i != r} v[i] eta[i]) / eta[r]
            s = v @ eta - v[r] * eta[r]
            v[r] = (v[r] - s) / eta[r]
        return self.lu.solve(v, trans="T")

    def row(self, r: int) -> np.ndarray:
        e = np.zeros(self.lu.shape[0])
        e[r] = 1.0
        return self.btran(e)

    def update(self, r: int, alpha: np.ndarray) -> None:
        self.etas.append((r, alpha.copy()))


# ---------------------------------------------------------------------------
# simplex engine


class _Simplex:
    def __init__(self, problem: LpProblem, opts: LpOptions):
        self.p = problem
        self.opts = opts
        n, m = problem.num_vars, problem.num_rows
        self.n, self.m = n, m
        self.sparse = m > opts.dense_limit
        if self.sparse:
            A = sp.csc_matrix(problem.rows)
            A.sort_indices()
            self.A = A
            self.AT = sp.csr_matrix(A.T)
        else:
            self.A = problem.dense_rows()
            self.AT = None
        self.c = np.concatenate([problem.objective, np.zeros(m)])
        lo_s = np.where(problem.row_kinds == 2, -INF, 0.0)
        up_s = np.where(problem.row_kinds == 1, INF, 0.0)
        self.lo = np.concatenate([problem.var_lower, lo_s])
        self.up = np.concatenate([problem.var_upper, up_s])
        self.b = problem.row_rhs.copy()
        self.iterations = 0
        self.pivots_since_refactor = 0
        self.degenerate_run = 0
        self.bland = False

    # -- linear algebra helpers -------------------------------------------
    def column(self, j: int) -> np.ndarray:
        if j >= self.n:
            e = np.zeros(self.m)
            e[j - self.n] = 1.0
            return e
        if self.sparse:
            A = self.A
            col = np.zeros(self.m)
            lo, hi = A.indptr[j], A.indptr[j + 1]
            col[A.indices[lo:hi]] = A.data[lo:hi]
            return col
        return self.A[:, j].copy()

    def times_rows(self, y: np.ndarray) -> np.ndarray:
        """Row vector ``y`` times [A | I]."""
        if self.sparse:
            head = self.AT @ y
        else:
            head = y @ self.A
        return np.concatenate([head, y])

    def basis_matrix(self):
        head = self.head
        if self.sparse:
            struct = head[head < self.n]
            logic = head[head >= self.n] - self.n
            pos_s = np.nonzero(head < self.n)[0]
            pos_l = np.nonzero(head >= self.n)[0]
            sub = self.A[:, struct].tocoo()
            rows = np.concatenate([sub.row, logic])
            cols = np.concatenate([pos_s[sub.col], pos_l])
            vals = np.concatenate([sub.data, np.ones(logic.size)])
            return sp.csc_matrix((vals, (rows, cols)), shape=(self.m, self.m))
        B = np.zeros((self.m, self.m))
        struct = head < self.n
        B[:, struct] = self.A[:, head[struct]]
        logic = np.nonzero(~struct)[0]
        B[head[logic] - self.n, logic] = 1.0
        return B

    def factorize(self) -> None:
        B = self.basis_matrix()
        self.F = _SparseLU(B) if self.sparse else _DenseInverse(B)
        self.pivots_since_refactor = 0

    def nonbasic_values(self) -> np.ndarray:
        x = np.zeros(self.n + self.m)
        st = self.status
        x[st == AT_LOWER] = self.lo[st == AT_LOWER]
        x[st == AT_UPPER] = self.up[st == AT_UPPER]
        return x

    def recompute_primal(self) -> None:
        x = self.nonbasic_values()
        x[self.head] = 0.0
        resid = self.b - self.times_rows_T(x)
        x[self.head] = self.F.ftran(resid)
        self.x = x

    def times_rows_T(self, x: np.ndarray) -> np.ndarray:
        """[A | I] @ x."""
        return np.asarray(self.A @ x[: self.n]).ravel() + x[self.n :]

    # -- basis setup ------------------------------------------------------
    def _default_status(self, j: int, cost: float) -> int:
        lo, up = self.lo[j], self.up[j]
        if np.isfinite(lo) and np.isfinite(up):
            return AT_UPPER if cost < 0 else AT_LOWER
        if np.isfinite(lo):
            return AT_LOWER
        if np.isfinite(up):
            return AT_UPPER
        return AT_ZERO

    def cold_basis(self) -> None:
        status = np.empty(self.n + self.m, dtype=np.int8)
        for j in range(self.n):
            status[j] = self._default_status(j, self.c[j])
        status[self.n :] = BASIC
        self.status = status
        self.head = np.arange(self.n, self.n + self.m)

    def load_basis(self, snap: BasisSnapshot) -> bool:
        if snap.num_vars != self.n or snap.num_rows > self.m:
            return False
        if snap.num_rows < self.m:
            snap = snap.extended(self.m)
        status = snap.status.astype(np.int8).copy()
        head = np.nonzero(status == BASIC)[0]
        if head.size != self.m:
            return False
        # nonbasic status must be consistent with (possibly changed) bounds
        lo_fin = np.isfinite(self.lo)
        up_fin = np.isfinite(self.up)
        bad = ((status == AT_LOWER) & ~lo_fin) | ((status == AT_UPPER) & ~up_fin) | (
            (status == AT_ZERO) & (lo_fin | up_fin)
        )
        for j in np.nonzero(bad)[0]:
            status[j] = self._default_status(j, self.c[j])
        self.status = status
        self.head = head
        return True

    def snapshot(self) -> BasisSnapshot:
        return BasisSnapshot(self.n, self.m, self.status.copy())

    # -- pricing ----------------------------------------------------------
    def duals(self, cost: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        y = self.F.btran(cost[self.head])
        d = cost - self.times_rows(y)
        d[self.head] = 0.0
        return y, d

    def infeasibility(self) -> np.ndarray:
        xb = self.x[self.head]
        tol = self.opts.feas_tol
        below = self.lo[self.head] - xb
        above = xb - self.up[self.head]
        inf = np.zeros(self.m)
        inf[below > tol] = below[below > tol]
        inf[above > tol] = above[above > tol]
        return inf

    def _choose_entering(self, d: np.ndarray) -> tuple[int, float]:
        tol = self.opts.opt_tol
        st = self.status
        score = np.zeros_like(d)
        at_lo = (st == AT_LOWER) & (d < -tol)
        at_up = (st == AT_UPPER) & (d > tol)
        free = (st == AT_ZERO) & (np.abs(d) > tol)
        # fixed variables never enter
        fixed = self.lo == self.up
        elig = (at_lo | at_up | free) & ~fixed
        if not elig.any():
            return -1, 0.0
        if self.bland:
            q = int(np.argmax(elig))
        else:
            score[elig] = np.abs(d[elig])
            q = int(np.argmax(score))
        direction = 1.0 if d[q] < 0 else -1.0
        return q, direction

    # -- primal simplex -------------------------------------------------------
    def primal(self, phase1: bool) -> str:
        """Run primal simplex; returns 'optimal', 'unbounded', 'infeasible', 'limit'."""
        opts = self.opts
        while True:
            if self.iterations >= opts.max_iterations:
                return "limit"
            if phase1:
                inf = self.infeasibility()
                if not inf.any():
                    return "optimal"
                xb = self.x[self.head]
                cost = np.zeros(self.n + self.m)
                cb = np.zeros(self.m)
                cb[(self.lo[self.head] - xb) > opts.feas_tol] = -1.0
                cb[(xb - self.up[self.head]) > opts.feas_tol] = 1.0
                cost[self.head] = cb
            else:
                cost = self.c
            _, d = self.duals(cost)
            q, direction = self._choose_entering(d)
            if q < 0:
                return "infeasible" if phase1 else "optimal"
            alpha = self.F.ftran(self.column(q))
            r, step, leave_to = self._primal_ratio(alpha, direction, phase1)
            span = self.up[q] - self.lo[q]
            if r < 0 and not np.isfinite(span):
                return "unbounded"
            self.iterations += 1
            if r < 0 or span <= step:
                # entering variable moves to its opposite bound
                step = span
                self.x[self.head] -= direction * step * alpha
                self.x[q] += direction * step
                self.status[q] = AT_UPPER if direction > 0 else AT_LOWER
                self._track_degeneracy(step)
                continue
            self.x[self.head] -= direction * step * alpha
            self.x[q] += direction * step
            self._pivot(r, q, alpha, leave_to)
            self._track_degeneracy(step)

    def _primal_ratio(self, alpha, direction, phase1):
        tol = self.opts.feas_tol
        ptol = self.opts.pivot_tol
        head = self.head
        xb = self.x[head]
        lo = self.lo[head].copy()
        up = self.up[head].copy()
        below = above = None
        if phase1:
            below = xb < lo - tol
            above = xb > up + tol
            # infeasible basics may only travel until they become feasible
            up[below] = lo[below]
            lo[below] = -INF
            lo[above] = up[above]
            up[above] = INF
        move = -direction * alpha  # rate of change of each basic variable
        dec = move < -ptol
        inc = move > ptol
        ratio = np.full(self.m, INF)
        relaxed = np.full(self.m, INF)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio[dec] = (xb[dec] - lo[dec]) / -move[dec]
            relaxed[dec] = (xb[dec] - lo[dec] + tol) / -move[dec]
            ratio[inc] = (up[inc] - xb[inc]) / move[inc]
            relaxed[inc] = (up[inc] - xb[inc] + tol) / move[inc]
        ratio = np.maximum(ratio, 0.0)
        if not np.isfinite(relaxed).any():
            return -1, INF, 0
        if self.bland:
            tmin = ratio.min()
            cand = np.nonzero(ratio <= tmin)[0]
            r = int(cand[np.argmin(head[cand])])
        else:
            tmax = relaxed.min()
            cand = np.nonzero(ratio <= tmax)[0]
            mags = np.abs(alpha[cand])
            r = int(cand[np.argmax(mags)])
        if phase1 and below[r]:
            leave_to = AT_LOWER
        elif phase1 and above[r]:
            leave_to = AT_UPPER
        else:
            leave_to = AT_LOWER if move[r] < 0 else AT_UPPER
        return r, float(ratio[r]), leave_to

    def _pivot(self, r: int, q: int, alpha: np.ndarray, leave_to: int) -> None:
        leaving = self.head[r]
        if self.lo[leaving] == self.up[leaving] or leave_to == AT_LOWER:
            new_status = AT_LOWER if np.isfinite(self.lo[leaving]) else AT_UPPER
        else:
            new_status = AT_UPPER if np.isfinite(self.up[leaving]) else AT_LOWER
        if not np.isfinite(self.lo[leaving]) and not np.isfinite(self.up[leaving]):
            new_status = AT_ZERO
        self.status[leaving] = new_status
        self.status[q] = BASIC
        self.head[r] = q
        if new_status == AT_LOWER:
            self.x[leaving] = self.lo[leaving]
        elif new_status == AT_UPPER:
            self.x[leaving] = self.up[leaving]
        else:
            self.x[leaving] = 0.0
        self.F.update(r, alpha)
        self.pivots_since_refactor += 1
        if self.pivots_since_refactor >= self.opts.refactor_every:
            self.refactor()

    def refactor(self) -> None:
        self.factorize()
        self.recompute_primal()

    def _track_degeneracy(self, step: float) -> None:
        if step <= self.opts.feas_tol * 1e-3:
            self.degenerate_run += 1
            if self.degenerate_run >= self.opts.stall_threshold:
                self.bland = True
        else:
            self.degenerate_run = 0
            self.bland = False

    # -- dual simplex -----------------------------------------------------
    def make_dual_feasible(self) -> bool:
        """Flip boxed nonbasics to the bound matching their reduced cost sign."""
        _, d = self.duals(self.c)
        tol = self.opts.opt_tol
        st = self.status
        flipped = False
        for j in np.nonzero(st != BASIC)[0]:
            if self.lo[j] == self.up[j]:
                continue
            if st[j] == AT_LOWER and d[j] < -tol:
                if not np.isfinite(self.up[j]):
                    return False
                st[j] = AT_UPPER
                flipped = True
            elif st[j] == AT_UPPER and d[j] > tol:
                if not np.isfinite(self.lo[j]):
                    return False
                st[j] = AT_LOWER
                flipped = True
            elif st[j] == AT_ZERO and abs(d[j]) > tol:
                return False
        if flipped:
            self.recompute_primal()
        return True

    def dual(self) -> str:
        """Dual simplex from a dual feasible basis; 'optimal', 'infeasible', 'limit', 'lost'."""
        opts = self.opts
        tol = opts.feas_tol
        while True:
            if self.iterations >= opts.max_iterations:
                return "limit"
            inf = self.infeasibility()
            if not inf.any():
                return "optimal"
            if self.bland:
                cand = np.nonzero(inf)[0]
                r = int(cand[np.argmin(self.head[cand])])
            else:
                r = int(np.argmax(inf))
            leaving = self.head[r]
            xr = self.x[leaving]
            to_lower = xr < self.lo[leaving] - tol
            _, d = self.duals(self.c)
            rho = self.F.row(r)
            arow = self.times_rows(rho)
            st = self.status
            # increasing nonbasic j by t changes x_r by -arow[j] * t
            if to_lower:
                # x_r must increase
                elig_lo = (st == AT_LOWER) & (arow < -opts.pivot_tol)
                elig_up = (st == AT_UPPER) & (arow > opts.pivot_tol)
            else:
                elig_lo = (st == AT_LOWER) & (arow > opts.pivot_tol)
                elig_up = (st == AT_UPPER) & (arow < -opts.pivot_tol)
            elig_free = (st == AT_ZERO) & (np.abs(arow) > opts.pivot_tol)
            elig = (elig_lo | elig_up | elig_free) & (self.lo != self.up)
            if not elig.any():
                return "infeasible"
            idx = np.nonzero(elig)[0]
            dj = np.abs(d[idx])
            aj = np.abs(arow[idx])
            ratio = dj / aj
            if self.bland:
                q = int(idx[np.argmin(ratio)])
            else:
                tmax = ((dj + opts.opt_tol) / aj).min()
                cand = np.nonzero(ratio <= tmax)[0]
                q = int(idx[cand[np.argmax(aj[cand])]])
            alpha = self.F.ftran(self.column(q))
            if abs(alpha[r]) <= opts.pivot_tol:
                return "lost"
            target = self.lo[leaving] if to_lower else self.up[leaving]
            theta = (xr - target) / alpha[r]
            self.x[self.head] -= theta * alpha
            self.x[q] += theta
            self.iterations += 1
            self._pivot(r, q, alpha, AT_LOWER if to_lower else AT_UPPER)
            self._track_degeneracy(abs(d[q] / alpha[r]) if alpha[r] else 0.0)

    # -- driver -------------------------------------------------------------
    def run(self, warm: Optional[BasisSnapshot]) -> LpSolution:
        meta = {}
        if warm is not None:
            ok = self.load_basis(warm)
            if ok:
                try:
                    self.factorize()
                except LpNumericError:
                    ok = False
            meta["warm_start"] = ok
            if not ok:
                meta["cold_fallback"] = True
        if warm is None or not meta.get("warm_start"):
            self.cold_basis()
            self.factorize()
        self.recompute_primal()
        outcome = "optimal"
        for _attempt in range(4):
            if self.infeasibility().any():
                outcome = "lost"
                if self.make_dual_feasible():
                    outcome = self.dual()
                    meta["dual_simplex"] = True
                if outcome == "lost":
                    outcome = self.primal(phase1=True)
                if outcome in ("infeasible", "limit"):
                    break
            outcome = self.primal(phase1=False)
            if outcome != "optimal":
                break
            # a few rank-one updates are accurate enough; confirm longer runs on a fresh factorization
            if self.pivots_since_refactor > 8:
                self.refactor()
            if not self.infeasibility().any():
                break
        return self._finish(outcome, meta)

    def _finish(self, outcome: str, meta: dict) -> LpSolution:
        p = self.p
        status = {
            "optimal": LpStatus.OPTIMAL,
            "infeasible": LpStatus.INFEASIBLE,
            "unbounded": LpStatus.UNBOUNDED,
            "limit": LpStatus.ITERATION_LIMIT,
            "lost": LpStatus.ITERATION_LIMIT,
        }[outcome]
        y, d = self.duals(self.c)
        x = self.x[: self.n].copy()
        if status is LpStatus.OPTIMAL:
            x = np.clip(x, p.var_lower, p.var_upper)
        obj = float(p.objective @ x + p.objective_offset)
        return LpSolution(
            status=status,
            objective=obj,
            primal=x,
            row_duals=y,
            reduced_costs=d[: self.n].copy(),
            iterations=self.iterations,
            basis=self.snapshot(),
            meta=meta,
        )


def solve_lp(problem: LpProblem, opts: Optional[LpOptions] = None) -> LpSolution:
    """Solve ``problem`` from the all-logical basis."""
    opts = opts or LpOptions()
    if problem.num_rows == 0:
        return _solve_unconstrained(problem)
    return _run_with_recovery(problem, opts, None)


def solve_lp_warm(
    problem: LpProblem, start_basis: Optional[BasisSnapshot], opts: Optional[LpOptions] = None
) -> LpSolution:
    """Solve ``problem`` starting from ``start_basis``.

    The snapshot may come from a problem with fewer rows (rows appended later
    start with their logical basic). Incompatible snapshots fall back to a
    cold start, flagged by ``meta['cold_fallback']``.
    """
    opts = opts or LpOptions()
    if problem.num_rows == 0:
        return _solve_unconstrained(problem)
    return _run_with_recovery(problem, opts, start_basis)


def _run_with_recovery(problem, opts, warm):
    try:
        return _Simplex(problem, opts).run(warm)
    except LpNumericError:
        if warm is None:
            raise
    # warm basis went singular mid-solve: retry cold
    sol = _Simplex(problem, opts).run(None)
    sol.meta["cold_fallback"] = True
    return sol


def _solve_unconstrained(problem: LpProblem) -> LpSolution:
    c, lo, up = problem.objective, problem.var_lower, problem.var_upper
    x = np.where(c > 0, lo, np.where(c < 0, up, np.where(np.isfinite(lo), lo, np.where(np.isfinite(up), up, 0.0))))
    if not np.all(np.isfinite(x)):
        status = LpStatus.UNBOUNDED
        x = np.where(np.isfinite(x), x, 0.0)
    else:
        status = LpStatus.OPTIMAL
    return LpSolution(
        status=status,
        objective=float(c @ x + problem.objective_offset),
        primal=x,
        row_duals=np.zeros(0),
        reduced_costs=c.copy(),
        iterations=0,
        basis=BasisSnapshot(problem.num_vars, 0, np.where(c < 0, AT_UPPER, AT_LOWER).astype(np.int8)),
    )


def solve_lp_reference(problem: LpProblem) -> LpSolution:
    """Cross-check solve through SciPy's HiGHS interface.

    Independent of the simplex above; used by audits and tests as an oracle
    for problems too large for exhaustive methods.
    """
    from scipy.optimize import linprog

    A = sp.csr_matrix(problem.rows)
    kinds = problem.row_kinds
    eq = kinds == 0
    le = kinds == 1
    ge = kinds == 2
    A_ub = sp.vstack([A[le], -A[ge]], format="csr")
    b_ub = np.concatenate([problem.row_rhs[le], -problem.row_rhs[ge]])
    bounds = np.column_stack([problem.var_lower, problem.var_upper])
    res = linprog(
        problem.objective,
        A_ub=A_ub if A_ub.shape[0] else None,
        b_ub=b_ub if A_ub.shape[0] else None,
        A_eq=A[eq] if eq.any() else None,
        b_eq=problem.row_rhs[eq] if eq.any() else None,
        bounds=[(lo if np.isfinite(lo) else None, up if np.isfinite(up) else None) for lo, up in bounds],
        method="highs",
    )
    status = {0: LpStatus.OPTIMAL, 1: LpStatus.ITERATION_LIMIT, 2: LpStatus.INFEASIBLE, 3: LpStatus.UNBOUNDED}.get(
        res.status, LpStatus.ITERATION_LIMIT
    )
    m = problem.num_rows
    duals = np.zeros(m)
    if status is LpStatus.OPTIMAL:
        if eq.any():
            duals[eq] = res.eqlin.marginals
        if A_ub.shape[0]:
            mu = res.ineqlin.marginals
            nle = int(le.sum())
            duals[le] = mu[:nle]
            duals[ge] = -mu[nle:]
    x = res.x if res.x is not None else np.zeros(problem.num_vars)
    obj = float(problem.objective @ x + problem.objective_offset)
    rc = problem.objective - np.asarray(A.T @ duals).ravel()
    return LpSolution(status, obj, np.asarray(x), duals, rc, int(getattr(res, "nit", 0)), meta={"engine": "highs"})


def write_mps(problem: LpProblem, path, name: str = "DDIP") -> None:
    """Write ``problem`` in fixed-format MPS (objective offset as RHS of the objective row)."""
    n, m = problem.num_vars, problem.num_rows
    A = sp.csc_matrix(problem.rows)
    vnames = list(problem.var_names) if problem.var_names is not None else [f"C{j}" for j in range(n)]
    rnames = list(problem.row_names) if problem.row_names is not None else [f"R{i}" for i in range(m)]
    tags = {0: "E", 1: "L", 2: "G"}

    def fmt(v: float) -> str:
        return f"{v:.12g}"

    lines = [f"NAME          {name}", "ROWS", " N  COST"]
    lines += [f" {tags[int(k)]}  {rn}" for k, rn in zip(problem.row_kinds, rnames)]
    lines.append("COLUMNS")
    for j in range(n):
        entries = []
        if problem.objective[j] != 0.0:
            entries.append(("COST", problem.objective[j]))
        lo, hi = A.indptr[j], A.indptr[j + 1]
        entries += [(rnames[i], v) for i, v in zip(A.indices[lo:hi], A.data[lo:hi])]
        for rn, v in entries:
            lines.append(f"    {vnames[j]:<8}  {rn:<8}  {fmt(v):>12}")
    lines.append("RHS")
    for i in range(m):
        if problem.row_rhs[i] != 0.0:
            lines.append(f"    {'RHS':<8}  {rnames[i]:<8}  {fmt(problem.row_rhs[i]):>12}")
    if problem.objective_offset != 0.0:
        lines.append(f"    {'RHS':<8}  {'COST':<8}  {fmt(-problem.objective_offset):>12}")
    lines.append("BOUNDS")
    for j in range(n):
        lo, up = problem.var_lower[j], problem.var_upper[j]
        vn = vnames[j]
        if lo == up:
            lines.append(f" FX BND       {vn:<8}  {fmt(lo):>12}")
            continue
        if not np.isfinite(lo) and not np.isfinite(up):
            lines.append(f" FR BND       {vn:<8}")
            continue
        if not np.isfinite(lo):
            lines.append(f" MI BND       {vn:<8}")
        elif lo != 0.0:
            lines.append(f" LO BND       {vn:<8}  {fmt(lo):>12}")
        if np.isfinite(up):
            lines.append(f" UP BND       {vn:<8}  {fmt(up):>12}")
    lines.append("ENDATA")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
