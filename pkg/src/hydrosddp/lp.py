"""Dense linear programs and a bundled revised simplex solver.

Everything downstream (stage subproblems, the full-tree oracle, the CVaR
linear form) is expressed as a :class:`LinearProgram` and solved here.
The solver is a two-phase primal simplex on the bounded-variable
equality form ``A x + I s = b``, with a dense explicit basis inverse,
periodic refactorization, and a Bland's-rule fallback that engages after
a stall of degenerate pivots.

Dual convention: the reported dual ``y_i`` of row ``i`` is the
derivative of the optimal objective with respect to that row's
right-hand side (Lagrangian ``objective + sum_i y_i * (rhs_i - row_i)``).
Cut gradients can therefore be read off constraint duals directly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

LESS = "<="
EQUAL = "="
GREATER = ">="
_SENSES = (LESS, EQUAL, GREATER)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"

# Feasibility / optimality tolerances; desk-scale data is well conditioned.
TOL_FEAS = 1e-8
TOL_OPT = 1e-9
_TOL_PIVOT = 1e-10
_TOL_STEP = 1e-12
_STALL_LIMIT = 200
_REFACTOR_EVERY = 128


class LPError(Exception):
    """Base class for solver errors."""


class MalformedProgram(LPError):
    """Program data violates the LinearProgram invariants."""


class NumericalFailure(LPError):
    """Iteration guard exceeded; should not happen with anti-cycling."""


class UnknownTag(LPError):
    """Requested variable/row label does not exist."""


class NotOptimal(LPError):
    """Primal/dual values requested from a non-optimal solution."""


class LinearProgram:
    """Immutable dense minimization LP with per-variable bounds.

    Rows are ``(coefficients, sense, rhs)`` with sense in {<=, =, >=}.
    ``var_labels`` / ``row_labels`` are opaque tags used to pull primal
    and dual values out of solutions.
    """

    __slots__ = ("num_vars", "objective", "lower", "upper", "rows",
                 "senses", "rhs", "var_labels", "row_labels",
                 "_var_index", "_row_index")

    def __init__(self, objective, lower, upper, rows, senses, rhs,
                 var_labels=None, row_labels=None):
        self.objective = np.ascontiguousarray(objective, dtype=float)
        if self.objective.ndim != 1:
            raise MalformedProgram("objective must be a vector")
        self.num_vars = n = self.objective.shape[0]
        self.lower = np.ascontiguousarray(lower, dtype=float)
        self.upper = np.ascontiguousarray(upper, dtype=float)
        if self.lower.shape != (n,) or self.upper.shape != (n,):
            raise MalformedProgram("bound vectors must match num_vars")
        if np.any(self.lower > self.upper):
            raise MalformedProgram("some variable has lower > upper")
        self.senses = tuple(senses)
        m = len(self.senses)
        if isinstance(rows, np.ndarray):
            if rows.shape != (m, n):
                raise MalformedProgram(
                    f"row matrix shape {rows.shape} != ({m}, {n})")
            self.rows = np.ascontiguousarray(rows, dtype=float)
        else:
            rows = list(rows)
            if len(rows) != m:
                raise MalformedProgram("row count must match senses")
            self.rows = np.zeros((m, n))
            for i, row in enumerate(rows):
                row = np.asarray(row, dtype=float)
                if row.shape != (n,):
                    raise MalformedProgram(
                        f"row {i} has {row.size} coefficients, expected {n}")
                self.rows[i] = row
        for s in self.senses:
            if s not in _SENSES:
                raise MalformedProgram(f"unknown sense {s!r}")
        self.rhs = np.ascontiguousarray(rhs, dtype=float)
        if self.rhs.shape != (m,):
            raise MalformedProgram("rhs length must match row count")
        if not np.all(np.isfinite(self.rhs)):
            raise MalformedProgram("rhs entries must be finite")
        if not np.all(np.isfinite(self.rows)):
            raise MalformedProgram("row coefficients must be finite")
        self.var_labels = tuple(var_labels) if var_labels is not None else (None,) * n
        self.row_labels = tuple(row_labels) if row_labels is not None else (None,) * m
        if len(self.var_labels) != n or len(self.row_labels) != m:
            raise MalformedProgram("label lists must match dimensions")
        self._var_index = {t: i for i, t in enumerate(self.var_labels) if t is not None}
        self._row_index = {t: i for i, t in enumerate(self.row_labels) if t is not None}

    @property
    def num_rows(self) -> int:
        return self.rows.shape[0]


@dataclass
class LPSolution:
    """Primal/dual result of one solve. Duals valid only when optimal."""

    status: str
    objective: float
    primal: np.ndarray
    duals: np.ndarray
    var_index: dict = field(repr=False, default_factory=dict)
    row_index: dict = field(repr=False, default_factory=dict)

    def value_of(self, tag) -> float:
        if self.status != OPTIMAL:
            raise NotOptimal(f"no primal values on a {self.status} solution")
        try:
            return float(self.primal[self.var_index[tag]])
        except KeyError:
            raise UnknownTag(f"no variable tagged {tag!r}") from None

    def dual_of(self, tag) -> float:
        if self.status != OPTIMAL:
            raise NotOptimal(f"no duals on a {self.status} solution")
        try:
            return float(self.duals[self.row_index[tag]])
        except KeyError:
            raise UnknownTag(f"no row tagged {tag!r}") from None


def value_of(sol: LPSolution, tag) -> float:
    return sol.value_of(tag)


def dual_of(sol: LPSolution, tag) -> float:
    return sol.dual_of(tag)


class LPBuilder:
    """Incremental construction helper for LinearProgram instances."""

    def __init__(self):
        self._cost = []
        self._lo = []
        self._hi = []
        self._vlabels = []
        self._rows = []          # list of (indices, coefs)
        self._senses = []
        self._rhs = []
        self._rlabels = []

    def add_var(self, label=None, lower=0.0, upper=np.inf, cost=0.0) -> int:
        idx = len(self._cost)
        self._cost.append(cost)
        self._lo.append(lower)
        self._hi.append(upper)
        self._vlabels.append(label)
        return idx

    def add_row(self, coeffs, sense, rhs, label=None) -> int:
        """coeffs: iterable of (var index, coefficient) pairs."""
        idx = len(self._rhs)
        ind, val = [], []
        for j, a in coeffs:
            ind.append(j)
            val.append(a)
        self._rows.append((np.asarray(ind, dtype=np.intp),
                           np.asarray(val, dtype=float)))
        self._senses.append(sense)
        self._rhs.append(rhs)
        self._rlabels.append(label)
        return idx

    def set_cost(self, var: int, cost: float) -> None:
        self._cost[var] = cost

    def build(self) -> LinearProgram:
        n, m = len(self._cost), len(self._rhs)
        rows = np.zeros((m, n))
        for i, (ind, val) in enumerate(self._rows):
            np.add.at(rows[i], ind, val)
        return LinearProgram(self._cost, self._lo, self._hi, rows,
                             self._senses, self._rhs,
                             self._vlabels, self._rlabels)


# vstat codes
_AT_LOWER, _AT_UPPER, _FREE, _BASIC = 0, 1, 2, 3


def solve(lp: LinearProgram) -> LPSolution:
    """Solve a LinearProgram; deterministic for a fixed input.

    Returns an LPSolution whose duals follow the rhs-derivative
    convention documented at module level.
    """
    n, m = lp.num_vars, lp.num_rows

    # Equality form: [A | I][x; s] = b with slack bounds encoding senses.
    slack_lo = np.zeros(m)
    slack_hi = np.zeros(m)
    for i, s in enumerate(lp.senses):
        if s == LESS:
            slack_hi[i] = np.inf
        elif s == GREATER:
            slack_lo[i] = -np.inf
        # EQUAL keeps [0, 0]
    A = np.hstack([lp.rows, np.eye(m)]) if m else np.zeros((0, n))
    lo = np.concatenate([lp.lower, slack_lo])
    hi = np.concatenate([lp.upper, slack_hi])
    cost = np.concatenate([lp.objective, np.zeros(m)])
    b = lp.rhs.copy()

    ncols = n + m
    vstat = np.empty(ncols, dtype=np.int8)
    x = np.zeros(ncols)
    # Nonbasic structural variables sit at a finite bound, free ones at 0.
    for j in range(n):
        if np.isfinite(lo[j]):
            vstat[j], x[j] = _AT_LOWER, lo[j]
        elif np.isfinite(hi[j]):
            vstat[j], x[j] = _AT_UPPER, hi[j]
        else:
            vstat[j], x[j] = _FREE, 0.0

    resid = b - A[:, :n] @ x[:n] if m else np.zeros(0)

    # Slack basis where the residual fits the slack bounds; artificial
    # columns carry the rest so phase 1 starts feasible.
    basis = np.empty(m, dtype=np.intp)
    art_cols, art_rows = [], []
    art_data = []
    for i in range(m):
        v = min(max(resid[i], slack_lo[i]), slack_hi[i])
        gap = resid[i] - v
        if abs(gap) <= _TOL_STEP:
            basis[i] = n + i
            vstat[n + i] = _BASIC
            x[n + i] = resid[i]
        else:
            vstat[n + i] = _AT_LOWER if np.isfinite(slack_lo[i]) else _AT_UPPER
            x[n + i] = v
            art_rows.append(i)
            art_data.append(1.0 if gap > 0 else -1.0)
            art_cols.append(ncols + len(art_cols))

    n_art = len(art_cols)
    if n_art:
        A_art = np.zeros((m, n_art))
        for k, (i, sgn) in enumerate(zip(art_rows, art_data)):
            A_art[i, k] = sgn
        A = np.hstack([A, A_art])
        lo = np.concatenate([lo, np.zeros(n_art)])
        hi = np.concatenate([hi, np.full(n_art, np.inf)])
        cost = np.concatenate([cost, np.zeros(n_art)])
        vstat = np.concatenate([vstat, np.full(n_art, _BASIC, dtype=np.int8)])
        xa = np.empty(n_art)
        for k, i in enumerate(art_rows):
            xa[k] = abs(resid[i] - x[n + i])
            basis[i] = ncols + k
        x = np.concatenate([x, xa])

        phase1_cost = np.zeros(ncols + n_art)
        phase1_cost[ncols:] = 1.0
        status = _iterate(A, b, phase1_cost, lo, hi, x, vstat, basis,
                          phase1=True)
        if status != OPTIMAL:  # pragma: no cover - phase 1 is bounded below
            raise NumericalFailure("phase 1 did not terminate optimal")
        if phase1_cost[ncols:] @ np.maximum(x[ncols:], 0.0) > 1e-7 * (1.0 + abs(b).max(initial=0.0)):
            return LPSolution(INFEASIBLE, np.nan, np.full(n, np.nan),
                              np.full(m, np.nan),
                              lp._var_index, lp._row_index)
        hi[ncols:] = 0.0  # freeze artificials out of phase 2
        x[ncols:] = np.maximum(x[ncols:], 0.0)

    status = _iterate(A, b, cost, lo, hi, x, vstat, basis, phase1=False)
    if status == UNBOUNDED:
        return LPSolution(UNBOUNDED, -np.inf, np.full(n, np.nan),
                          np.full(m, np.nan), lp._var_index, lp._row_index)

    # Fresh factorization for clean duals.
    if m:
        try:
            b_inv = np.linalg.inv(A[:, basis])
        except np.linalg.LinAlgError as exc:  # pragma: no cover
            raise NumericalFailure("singular basis at termination") from exc
        duals = cost[basis] @ b_inv
    else:
        duals = np.zeros(0)
    primal = x[:n].copy()
    return LPSolution(OPTIMAL, float(lp.objective @ primal), primal, duals,
                      lp._var_index, lp._row_index)


def _iterate(A, b, cost, lo, hi, x, vstat, basis, phase1):
    """Primal simplex sweep on the equality form; mutates x/vstat/basis."""
    m = A.shape[0]
    if m == 0:
        # Only bound-feasible points; optimum is at the cheap bound of
        # each variable, reached directly or unbounded if open-ended.
        d = cost
        for j in range(A.shape[1]):
            if d[j] < -TOL_OPT and vstat[j] in (_AT_LOWER, _FREE) and not np.isfinite(hi[j]):
                return UNBOUNDED
            if d[j] > TOL_OPT and vstat[j] in (_AT_UPPER, _FREE) and not np.isfinite(lo[j]):
                return UNBOUNDED
            if d[j] < -TOL_OPT and vstat[j] == _AT_LOWER:
                x[j] = hi[j]
                vstat[j] = _AT_UPPER
            elif d[j] > TOL_OPT and vstat[j] in (_AT_UPPER, _FREE):
                x[j] = lo[j]
                vstat[j] = _AT_LOWER
        return OPTIMAL

    b_inv = np.linalg.inv(A[:, basis])
    max_iters = 10_000 + 10 * (A.shape[1] + m)
    bland = False
    stall = 0
    fixed = lo == hi

    for it in range(max_iters):
        if it and it % _REFACTOR_EVERY == 0:
            b_inv, ok = _refactor(A, b, x, vstat, basis)
            if not ok:  # pragma: no cover
                raise NumericalFailure("singular basis on refactorization")

        y = cost[basis] @ b_inv
        d = cost - y @ A
        can_inc = ((vstat == _AT_LOWER) | (vstat == _FREE)) & (d < -TOL_OPT) & ~fixed
        can_dec = ((vstat == _AT_UPPER) | (vstat == _FREE)) & (d > TOL_OPT) & ~fixed
        elig = can_inc | can_dec
        if not elig.any():
            return OPTIMAL

        if bland:
            q = int(np.flatnonzero(elig)[0])
        else:
            score = np.where(elig, np.abs(d), 0.0)
            q = int(np.argmax(score))
        sigma = 1.0 if can_inc[q] else -1.0

        w = b_inv @ A[:, q]
        xb = x[basis]
        step = sigma * w
        # Blocking ratios for basic variables pushed toward a bound.
        with np.errstate(divide="ignore", invalid="ignore"):
            ratios = np.where(step > _TOL_PIVOT, (xb - lo[basis]) / step,
                              np.where(step < -_TOL_PIVOT, (xb - hi[basis]) / step,
                                       np.inf))
        ratios = np.where(np.isnan(ratios), np.inf, ratios)
        min_ratio = float(ratios.min(initial=np.inf))
        flip_cap = hi[q] - lo[q]

        if flip_cap <= min_ratio:
            if not np.isfinite(flip_cap):
                return UNBOUNDED
            # Bound flip: the entering variable crosses to its other bound.
            x[basis] = xb - step * flip_cap
            x[q] = hi[q] if sigma > 0 else lo[q]
            vstat[q] = _AT_UPPER if sigma > 0 else _AT_LOWER
            stall = 0
            bland = False
            continue

        delta = max(min_ratio, 0.0)
        cand = np.flatnonzero(ratios <= delta + 1e-9)
        if bland:
            r = int(cand[np.argmin(basis[cand])])
        else:
            r = int(cand[np.argmax(np.abs(w[cand]))])

        leaving = basis[r]
        x[basis] = xb - step * delta
        x[q] = x[q] + sigma * delta
        x[leaving] = lo[leaving] if step[r] > 0 else hi[leaving]
        vstat[leaving] = _AT_LOWER if step[r] > 0 else _AT_UPPER
        vstat[q] = _BASIC
        basis[r] = q

        # Dense product-form update of the explicit inverse.
        piv = w[r]
        if abs(piv) < _TOL_PIVOT:  # pragma: no cover - guarded by ratio test
            b_inv, ok = _refactor(A, b, x, vstat, basis)
            if not ok:
                raise NumericalFailure("degenerate pivot produced singular basis")
        else:
            row = b_inv[r] / piv
            w_col = w.copy()
            w_col[r] = 0.0
            b_inv -= np.outer(w_col, row)
            b_inv[r] = row

        if delta <= _TOL_STEP:
            stall += 1
            if stall > _STALL_LIMIT:
                bland = True
        else:
            stall = 0
            bland = False

    raise NumericalFailure(f"simplex exceeded {max_iters} iterations")


def _refactor(A, b, x, vstat, basis):
    """Recompute the basis inverse and basic values from scratch."""
    try:
        b_inv = np.linalg.inv(A[:, basis])
    except np.linalg.LinAlgError:
        return None, False
    nonbasic = vstat != _BASIC
    rhs = b - A[:, nonbasic] @ x[nonbasic]
    x[basis] = b_inv @ rhs
    return b_inv, True
