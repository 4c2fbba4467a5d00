"""CVaR/VaR evaluation and the opening-weight distribution it induces.

The composite measure is ``(1 - lam) * E[Y] + lam * CVaR_alpha[Y]`` over
equiprobable atoms. Three equivalent routes are provided: direct oracles
(sort/scan), the linear-programming form, and the closed-form weight
vector whose dot product with the atoms reproduces the measure. The
weight vector doubles as the forward-sampling distribution over next
stage openings.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .lp import GREATER, OPTIMAL, LinearProgram, solve


class EmptyInput(ValueError):
    """An operation over cost atoms received an empty collection."""


class NegativeWeight(ArithmeticError):
    """The quantile-position weight came out negative (defensive guard)."""


@dataclass(frozen=True)
class RiskMeasure:
    """Convex combination between expectation (weight 1-lam) and CVaR_alpha."""

    lam: float = 0.0
    alpha: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lam must be in [0, 1], got {self.lam}")
        if not 0.0 <= self.alpha < 1.0:
            raise ValueError(
                f"alpha must be in [0, 1); the worst-case limit alpha=1 "
                f"is not supported (got {self.alpha})")


class WeightVector:
    """Probability distribution over the L openings of the next stage."""

    __slots__ = ("weights",)

    def __init__(self, weights):
        w = np.ascontiguousarray(weights, dtype=float)
        if w.ndim != 1 or w.size == 0:
            raise ValueError("weights must be a non-empty vector")
        if np.any(w < 0.0):
            raise ValueError("weights must be nonnegative")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights sum to {w.sum()!r}, expected 1")
        self.weights = w

    def __len__(self):
        return self.weights.size

    def __eq__(self, other):
        return isinstance(other, WeightVector) and np.array_equal(
            self.weights, other.weights)

    def __repr__(self):
        return f"WeightVector({self.weights.tolist()})"


def uniform_weights(n: int) -> WeightVector:
    return WeightVector(np.full(n, 1.0 / n))


def quantile_position(alpha: float, n: int) -> int:
    """1-based index of the VaR atom among n sorted equiprobable atoms.

    ceil(alpha*n), clamped to 1 when alpha == 0; the 1e-9 slack keeps
    exact-integer products from being pushed up by float noise.
    """
    if alpha <= 0.0:
        return 1
    return max(1, math.ceil(alpha * n - 1e-9))


def var_oracle(values, alpha: float) -> float:
    """Smallest atom whose empirical CDF reaches alpha."""
    v = _atoms(values)
    return float(np.sort(v, kind="stable")[quantile_position(alpha, v.size) - 1])


def cvar_oracle(values, alpha: float) -> float:
    """Exact CVaR by scanning the anchor b over the support.

    The minimized objective b + E[(Y-b)^+]/(1-alpha) attains its minimum
    at an atom, so the scan is exact rather than approximate.
    """
    v = _atoms(values)
    excess = np.maximum(v[None, :] - v[:, None], 0.0).mean(axis=1)
    return float((v + excess / (1.0 - alpha)).min())


def rho(values, measure: RiskMeasure) -> float:
    """Composite measure: (1-lam)*mean + lam*CVaR_alpha."""
    v = _atoms(values)
    if measure.lam == 0.0:
        return float(v.mean())
    return float((1.0 - measure.lam) * v.mean()
                 + measure.lam * cvar_oracle(v, measure.alpha))


def rho_lp(values, measure: RiskMeasure):
    """Composite measure via its linear program; returns (value, z, deltas).

    Decision variables are the anchor z and per-atom excesses delta_l;
    the expectation term is constant and added outside the solve.
    """
    v = _atoms(values)
    n = v.size
    lam, alpha = measure.lam, measure.alpha
    cost = np.empty(n + 1)
    cost[0] = lam
    cost[1:] = lam / ((1.0 - alpha) * n)
    lower = np.zeros(n + 1)
    lower[0] = -np.inf
    upper = np.full(n + 1, np.inf)
    rows = np.hstack([np.ones((n, 1)), np.eye(n)])  # z + delta_l >= y_l
    sol = solve(LinearProgram(cost, lower, upper, rows, [GREATER] * n, v))
    if sol.status != OPTIMAL:  # pragma: no cover - always feasible/bounded
        raise ArithmeticError(f"risk LP ended {sol.status}")
    value = (1.0 - lam) * float(v.mean()) + sol.objective
    return value, float(sol.primal[0]), sol.primal[1:].copy()


def sampling_weights(betas, measure: RiskMeasure) -> WeightVector:
    """Closed-form opening weights from per-opening cost-to-go values.

    Sorted ascending (stable), positions below the VaR index get
    (1-lam)/L, positions above get (1-lam)/L + lam/((1-alpha)L), and the
    VaR position absorbs the remainder so the vector sums to one and
    its dot product with the betas equals the composite measure.
    """
    raw, pivot, nu, n = _closed_form_weights(betas, measure)
    if pivot < -1e-12:
        raise NegativeWeight(
            f"weight {pivot} at quantile position {nu} of {n}")
    return WeightVector(raw)


def raw_sampling_weights(betas, measure: RiskMeasure) -> np.ndarray:
    """Closed-form weights without validation; callers clamp as needed."""
    return _closed_form_weights(betas, measure)[0]


def _closed_form_weights(betas, measure: RiskMeasure):
    b = _atoms(betas)
    n = b.size
    lam, alpha = measure.lam, measure.alpha
    order = np.argsort(b, kind="stable")
    nu = quantile_position(alpha, n)
    base = (1.0 - lam) / n
    tail = lam / ((1.0 - alpha) * n)
    sorted_w = np.full(n, base)
    sorted_w[nu:] += tail
    pivot = base + lam - lam * (n - nu) / ((1.0 - alpha) * n)
    sorted_w[nu - 1] = max(pivot, 0.0)  # clip float noise at exact zero
    weights = np.empty(n)
    weights[order] = sorted_w
    return weights, pivot, nu, n


def clamped_weights(raw) -> WeightVector:
    """Clip negatives to zero and renormalize into a valid distribution."""
    w = np.maximum(np.asarray(raw, dtype=float), 0.0)
    total = w.sum()
    if total <= 0.0:
        raise ValueError("cannot renormalize an all-zero weight vector")
    return WeightVector(w / total)


def _atoms(values) -> np.ndarray:
    v = np.ascontiguousarray(values, dtype=float)
    if v.size == 0:
        raise EmptyInput("need at least one cost atom")
    if not np.all(np.isfinite(v)):
        raise ValueError("cost atoms must be finite")
    return v.ravel()
