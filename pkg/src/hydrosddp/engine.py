"""Multicut SDDP engine: sampled forward passes, cut-generating backward
passes, bound tracking, and exact policy evaluation.

Each iteration runs a batch of forward paths (uniform or risk-adjusted
sampling), logs the deterministic lower bound and the statistical upper
bound estimate, checks the stopping rule, and then sweeps backward
appending one cut per (path, stage, opening) to the pool. Cuts created
while processing stage t+1 are visible to the stage-t solves of the
same sweep, matching the backward order of the recursion.

In alternating mode, odd iterations sample uniformly and skip both the
upper-bound estimate and the convergence check; even iterations use the
risk-adjusted weights.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .hydro import StateVector, SystemCase, initial_state, solve_stage
from .risk import (
    NegativeWeight,
    RiskMeasure,
    WeightVector,
    clamped_weights,
    raw_sampling_weights,
    sampling_weights,
    uniform_weights,
)
from .scenario import (
    ENUMERATION_CAP,
    Lattice,
    PathRecord,
    PathStep,
    SamplerMode,
    TreeTooLarge,
    path_rng,
    sample_opening,
)

logger = logging.getLogger(__name__)


class EmptyBatch(ValueError):
    """Upper-bound statistics requested over zero paths."""


@dataclass(frozen=True)
class Cut:
    """Affine minorant q + gradient . (x - anchor) of one cost-to-go."""

    gradient: np.ndarray
    anchor: np.ndarray
    intercept: float

    def __post_init__(self):
        object.__setattr__(self, "gradient",
                           np.ascontiguousarray(self.gradient, dtype=float))
        object.__setattr__(self, "anchor",
                           np.ascontiguousarray(self.anchor, dtype=float))
        if self.gradient.shape != self.anchor.shape:
            raise ValueError("gradient and anchor dimensions differ")
        if not (np.all(np.isfinite(self.gradient))
                and np.all(np.isfinite(self.anchor))
                and np.isfinite(self.intercept)):
            raise ValueError("cut coefficients must be finite")

    def value_at(self, x: np.ndarray) -> float:
        return float(self.intercept + self.gradient @ (x - self.anchor))


class CutPool:
    """Cut lists indexed by (stage t in 1..T-1, opening l in 0..L-1)."""

    def __init__(self, num_stages: int, num_openings: int, state_dim: int):
        self.num_stages = num_stages
        self.num_openings = num_openings
        self.state_dim = state_dim
        self._cuts = {(t, l): []
                      for t in range(1, num_stages)
                      for l in range(num_openings)}

    def append(self, t: int, l: int, cut: Cut) -> None:
        if cut.gradient.shape != (self.state_dim,):
            raise ValueError(
                f"cut dimension {cut.gradient.shape} != ({self.state_dim},)")
        self._cuts[(t, l)].append(cut)

    def cuts_at(self, t: int, l: int):
        return self._cuts[(t, l)]

    def slice(self, t: int):
        """Per-opening cut lists feeding the stage-t subproblem."""
        return [self._cuts[(t, l)] for l in range(self.num_openings)]

    def slice_or_none(self, t: int):
        return None if t >= self.num_stages else self.slice(t)

    def __len__(self):
        return sum(len(v) for v in self._cuts.values())

    def items(self):
        return self._cuts.items()


@dataclass(frozen=True)
class EngineConfig:
    max_iterations: int = 20
    min_iterations: int = 1
    batch_size: int = 1
    seed: int = 0
    sampler_mode: SamplerMode = SamplerMode.RISK_ADJUSTED
    measure: RiskMeasure = field(default_factory=RiskMeasure)
    stop_gap_tol: float = np.inf  # extra relative-gap requirement; inf = off
    ub_confidence: float = 1.96

    def __post_init__(self):
        if not 1 <= self.min_iterations <= self.max_iterations:
            raise ValueError("need 1 <= min_iterations <= max_iterations")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.ub_confidence < 0:
            raise ValueError("ub_confidence must be nonnegative")


@dataclass(frozen=True)
class BoundsEntry:
    iteration: int
    lower_bound: float
    ub_mean: Optional[float]
    ub_stderr: Optional[float]
    ub_samples: Optional[int]
    sampler: str
    wall_ms: float


class BoundsLog:
    def __init__(self):
        self.entries = []

    def append(self, entry: BoundsEntry) -> None:
        self.entries.append(entry)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def final_lower_bound(self) -> float:
        return self.entries[-1].lower_bound


@dataclass
class TrainedPolicy:
    cuts: CutPool
    bounds: BoundsLog
    config: EngineConfig
    fingerprint: str = ""


def effective_sampler(mode: SamplerMode, iteration: int) -> SamplerMode:
    """Resolve alternation: even iterations risk-adjusted, odd uniform."""
    if mode is SamplerMode.ALTERNATING:
        return (SamplerMode.RISK_ADJUSTED if iteration % 2 == 0
                else SamplerMode.UNIFORM)
    return mode


def opening_weights(betas, measure: RiskMeasure) -> WeightVector:
    """Sampling weights from stage betas, clamping the defensive corner."""
    try:
        return sampling_weights(betas, measure)
    except NegativeWeight as exc:  # pragma: no cover - analytically unreachable
        logger.warning("clamping negative sampling weight: %s", exc)
        return clamped_weights(raw_sampling_weights(betas, measure))


def forward_pass(case: SystemCase, lattice: Lattice, cuts: CutPool,
                 measure: RiskMeasure, sampler: SamplerMode, iteration: int,
                 batch_size: int, seed: int):
    """Run one batch of forward paths.

    Returns (paths, stage1_objective); the stage-1 subproblem is
    deterministic, so it is solved once and shared across the batch.
    """
    T, L = lattice.num_stages, lattice.num_openings
    risk_adjusted = effective_sampler(sampler, iteration) is SamplerMode.RISK_ADJUSTED
    root = solve_stage(case, 1, initial_state(case), lattice.stage1,
                       cuts.slice_or_none(1), measure, T, L)

    paths = []
    for s in range(batch_size):
        rng = path_rng(seed, iteration, s)
        steps = []
        sol, opening = root, None
        for t in range(1, T + 1):
            weights = None
            if t < T:
                weights = (opening_weights(sol.betas, measure)
                           if risk_adjusted else uniform_weights(L))
            steps.append(PathStep(opening, sol.state_out,
                                  sol.immediate_cost, weights))
            if t == T:
                break
            opening = sample_opening(weights, rng)
            sol = solve_stage(case, t + 1, sol.state_out,
                              lattice.noise(t + 1, opening),
                              cuts.slice_or_none(t + 1), measure, T, L)
        paths.append(PathRecord(tuple(steps)))
    return paths, root.objective


def backward_pass(case: SystemCase, lattice: Lattice, cuts: CutPool,
                  paths, measure: RiskMeasure) -> int:
    """Sweep stages T..2 adding one cut per (path, opening); returns count.

    Within one stage level the pool is fixed, so solves for repeated
    (state, opening) pairs are cached; the appended cuts are identical
    either way.
    """
    T, L = lattice.num_stages, lattice.num_openings
    added = 0
    for t in range(T, 1, -1):
        stage_cuts = cuts.slice_or_none(t)
        cache = {}
        for path in paths:
            state = path.steps[t - 2].state_out
            key = state.flatten().tobytes()
            for l in range(L):
                hit = cache.get((key, l))
                if hit is None:
                    sol = solve_stage(case, t, state, lattice.noise(t, l),
                                      stage_cuts, measure, T, L)
                    hit = Cut(sol.state_dual, state.flatten(), sol.objective)
                    cache[(key, l)] = hit
                cuts.append(t - 1, l, hit)
                added += 1
    return added


def lower_bound(case: SystemCase, lattice: Lattice, cuts: CutPool,
                measure: RiskMeasure) -> float:
    """First-stage optimum under the current pool (deterministic bound)."""
    sol = solve_stage(case, 1, initial_state(case), lattice.stage1,
                      cuts.slice_or_none(1), measure,
                      lattice.num_stages, lattice.num_openings)
    return sol.objective


def upper_bound_estimate(paths):
    """Mean and standard error of total path costs."""
    if not paths:
        raise EmptyBatch("no forward paths to estimate from")
    totals = np.array([p.total_cost for p in paths])
    mean = float(totals.mean())
    stderr = (float(totals.std(ddof=1) / np.sqrt(totals.size))
              if totals.size > 1 else 0.0)
    return mean, stderr


def train(case: SystemCase, lattice: Lattice, config: EngineConfig,
          fingerprint: str = ""):
    """Full training loop; returns (TrainedPolicy, BoundsLog)."""
    T, L = lattice.num_stages, lattice.num_openings
    measure = config.measure
    pool = CutPool(T, L, case.state_dimension())
    log = BoundsLog()

    for k in range(1, config.max_iterations + 1):
        started = time.perf_counter()
        paths, lb = forward_pass(case, lattice, pool, measure,
                                 config.sampler_mode, k, config.batch_size,
                                 config.seed)
        eff = effective_sampler(config.sampler_mode, k)
        skip_ub = (config.sampler_mode is SamplerMode.ALTERNATING
                   and eff is SamplerMode.UNIFORM)
        ub_mean = ub_stderr = ub_count = None
        converged = False
        if not skip_ub:
            ub_mean, ub_stderr = upper_bound_estimate(paths)
            ub_count = len(paths)
            eligible = (eff is SamplerMode.RISK_ADJUSTED or measure.lam == 0.0)
            if k >= config.min_iterations and eligible:
                test_ub = ub_mean - config.ub_confidence * ub_stderr
                gap_ok = (ub_mean - lb) <= config.stop_gap_tol * max(abs(ub_mean), 1e-12)
                converged = lb >= test_ub - 1e-12 and gap_ok

        if not converged:
            backward_pass(case, lattice, pool, paths, measure)

        wall_ms = (time.perf_counter() - started) * 1e3
        log.append(BoundsEntry(k, lb, ub_mean, ub_stderr, ub_count,
                               eff.value, wall_ms))
        if converged:
            break

    return TrainedPolicy(pool, log, config, fingerprint), log


def evaluate_policy_exact(case: SystemCase, lattice: Lattice, policy,
                          measure: RiskMeasure,
                          cap: int = ENUMERATION_CAP) -> float:
    """Exact nested value of the trained policy over the full tree.

    At each node the stage problem is solved under the pool, the node's
    weight vector is derived from its betas, and children are combined
    with those weights; leaves contribute their immediate cost.
    """
    T, L = lattice.num_stages, lattice.num_openings
    if L ** (T - 1) > cap:
        raise TreeTooLarge(
            f"{L ** (T - 1)} scenario paths exceed the cap of {cap}")
    pool = policy.cuts if isinstance(policy, TrainedPolicy) else policy

    def value(t: int, state: StateVector, noise) -> float:
        sol = solve_stage(case, t, state, noise, pool.slice_or_none(t),
                          measure, T, L)
        if t == T:
            return sol.immediate_cost
        weights = opening_weights(sol.betas, measure).weights
        total = sol.immediate_cost
        for l in range(L):
            if weights[l] > 0.0:
                total += weights[l] * value(t + 1, sol.state_out,
                                            lattice.noise(t + 1, l))
        return total

    return value(1, initial_state(case), lattice.stage1)


def simulate_policy(case: SystemCase, lattice: Lattice, policy,
                    measure: RiskMeasure, sampler: SamplerMode,
                    num_paths: int, seed: int, iteration: int = 0):
    """Monte Carlo rollout of a trained policy; no cuts are added.

    Returns (paths, mean, stderr) of total path costs under `sampler`.
    """
    pool = policy.cuts if isinstance(policy, TrainedPolicy) else policy
    paths, _ = forward_pass(case, lattice, pool, measure, sampler,
                            iteration, num_paths, seed)
    mean, stderr = upper_bound_estimate(paths)
    return paths, mean, stderr
