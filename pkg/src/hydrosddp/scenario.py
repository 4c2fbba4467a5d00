"""Recombining scenario lattice, AR inflow noise, and forward sampling.

The lattice stores one deterministic first-stage realization and L
equiprobable openings for every later stage. Forward paths draw one
opening per stage transition via inverse-CDF on a weight vector; each
path owns an independent PCG64 stream seeded from
``SeedSequence([seed, iteration, path_index])`` so batches can run in
any order (or concurrently) without changing results.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .risk import WeightVector

ENUMERATION_CAP = 100_000


class TreeTooLarge(ValueError):
    """Full-tree traversal was requested beyond the enumeration cap."""


class InsufficientHistory(ValueError):
    """AR evaluation received fewer lagged inflows than coefficients."""


@dataclass(frozen=True)
class NoiseRealization:
    """One opening: inflow noise per hydro, caps per renewable, optional
    per-bus demand overrides."""

    inflow_noise: dict = field(default_factory=dict)
    renewable_cap: dict = field(default_factory=dict)
    demand: dict = field(default_factory=dict)

    def __post_init__(self):
        for name, cap in self.renewable_cap.items():
            if cap < 0:
                raise ValueError(f"renewable cap for {name!r} is negative")
        for name, d in self.demand.items():
            if d < 0:
                raise ValueError(f"demand override for {name!r} is negative")


class Lattice:
    """T stages, L openings per stage from 2..T, deterministic stage 1."""

    __slots__ = ("num_stages", "num_openings", "stage1", "_openings")

    def __init__(self, num_stages: int, num_openings: int,
                 stage1: NoiseRealization, openings):
        if num_stages < 1:
            raise ValueError("need at least one stage")
        if num_openings < 1:
            raise ValueError("need at least one opening per stage")
        openings = tuple(tuple(per_stage) for per_stage in openings)
        if len(openings) != num_stages - 1:
            raise ValueError(
                f"expected openings for {num_stages - 1} stages, "
                f"got {len(openings)}")
        for t, per_stage in enumerate(openings, start=2):
            if len(per_stage) != num_openings:
                raise ValueError(f"stage {t} has {len(per_stage)} openings, "
                                 f"expected {num_openings}")
        self.num_stages = num_stages
        self.num_openings = num_openings
        self.stage1 = stage1
        self._openings = openings

    def noise(self, stage: int, opening: int) -> NoiseRealization:
        """Realization of `opening` (0-based) at `stage` (1-based, >= 2)."""
        if stage < 2 or stage > self.num_stages:
            raise IndexError(f"stage {stage} has no sampled openings")
        return self._openings[stage - 2][opening]

    @property
    def openings(self):
        return self._openings

    def __eq__(self, other):
        return (isinstance(other, Lattice)
                and self.num_stages == other.num_stages
                and self.num_openings == other.num_openings
                and self.stage1 == other.stage1
                and self._openings == other._openings)

    def stage_noise(self, stage: int, opening: Optional[int]) -> NoiseRealization:
        return self.stage1 if stage == 1 else self.noise(stage, opening)


@dataclass(frozen=True)
class ARProcess:
    """Per-hydro autoregressive inflow coefficients (possibly empty)."""

    coefficients: dict  # hydro name -> tuple of lag coefficients

    @property
    def max_lag(self) -> int:
        return max((len(c) for c in self.coefficients.values()), default=0)


def inflow_transition(ar: ARProcess, lag_history: dict,
                      noise: NoiseRealization) -> dict:
    """New inflow per hydro: sum of lag terms plus the opening's noise.

    ``lag_history[name]`` lists recent inflows newest first.
    """
    out = {}
    for name, phi in ar.coefficients.items():
        hist = lag_history.get(name, ())
        if len(hist) < len(phi):
            raise InsufficientHistory(
                f"hydro {name!r} needs {len(phi)} lagged inflows, "
                f"got {len(hist)}")
        acc = noise.inflow_noise.get(name, 0.0)
        for k, coef in enumerate(phi):
            acc += coef * hist[k]
        out[name] = acc
    return out


class SamplerMode(enum.Enum):
    UNIFORM = "uniform"
    RISK_ADJUSTED = "risk"
    ALTERNATING = "alternating"

    @classmethod
    def parse(cls, text: str) -> "SamplerMode":
        for mode in cls:
            if mode.value == text:
                return mode
        raise ValueError(f"unknown sampling mode {text!r}; "
                         f"choose from {[m.value for m in cls]}")


@dataclass(frozen=True)
class PathStep:
    """One stage of a forward path."""

    opening: Optional[int]        # 0-based; None at the deterministic root
    state_out: object             # StateVector
    immediate_cost: float
    weights: Optional[WeightVector]  # used to sample the next stage


@dataclass(frozen=True)
class PathRecord:
    steps: tuple

    def __len__(self):
        return len(self.steps)

    @property
    def total_cost(self) -> float:
        return float(sum(s.immediate_cost for s in self.steps))


def path_rng(seed: int, iteration: int, path_index: int) -> np.random.Generator:
    """Independent, reproducible stream for one forward path."""
    return np.random.Generator(
        np.random.PCG64(np.random.SeedSequence([seed, iteration, path_index])))


def sample_opening(weights: WeightVector, rng: np.random.Generator) -> int:
    """Inverse-CDF draw of a 0-based opening index; one uniform per call."""
    cdf = np.cumsum(weights.weights)
    idx = int(np.searchsorted(cdf, rng.random(), side="right"))
    return min(idx, len(weights) - 1)


def enumerate_paths(lattice: Lattice, cap: int = ENUMERATION_CAP):
    """All opening-index sequences (stages 2..T), lexicographic order."""
    count = lattice.num_openings ** (lattice.num_stages - 1)
    if count > cap:
        raise TreeTooLarge(
            f"{count} paths exceed the enumeration cap of {cap}")
    return [tuple(p) for p in itertools.product(
        range(lattice.num_openings), repeat=lattice.num_stages - 1)]
