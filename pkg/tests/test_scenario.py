"""Lattice shape rules, AR transitions, and sampler statistics."""

import numpy as np
import pytest

from hydrosddp.risk import WeightVector, uniform_weights
from hydrosddp.scenario import (
    ARProcess,
    InsufficientHistory,
    Lattice,
    NoiseRealization,
    SamplerMode,
    TreeTooLarge,
    enumerate_paths,
    inflow_transition,
    path_rng,
    sample_opening,
)


def flat_lattice(T, L):
    quiet = NoiseRealization()
    return Lattice(T, L, quiet, [[quiet] * L for _ in range(T - 1)])


def test_lattice_shape_validation():
    quiet = NoiseRealization()
    with pytest.raises(ValueError):
        Lattice(0, 2, quiet, [])
    with pytest.raises(ValueError):
        Lattice(3, 2, quiet, [[quiet, quiet]])  # missing stage 3
    with pytest.raises(ValueError):
        Lattice(2, 2, quiet, [[quiet]])  # short opening list
    lat = flat_lattice(3, 2)
    assert lat.stage_noise(1, None) is quiet or isinstance(lat.stage1, NoiseRealization)
    with pytest.raises(IndexError):
        lat.noise(1, 0)


def test_noise_guards():
    with pytest.raises(ValueError):
        NoiseRealization(renewable_cap={"w": -1.0})
    with pytest.raises(ValueError):
        NoiseRealization(demand={"b": -2.0})


def test_path_counts():
    assert len(enumerate_paths(flat_lattice(10, 2))) == 512
    assert len(enumerate_paths(flat_lattice(7, 3))) == 729
    assert enumerate_paths(flat_lattice(1, 5)) == [()]
    with pytest.raises(TreeTooLarge):
        enumerate_paths(flat_lattice(10, 2), cap=100)


def test_paths_lexicographic_and_complete():
    for T in range(1, 7):
        for L in range(1, 5):
            paths = enumerate_paths(flat_lattice(T, L))
            assert len(paths) == L ** (T - 1)
            assert len(set(paths)) == len(paths)
            assert paths == sorted(paths)


def test_inflow_transition_examples():
    noise5 = NoiseRealization(inflow_noise={"h": 5.0})
    assert inflow_transition(ARProcess({"h": ()}), {"h": ()}, noise5)["h"] == 5.0

    noise1 = NoiseRealization(inflow_noise={"h": 1.0})
    out = inflow_transition(ARProcess({"h": (0.5,)}), {"h": (10.0,)}, noise1)
    assert out["h"] == pytest.approx(6.0)

    noise0 = NoiseRealization(inflow_noise={"h": 0.0})
    out = inflow_transition(ARProcess({"h": (0.5, 0.25)}), {"h": (4.0, 8.0)}, noise0)
    assert out["h"] == pytest.approx(4.0)

    with pytest.raises(InsufficientHistory):
        inflow_transition(ARProcess({"h": (0.5, 0.2)}), {"h": (1.0,)}, noise0)


def test_sample_opening_degenerate():
    w = WeightVector([0.0, 1.0])
    for seed in range(20):
        assert sample_opening(w, path_rng(seed, 0, 0)) == 1


def test_sample_opening_uniform_frequencies():
    rng = path_rng(123, 1, 0)
    w = uniform_weights(3)
    draws = np.array([sample_opening(w, rng) for _ in range(30000)])
    for k in range(3):
        freq = float(np.mean(draws == k))
        assert 0.32 <= freq <= 0.347  # 4-sigma binomial band around 1/3


def test_sample_opening_weighted_frequencies():
    rng = path_rng(7, 3, 2)
    probs = np.array([0.125, 0.125, 0.375, 0.375])
    w = WeightVector(probs)
    n = 40000
    draws = np.array([sample_opening(w, rng) for _ in range(n)])
    for k, p in enumerate(probs):
        freq = float(np.mean(draws == k))
        band = 4.0 * np.sqrt(p * (1 - p) / n)
        assert abs(freq - p) <= band


def test_rng_reproducible_streams():
    a = [sample_opening(uniform_weights(4), path_rng(99, 5, 2)) for _ in range(3)]
    b = [sample_opening(uniform_weights(4), path_rng(99, 5, 2)) for _ in range(3)]
    assert a == b
    # distinct path indices give distinct streams
    seq1 = path_rng(99, 5, 0).random(8)
    seq2 = path_rng(99, 5, 1).random(8)
    assert not np.allclose(seq1, seq2)


def test_sampler_mode_parse():
    assert SamplerMode.parse("uniform") is SamplerMode.UNIFORM
    assert SamplerMode.parse("risk") is SamplerMode.RISK_ADJUSTED
    assert SamplerMode.parse("alternating") is SamplerMode.ALTERNATING
    with pytest.raises(ValueError):
        SamplerMode.parse("sometimes")
