import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from levystat.errors import ArgumentError
from levystat.jumps import StableJumps, UniformJumps
from levystat.models import get_model
from levystat.noise import StableParams, char_exponent, empirical_cf
from levystat.sde import (AssumptionConstants, CoefficientSet, MonteCarloConfig, NoiseRealization,
                          cocycle_check, ensemble_path_noise, falsify_assumptions, noise_from_json,
                          noise_to_json, refinement_deviation, sample_noise, shift_noise, simulate_ensemble,
                          simulate_path, zero_coefficients)

MODELS = ["ou-brownian", "ou-cauchy", "ou-stable-1.5", "bounded-jump-ou", "decay"]


def _decay():
    return CoefficientSet(1, lambda x: -x)


def test_zero_dynamics_constant_path():
    c = zero_coefficients(2)
    noise = sample_noise(c, 1.0, 0.1, seed=0)
    path = simulate_path([1.5, -2.0], c, noise, 0.1)
    assert np.all(path.states == np.array([1.5, -2.0]))


def test_decay_matches_exponential():
    c = _decay()
    noise = sample_noise(c, 1.0, 1e-4, seed=0)
    final = simulate_path([1.0], c, noise, 1e-4).final[0]
    assert abs(final - math.exp(-1.0)) <= 2e-4


def test_ou_brownian_variance():
    c = get_model("ou-brownian").coeffs
    ens = simulate_ensemble([0.0], c, 20000, 1e-3, 2.0, seed=1, streams="block", record_every=2000)
    x = ens.final[:, 0]
    var = x.var(ddof=1)
    # the 2e-3 slack covers the O(dt) Euler bias
    exact = 1 - math.exp(-4.0)
    se = var * math.sqrt(2.0 / (len(x) - 1))
    assert abs(var - exact) <= 3 * se + 2e-3


def test_ensemble_single_path_matches_simulate_path():
    c = get_model("ou-cauchy").coeffs
    ens = simulate_ensemble([0.3], c, 1, 0.01, 2.0, seed=9)
    noise = ensemble_path_noise(c, 2.0, 0.01, 9, 0)
    path = simulate_path([0.3], c, noise, 0.01)
    assert np.array_equal(ens.states[:, 0, :], path.states)


@pytest.mark.parametrize("streams", ["path", "block"])
def test_ensemble_same_seed_bitwise(streams):
    c = get_model("bounded-jump-ou").coeffs
    a = simulate_ensemble([1.0], c, 300, 0.01, 1.0, seed=4, streams=streams, chunk_size=128)
    b = simulate_ensemble([1.0], c, 300, 0.01, 1.0, seed=4, streams=streams, chunk_size=128)
    assert np.array_equal(a.states, b.states)


def test_ensemble_worker_count_irrelevant():
    c = get_model("ou-cauchy").coeffs
    a = simulate_ensemble([0.0], c, 200, 0.01, 0.5, seed=2, chunk_size=50, workers=1)
    b = simulate_ensemble([0.0], c, 200, 0.01, 0.5, seed=2, chunk_size=50, workers=3)
    assert np.array_equal(a.states, b.states)


def test_different_seeds_agree_statistically():
    c = get_model("ou-brownian").coeffs
    a = simulate_ensemble([1.0], c, 5000, 0.01, 1.0, seed=1, streams="block").final[:, 0]
    b = simulate_ensemble([1.0], c, 5000, 0.01, 1.0, seed=2, streams="block").final[:, 0]
    assert a.mean() != b.mean()
    se = math.sqrt(a.var() / len(a) + b.var() / len(b))
    assert abs(a.mean() - b.mean()) <= 3 * se


def test_antithetic_requires_block_streams():
    with pytest.raises(ArgumentError):
        simulate_ensemble([0.0], _decay(), 10, 0.1, 1.0, antithetic=True)


def test_shift_examples():
    c = get_model("ou-cauchy").coeffs
    noise = sample_noise(c, 5.0, 0.01, seed=3)
    same = shift_noise(noise, 0.0)
    assert np.array_equal(same.brownian, noise.brownian)
    assert np.array_equal(same.instants, noise.instants)

    hand = NoiseRealization.from_jumps(0.5, 10, instants=[3.0], marks=[2.0])
    moved = shift_noise(hand, 2.0)
    assert moved.instants.tolist() == [1.0]


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 50), st.integers(0, 50), st.integers(0, 1000))
def test_shift_semigroup(ks, kt, seed):
    c = get_model("ou-cauchy").coeffs
    dt = 0.02
    noise = sample_noise(c, 2.0, dt, seed=seed)
    a = shift_noise(shift_noise(noise, ks * dt), kt * dt)
    b = shift_noise(noise, (ks + kt) * dt)
    for name in ("brownian", "gauss", "jump_step", "jump_offset", "jump_mark", "jump_small"):
        assert np.array_equal(getattr(a, name), getattr(b, name))
    assert a.origin == b.origin


def test_shift_rejects_misaligned():
    noise = sample_noise(_decay(), 1.0, 0.1, seed=0)
    with pytest.raises(ArgumentError):
        shift_noise(noise, 0.05)


@settings(max_examples=60, deadline=None)
@given(st.sampled_from(MODELS), st.floats(-10, 10), st.integers(0, 100), st.integers(0, 100),
       st.integers(0, 10**6))
def test_cocycle_is_exact(name, x0, ks, kt, seed):
    c = get_model(name).coeffs
    dt = 0.01
    noise = sample_noise(c, 2.0, dt, seed=seed)
    assert cocycle_check([x0], ks * dt, kt * dt, c, noise, dt) == 0.0


def test_cocycle_in_two_dimensions():
    c = CoefficientSet(2, lambda x: -x + 0.1 * x[:, ::-1], jump_space=StableJumps(StableParams(1.3, 2)))
    noise = sample_noise(c, 1.0, 0.01, seed=5)
    assert cocycle_check([1.0, -2.0], 0.37, 0.42, c, noise, 0.01) == 0.0


def test_refinement_deviation_shrinks():
    c = get_model("ou-brownian").coeffs
    devs = []
    for dt in (0.02, 0.005, 0.00125):
        noise = sample_noise(c, 1.0, dt, seed=11)
        devs.append(refinement_deviation([1.0], c, noise))
    assert devs[-1] < devs[0]


def test_jump_applied_at_step_end():
    # one step, one jump: the Euler drift sees the pre-jump state
    c = _decay()
    noise = NoiseRealization.from_jumps(0.1, 1, instants=[0.05], marks=[1.0])
    path = simulate_path([1.0], c, noise, 0.1)
    assert path.final[0] == pytest.approx(1.0 - 0.1 + 1.0, abs=1e-15)


def test_noise_json_roundtrip_replays():
    c = get_model("bounded-jump-ou").coeffs
    noise = sample_noise(c, 2.0, 0.01, seed=8)
    back = noise_from_json(noise_to_json(noise))
    a = simulate_path([0.5], c, noise, 0.01).states
    b = simulate_path([0.5], c, back, 0.01).states
    assert np.array_equal(a, b)


def test_explosion_is_flagged_not_raised():
    c = CoefficientSet(1, lambda x: x ** 3)
    ens = simulate_ensemble([10.0], c, 2, 0.1, 2.0)
    assert ens.exploded.all()


def test_pure_stable_marginal_cf():
    p = StableParams(1.0, small_jumps="series")
    c = CoefficientSet(1, lambda x: np.zeros_like(x), jump_space=StableJumps(p))
    n = 200_000
    ens = simulate_ensemble([0.0], c, n, 0.05, 1.0, seed=3, streams="block", record_every=20)
    z = np.array([[0.5], [1.0], [2.0]])
    ecf = empirical_cf(ens.final, z)
    assert np.max(np.abs(ecf - np.exp(char_exponent(z, p)))) <= 3 / math.sqrt(n)


def test_monte_carlo_config_validation():
    with pytest.raises(ArgumentError):
        MonteCarloConfig(n_paths=0)
    with pytest.raises(ArgumentError):
        MonteCarloConfig(dt=-1.0)


def test_falsify_linear_drift_holds():
    rep = falsify_assumptions(_decay(), AssumptionConstants(c_b=1.0), n=2000)
    assert not rep["H_b"]["falsified"]
    assert rep["H_b"]["worst_margin"] >= 0


def test_falsify_quadratic_drift_fails():
    c = CoefficientSet(1, lambda x: x ** 2)
    rep = falsify_assumptions(c, AssumptionConstants(c_b=5.0), n=2000)
    assert rep["H_b"]["falsified"]
    assert "H_b" in rep["falsified"]


def test_falsify_zero_jump_map():
    c = CoefficientSet(1, lambda x: -x, small_jump=lambda x, u: np.zeros_like(u),
                       jump_space=UniformJumps(-1.0, 1.0, 1.0, 1.0))
    rep = falsify_assumptions(c, AssumptionConstants(), n=500)
    assert not rep["H_f"]["falsified"]
    assert rep["H_prime_f"]["worst_margin"] >= 0
