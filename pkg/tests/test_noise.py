import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from levystat.errors import ArgumentError, DomainError
from levystat.noise import (StableParams, band_rate, char_exponent, decompose_jumps, empirical_cf,
                            exponent_constant, levy_constant, levy_density, sample_stable_increment)

# (d, alpha) -> (C, C_{d,alpha}), evaluated with mpmath at 30 digits
GAMMA_ORACLE = {
    (1, 0.5): (1.0, 0.19947114020071634),
    (1, 1.0): (1.0, 0.31830988618379067),
    (1, 1.5): (1.0, 0.29920671030107451),
    (2, 0.5): (0.76275976350181319, 0.083241983875425065),
    (2, 1.0): (0.63661977236758134, 0.15915494309189534),
    (2, 1.5): (0.55641789444938212, 0.17116712969055234),
    (3, 0.5): (0.66666666666666667, 0.047620226950680727),
    (3, 1.0): (0.5, 0.10132118364233777),
    (3, 1.5): (0.4, 0.11905056737670182),
}


@pytest.mark.parametrize("key", sorted(GAMMA_ORACLE))
def test_constants_match_gamma_oracle(key):
    d, a = key
    c, cl = GAMMA_ORACLE[key]
    assert exponent_constant(a, d) == pytest.approx(c, rel=1e-12)
    assert levy_constant(a, d) == pytest.approx(cl, rel=1e-12)
    assert StableParams(a, d).self_check()["ok"]


@given(st.floats(0.05, 1.95), st.integers(1, 6))
def test_self_check_holds_everywhere(alpha, dim):
    chk = StableParams(alpha, dim).self_check()
    assert chk["ok"], chk


@given(st.floats(0.05, 1.95))
def test_exponent_constant_is_one_in_one_dimension(alpha):
    assert StableParams(alpha).c_exponent == pytest.approx(1.0, rel=1e-12)


@pytest.mark.parametrize("bad", [dict(alpha=0.0), dict(alpha=2.0), dict(alpha=1.0, dim=0),
                                 dict(alpha=1.0, delta=0.0), dict(alpha=1.0, small_jumps="exact")])
def test_invalid_params_rejected(bad):
    with pytest.raises(ArgumentError):
        StableParams(**bad)


def test_char_exponent_examples():
    assert char_exponent(0.0, StableParams(1.3)) == 0.0
    assert char_exponent(2.0, StableParams(1.0)) == pytest.approx(-2.0, rel=1e-14)
    p2 = StableParams(1.0, 2)
    z = np.array([[0.6, 0.8]])
    assert char_exponent(z, p2)[0] == pytest.approx(-GAMMA_ORACLE[(2, 1.0)][0], rel=1e-12)


def test_levy_density_examples():
    p = StableParams(1.0)
    assert levy_density(1.0, p) == pytest.approx(1.0 / math.pi, rel=1e-12)
    assert levy_density(-1.0, p) == pytest.approx(1.0 / math.pi, rel=1e-12)
    assert levy_density(1.0, StableParams(0.5)) == pytest.approx(0.5 / (math.sqrt(2) * math.sqrt(math.pi)), rel=1e-12)
    with pytest.raises(DomainError):
        levy_density(0.0, p)


def test_large_jump_rate_cauchy():
    assert StableParams(1.0).large_jump_rate() == pytest.approx(2.0 / math.pi, rel=1e-12)
    assert StableParams(1.0, delta=1e8).large_jump_rate() < 1e-8


def test_tail_mass_matches_quadrature():
    p = StableParams(1.5, delta=0.7)
    from scipy.integrate import quad

    num = 2 * quad(lambda u: levy_density(u, p), 0.7, np.inf)[0]
    assert p.large_jump_rate() == pytest.approx(num, rel=1e-9)
    m2 = 2 * quad(lambda u: u * u * levy_density(u, p), 0.0, 0.7)[0]
    assert p.truncated_second_moment(0.7) == pytest.approx(m2, rel=1e-8)


@pytest.mark.parametrize("dim", [1, 2, 3])
def test_increment_cf_matches_exponent(dim):
    rng = np.random.default_rng(1)
    p = StableParams(1.0 if dim == 1 else 1.5, dim)
    n = 10**6
    x = sample_stable_increment(p, 1.0, rng, n)
    z = np.array([0.5, 1.0, 2.0])[:, None] * np.eye(dim)[0]
    ecf = empirical_cf(x, z)
    assert np.max(np.abs(ecf - np.exp(char_exponent(z, p)))) <= 3 / math.sqrt(n)


def test_increment_median_is_zero():
    rng = np.random.default_rng(2)
    n = 10**5
    x = sample_stable_increment(StableParams(1.5), 1.0, rng, n)[:, 0]
    # binomial CLT on the sign count
    assert abs(np.mean(x > 0) - 0.5) <= 3 * 0.5 / math.sqrt(n)


def test_increment_shrinks_with_dt():
    rng = np.random.default_rng(3)
    p = StableParams(1.2)
    meds = [np.median(np.abs(sample_stable_increment(p, dt, rng, 20000))) for dt in (1.0, 1e-2, 1e-4)]
    assert meds[0] > meds[1] > meds[2]
    ratio = meds[0] / meds[2]
    assert ratio == pytest.approx(1e4 ** (1 / 1.2), rel=0.05)


@pytest.mark.parametrize("alpha", [0.7, 1.0, 1.6])
def test_self_similarity_quantiles(alpha):
    rng = np.random.default_rng(4)
    p = StableParams(alpha)
    q = [0.6, 0.75, 0.9]
    a = np.quantile(sample_stable_increment(p, 1.0, rng, 10**5)[:, 0], q)
    b = np.quantile(sample_stable_increment(p, 0.01, rng, 10**5)[:, 0], q)
    np.testing.assert_allclose(b / a, 0.01 ** (1 / alpha), rtol=0.05)


def test_symmetry_ks():
    rng = np.random.default_rng(5)
    x = sample_stable_increment(StableParams(0.8), 1.0, rng, 10**5)[:, 0]
    y = sample_stable_increment(StableParams(0.8), 1.0, rng, 10**5)[:, 0]
    assert stats.ks_2samp(x, -y).pvalue > 0.001


def test_decompose_batch_structure():
    rng = np.random.default_rng(6)
    p = StableParams(0.9)
    small, large = decompose_jumps(p, 0.5, rng, size=1000)
    assert small.shape == (1000, 1)
    assert np.all((large.times >= 0) & (large.times < 0.5))
    assert np.all(np.abs(large.marks) > p.delta)
    assert np.all(large.compensation == 0.0)
    # times increase within each owning draw
    for i in np.unique(large.index):
        assert np.all(np.diff(large.times[large.index == i]) > 0)


@pytest.mark.parametrize("mode", ["series", "gaussian"])
def test_decomposition_sum_cf(mode):
    rng = np.random.default_rng(7)
    p = StableParams(1.0)
    n = 10**6
    small, large = decompose_jumps(p, 1.0, rng, size=n, mode=mode)
    total = small.copy()
    np.add.at(total, large.index, large.marks)
    z = np.array([[0.5], [1.0], [2.0]])
    err = np.abs(empirical_cf(total, z) - np.exp(char_exponent(z, p)))
    if mode == "series":
        assert err.max() <= 3 / math.sqrt(n)
    else:
        # the Gaussian stand-in is only a low-frequency match
        assert err[0] <= 3 / math.sqrt(n)


def test_band_rate_matches_counts():
    p = StableParams(1.0)
    assert band_rate(p, 0.1, 1.0) == pytest.approx(p.tail_mass(0.1) - p.large_jump_rate(), rel=1e-14)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.3, 1.9), st.integers(0, 2**31))
def test_seeded_draws_are_reproducible(alpha, seed):
    p = StableParams(alpha)
    a = sample_stable_increment(p, 0.1, np.random.default_rng(seed), 50)
    b = sample_stable_increment(p, 0.1, np.random.default_rng(seed), 50)
    assert np.array_equal(a, b)


def test_nonpositive_dt_rejected():
    with pytest.raises(ArgumentError):
        sample_stable_increment(StableParams(1.0), 0.0, np.random.default_rng(0))
