import math

import numpy as np
import pytest
from scipy import stats

from levystat.errors import ArgumentError, NonConvergenceError
from levystat.fokker_planck import (SpectralConfig, chapman_kolmogorov_check, closed_form_ou_density,
                                    kde_noise_floor, long_time_limit_check, residual_certificate,
                                    solve_stationary_fp, transition_density_kde)
from levystat.grid import Axis, DensityGrid
from levystat.models import get_model
from levystat.noise import BrownianParams, StableParams
from levystat.sde import MonteCarloConfig, zero_coefficients


def _drift(x):
    return -x


@pytest.fixture(scope="module")
def brownian_solution():
    return solve_stationary_fp(_drift, None, BrownianParams(), SpectralConfig(domain_halfwidth=10.0, n=1024))


def test_brownian_mode_gives_standard_normal(brownian_solution):
    rho = brownian_solution
    assert rho.l1(stats.norm.pdf) <= 1e-4
    assert rho.meta["residual"] <= 1e-8


def test_solution_is_even(brownian_solution):
    v = brownian_solution.values
    # node j mirrors node n - j (node 0 sits at -X and has no image)
    assert np.max(np.abs(v[1:] - v[1:][::-1])) <= 1e-8


def test_residual_certificate_matches(brownian_solution):
    cert = residual_certificate(brownian_solution, _drift, None, BrownianParams())
    assert abs(cert - brownian_solution.meta["residual"]) <= 1e-12


def test_stable_solution_even_and_certified():
    p = StableParams(1.5)
    rho = solve_stationary_fp(_drift, None, p, SpectralConfig(domain_halfwidth=20.0, n=1024))
    v = rho.values
    assert np.max(np.abs(v[1:] - v[1:][::-1])) <= 1e-8
    assert abs(residual_certificate(rho, _drift, None, p) - rho.meta["residual"]) <= 1e-12
    assert rho.meta["mass_clamped"] < 1e-4


def test_nonconvergence_carries_history():
    with pytest.raises(NonConvergenceError) as info:
        solve_stationary_fp(_drift, None, StableParams(1.5), SpectralConfig(domain_halfwidth=20.0, n=512,
                                                                             tol=1e-30, max_steps=2))
    assert len(info.value.history) == 2


def test_closed_form_cauchy():
    g = closed_form_ou_density(StableParams(1.0), SpectralConfig(domain_halfwidth=50.0, n=4096))
    y = g.axes[0].nodes
    assert np.max(np.abs(g.values - 1 / (np.pi * (1 + y * y)))) <= 1e-6
    assert g.meta["total_mass"] == pytest.approx(1.0, abs=1e-12)


def test_closed_form_brownian_is_gaussian():
    g = closed_form_ou_density(BrownianParams(), SpectralConfig(domain_halfwidth=10.0, n=1024))
    assert np.max(np.abs(g.values - stats.norm.pdf(g.axes[0].nodes))) <= 1e-12


def test_closed_form_stable_15_self_convergence():
    p = StableParams(1.5)
    a = closed_form_ou_density(p, SpectralConfig(domain_halfwidth=20.0, n=2048))
    b = closed_form_ou_density(p, SpectralConfig(domain_halfwidth=20.0, n=4096))
    va, vb = a.values, b.values
    mode_a, mode_b = va[1024], vb[2048]
    assert a.axes[0].nodes[1024] == 0.0
    assert abs(mode_a - mode_b) <= 1e-10
    assert np.argmax(va) == 1024
    assert np.all(np.diff(va[1024:]) <= 1e-15) and np.all(np.diff(va[1:1025]) >= -1e-15)


def test_closed_form_matches_tabulated_scipy_density():
    # X = (1/alpha)^(1/alpha) S for S standard symmetric stable
    alpha = 1.5
    g = closed_form_ou_density(StableParams(alpha), SpectralConfig(domain_halfwidth=20.0, n=2048))
    scale = (1 / alpha) ** (1 / alpha)
    pts = np.array([-3.0, -1.0, 0.0, 0.5, 2.0])
    idx = np.searchsorted(g.axes[0].nodes, pts)
    ref = stats.levy_stable.pdf(g.axes[0].nodes[idx], alpha, 0.0, scale=scale)
    np.testing.assert_allclose(g.values[idx], ref, atol=1e-5)


def test_kde_of_gaussian_samples():
    x = np.random.default_rng(0).standard_normal(10**6)
    g = transition_density_kde(x, SpectralConfig(domain_halfwidth=10.0, n=1024))
    assert g.l1(stats.norm.pdf) <= 0.01
    assert g.mass == pytest.approx(1.0, abs=1e-6)


def test_kde_translation_equivariance():
    x = np.random.default_rng(1).standard_normal(5000)
    cfg = SpectralConfig(domain_halfwidth=10.0, n=1024)
    shift = 16 * 20.0 / 1024
    a = transition_density_kde(x, cfg, bandwidth=0.3)
    b = transition_density_kde(x + shift, cfg, bandwidth=0.3)
    np.testing.assert_allclose(b.values[16:], a.values[:-16], atol=1e-10)


def test_kde_box_normalization_and_minimum():
    x = np.random.default_rng(2).standard_cauchy(5000)
    g = transition_density_kde(x, SpectralConfig(domain_halfwidth=10.0, n=512), normalize="box")
    assert g.mass == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ArgumentError):
        transition_density_kde(x[:10], SpectralConfig(n=512))


def test_long_time_limit_brownian():
    c = get_model("ou-brownian").coeffs
    ref = DensityGrid.from_function(stats.norm.pdf, (Axis.symmetric(10.0, 512),))
    curve = long_time_limit_check([5.0], [1.0, 2.0, 5.0, 10.0], c, ref,
                                  MonteCarloConfig(100_000, 0.01, seed=0, streams="block"), threshold=0.05)
    assert curve.final <= 0.05
    assert curve.distances[0] > curve.final


def test_limit_curve_flat_from_stationary_start():
    c = get_model("ou-brownian").coeffs
    ref = DensityGrid.from_function(stats.norm.pdf, (Axis.symmetric(10.0, 512),))
    starts = np.random.default_rng(3).standard_normal((20_000, 1))
    curve = long_time_limit_check(starts, [0.5, 1.0, 2.0], c, ref, MonteCarloConfig(20_000, 0.01, seed=1))
    # KDE bias plus sampling noise: a few noise floors at most
    assert np.all(curve.distances <= 4 * curve.noise_floor + 0.01)
    assert np.ptp(curve.distances) <= 2 * curve.noise_floor.max()


def test_ck_zero_dynamics():
    rep = chapman_kolmogorov_check([0.5], 1.0, 1.0, zero_coefficients(), MonteCarloConfig(2000, 0.1),
                                   SpectralConfig(domain_halfwidth=5.0, n=256))
    assert rep.distance <= 1e-12


def test_ck_ou_brownian():
    rep = chapman_kolmogorov_check([1.0], 1.0, 1.0, get_model("ou-brownian").coeffs,
                                   MonteCarloConfig(100_000, 0.01, seed=2, streams="block"))
    assert rep.distance <= 0.02
    assert rep.passed


def test_ck_requires_positive_times():
    with pytest.raises(ArgumentError):
        chapman_kolmogorov_check([0.0], 0.0, 1.0, zero_coefficients(), MonteCarloConfig(10, 0.1))


def test_config_validation():
    with pytest.raises(ArgumentError):
        SpectralConfig(n=1000)
    with pytest.raises(ArgumentError):
        SpectralConfig(extension=3)
    assert SpectralConfig().halfwidth(StableParams(1.0)) == 50.0
    assert SpectralConfig().halfwidth(StableParams(1.5)) == 20.0
    assert math.isclose(SpectralConfig().halfwidth(BrownianParams()), 20.0)
