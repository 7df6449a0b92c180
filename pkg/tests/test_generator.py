import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from levystat.errors import ArgumentError, DomainError
from levystat.generator import (AdjointOperator, TestFunction, apply_adjoint, apply_fractional_laplacian,
                                apply_generator, bump, constant_function, default_battery, default_dts,
                                gaussian_function, generator_consistency_check, quadratic)
from levystat.grid import Axis, DensityGrid
from levystat.jumps import StableJumps
from levystat.models import get_model
from levystat.noise import BrownianParams, StableParams
from levystat.sde import CoefficientSet, zero_coefficients


def _sine_grid(L, n, m):
    ax = Axis(0.0, L, n)
    return DensityGrid((ax,), np.sin(2 * np.pi * m * ax.nodes / L)), 2 * np.pi * m / L


def _pure_stable(alpha, dim=1):
    return CoefficientSet(dim, lambda x: np.zeros_like(x), jump_space=StableJumps(StableParams(alpha, dim)))


@pytest.mark.parametrize("model", ["ou-brownian", "ou-cauchy", "bounded-jump-ou"])
def test_generator_kills_constants(model):
    c = get_model(model).coeffs
    y = np.linspace(-3, 3, 7)[:, None]
    gv = apply_generator(constant_function(2.5), y, c)
    # the far tail of a stable nu is closed off assuming h decays; the bound covers it
    assert np.max(np.abs(gv.value)) <= max(gv.error_bound, 1e-12)


def test_quadratic_under_ou_brownian():
    c = get_model("ou-brownian").coeffs
    y = np.array([[-1.5], [0.0], [0.7]])
    got = apply_generator(quadratic(), y, c).value
    np.testing.assert_allclose(got, -2 * y[:, 0] ** 2 + 2, rtol=0, atol=1e-12)


@pytest.mark.parametrize("alpha", [0.6, 1.0, 1.5])
def test_generator_matches_fourier_multiplier(alpha):
    h = bump(0.0, 1.0)
    c = _pure_stable(alpha)
    ax = Axis.symmetric(200.0, 1 << 16)
    spec = apply_fractional_laplacian(DensityGrid((ax,), h.value(ax.nodes[:, None])), StableParams(alpha))
    ys = np.array([-2.0, -0.5, 0.0, 0.25, 0.8, 3.0])
    idx = np.searchsorted(ax.nodes, ys)
    y = ax.nodes[idx][:, None]
    gv = apply_generator(h, y, c)
    tol = max(gv.error_bound, 1e-4)
    assert np.max(np.abs(gv.value - spec.values[idx])) <= tol


PERIODIC = pytest.mark.filterwarnings("ignore:values near the box edge")


@PERIODIC
@pytest.mark.parametrize("alpha", [0.5, 1.0, 1.7])
def test_sine_is_eigenfunction(alpha):
    p = StableParams(alpha)
    g, k = _sine_grid(2 * np.pi, 256, 5)
    out = apply_fractional_laplacian(g, p)
    np.testing.assert_allclose(out.values, -p.c_exponent * k ** alpha * g.values, atol=1e-12 * k ** alpha)


@PERIODIC
def test_brownian_mode_is_laplacian():
    g, k = _sine_grid(10.0, 128, 3)
    out = apply_fractional_laplacian(g, BrownianParams())
    np.testing.assert_allclose(out.values, -k ** 2 * g.values, atol=1e-11)


def test_constant_grid_maps_to_zero():
    ax = Axis.symmetric(5.0, 64)
    with pytest.warns(RuntimeWarning):
        out = apply_fractional_laplacian(DensityGrid((ax,), np.ones(64)), StableParams(1.2))
    assert np.max(np.abs(out.values)) <= 1e-13


def _band_limited(rng, n, modes=20):
    k = np.arange(1, modes + 1)
    x = 2 * np.pi * np.arange(n) / n
    a, b = rng.standard_normal((2, modes))
    return (a[:, None] * np.cos(k[:, None] * x) + b[:, None] * np.sin(k[:, None] * x)).sum(0)


@PERIODIC
@settings(max_examples=40, deadline=None)
@given(st.floats(0.1, 1.95), st.integers(0, 2**31))
def test_fractional_laplacian_self_adjoint_and_negative(alpha, seed):
    rng = np.random.default_rng(seed)
    ax = Axis(0.0, 2 * np.pi, 128)
    p = StableParams(alpha)
    f = DensityGrid((ax,), _band_limited(rng, 128))
    g = DensityGrid((ax,), _band_limited(rng, 128))
    lf = apply_fractional_laplacian(f, p).values
    lg = apply_fractional_laplacian(g, p).values
    a, b = lf @ g.values, f.values @ lg
    assert abs(a - b) <= 1e-10 * max(abs(a), abs(b), 1.0)
    assert lf @ f.values <= 0.0


@settings(max_examples=40, deadline=None)
@given(st.floats(-3, 3), st.floats(-2, 2), st.floats(-2, 2))
def test_generator_linearity(a, y0, c0):
    c = get_model("ou-cauchy").coeffs
    h1, h2 = bump(c0, 1.5), gaussian_function(0.3, 0.8)
    y = np.array([[y0]])
    combo = TestFunction.combine([(a, h1), (1.0, h2)])
    lhs = apply_generator(combo, y, c).value[0]
    rhs = a * apply_generator(h1, y, c).value[0] + apply_generator(h2, y, c).value[0]
    assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs), abs(rhs))


def test_unbounded_h_with_heavy_tails_rejected():
    with pytest.raises(DomainError):
        apply_generator(quadratic(), [0.0], get_model("ou-cauchy").coeffs)


@pytest.mark.parametrize("h", [bump(0.2, 1.3), gaussian_function(-0.5, 0.7), bump([0.0, 0.5], 1.0, dim=2),
                               gaussian_function([0.1, 0.2], 1.0, dim=2)])
def test_derivatives_match_finite_differences(h):
    rng = np.random.default_rng(0)
    pts = rng.uniform(-0.6, 0.6, (50, h.dim)) + h.center
    chk = h.fd_check(pts)
    assert chk["gradient"] <= 1e-6 and chk["hessian"] <= 1e-6


def test_adjoint_zero_density():
    ax = Axis.symmetric(10.0, 128)
    out = apply_adjoint(DensityGrid((ax,), np.zeros(128)), lambda x: -x, None, StableParams(1.0))
    assert np.all(out.values == 0.0)


def test_adjoint_without_local_terms_is_fractional_laplacian():
    ax = Axis.symmetric(30.0, 512)
    rho = DensityGrid((ax,), np.exp(-ax.nodes ** 2))
    p = StableParams(1.3)
    a = apply_adjoint(rho, None, None, p).values
    b = apply_fractional_laplacian(rho, p).values
    np.testing.assert_allclose(a, b, atol=1e-15)


def test_cauchy_residual_shrinks_with_refinement():
    res = []
    for n in (1024, 4096, 16384):
        ax = Axis.symmetric(50.0, n)
        rho = DensityGrid((ax,), 1.0 / (np.pi * (1 + ax.nodes ** 2)))
        out = apply_adjoint(rho, lambda x: -x, None, StableParams(1.0), scheme="central")
        inner = np.abs(ax.nodes) < 10
        res.append(np.max(np.abs(out.values[inner])))
    assert res[0] > res[1] > res[2]


@pytest.mark.parametrize("scheme", ["upwind", "central"])
def test_closed_adjoint_conserves_mass(scheme):
    ax = Axis.symmetric(8.0, 256)
    rng = np.random.default_rng(1)
    psi = rng.random(256)
    sig = lambda x: np.full((len(x), 1, 1), 0.7)  # noqa: E731
    out = apply_adjoint(DensityGrid((ax,), psi), lambda x: -x ** 3, sig, StableParams(1.5), scheme, "closed")
    assert abs(out.mass) <= 1e-12 * np.abs(out.values).sum() * ax.h


def test_open_adjoint_mass_equals_minus_flux():
    ax = Axis.symmetric(4.0, 128)
    psi = np.exp(-ax.nodes ** 2 / 4)
    out = apply_adjoint(DensityGrid((ax,), psi), lambda x: x, None, None)
    assert out.mass == pytest.approx(-out.meta["boundary_flux"], abs=1e-12)


def test_closed_adjoint_mirror_symmetric():
    ax = Axis.symmetric(6.0, 64)
    op = AdjointOperator((ax,), lambda x: -x - x ** 3, None, StableParams(1.2), "central", "closed")
    M = op.local.toarray()
    # reflection y -> -y maps node j to (n - j) mod n
    perm = (-np.arange(64)) % 64
    assert np.max(np.abs(M - M[np.ix_(perm, perm)])) <= 1e-12


def test_adjoint_operator_validation():
    with pytest.raises(ArgumentError):
        AdjointOperator((Axis.symmetric(1.0, 8),), scheme="spectral")


def test_default_battery_and_ladders():
    assert len(default_battery(1)) == 3
    assert default_dts(get_model("ou-cauchy").coeffs)[0] == 0.1
    assert default_dts(get_model("ou-brownian").coeffs)[0] == 0.02


def test_consistency_under_zero_dynamics():
    rep = generator_consistency_check(bump(0.0, 1.0), [0.0], zero_coefficients(), [0.1, 0.05, 0.025], 1000)
    assert rep.generator_value == 0.0
    assert all(r["quotient"] == 0.0 for r in rep.per_dt)
    assert rep.consistent and rep.passed


def test_consistency_rejects_increasing_dts():
    with pytest.raises(ArgumentError):
        generator_consistency_check(bump(), [0.0], zero_coefficients(), [0.01, 0.1], 100)


def test_consistency_ou_brownian_small():
    c = get_model("ou-brownian").coeffs
    rep = generator_consistency_check(bump(0.0, 1.0), [0.0], c, default_dts(c, 5), 200_000, seed=3)
    # Lh(0) = h''(0) = -2 for the unit bump
    assert rep.generator_value == pytest.approx(-2.0, abs=1e-12)
    assert rep.consistent
