"""End-to-end acceptance checks, one test per criterion, each at its stated tolerance.

Every test prints a single "criterion N: PASS|FAIL ..." line (also collected
into the terminal summary) before asserting.
"""
import math

import numpy as np
import pytest
from scipy import stats

from conftest import ACCEPTANCE_LINES
from levystat.fokker_planck import (SpectralConfig, chapman_kolmogorov_check, closed_form_ou_density,
                                    long_time_limit_check, solve_stationary_fp, transition_density_kde)
from levystat.generator import apply_fractional_laplacian, default_battery, default_dts, \
    generator_consistency_check
from levystat.grid import Axis, DensityGrid
from levystat.lyapunov import check_drift, check_sandwich, quadratic_spec, verify_ultimate_boundedness
from levystat.models import REGISTRY, get_model
from levystat.noise import StableParams
from levystat.sde import MonteCarloConfig, cocycle_check, sample_noise, simulate_ensemble
from levystat.stationary import EmpiricalMeasure, chebyshev_tail_bound, kb_occupation, stationarity_test

pytestmark = pytest.mark.slow


def _verdict(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


def _occupation(name, seed=0):
    # T = 200, dt = 1e-3, 50 paths, 10% burn-in
    model = get_model(name)
    ens = simulate_ensemble([0.0], model.coeffs, 50, 1e-3, 200.0, seed=seed, record_every=10)
    return model, kb_occupation(ens, 20.0, 1)


@pytest.fixture(scope="module")
def cauchy_occupation():
    return _occupation("ou-cauchy")


@pytest.fixture(scope="module")
def stable15_occupation():
    return _occupation("ou-stable-1.5")


def test_criterion_01_kb_occupation_matches_cauchy(cauchy_occupation):
    model, m = cauchy_occupation
    ks = m.ks_to(stats.cauchy.cdf)
    _verdict(1, ks <= 0.02, f"KS(occupation, Cauchy(0,1)) = {ks:.4f} <= 0.02 ({m.n} samples)")


def _triangle(n, model, m, alpha, halfwidth):
    cfg = SpectralConfig(domain_halfwidth=halfwidth, n=4096)
    p = StableParams(alpha)
    rho = solve_stationary_fp(model.fp_drift, model.fp_sigma, p, cfg)
    ref = closed_form_ou_density(p, cfg)
    kde = transition_density_kde(m.samples[:, 0], cfg)
    l1_sc, l1_kr, l1_ks = rho.l1(ref), kde.l1(ref), kde.l1(rho)
    ok = l1_sc <= 1e-3 and l1_kr <= 0.05 and l1_ks <= 0.05
    _verdict(n, ok, f"alpha={alpha:g} X={halfwidth:g}: L1(spectral, closed) = {l1_sc:.2e} <= 1e-3, "
                    f"L1(KDE, closed) = {l1_kr:.4f}, L1(KDE, spectral) = {l1_ks:.4f} <= 0.05")


def test_criterion_02_fokker_planck_triangle_cauchy(cauchy_occupation):
    _triangle(2, *cauchy_occupation, 1.0, 50.0)


def test_criterion_03_fokker_planck_triangle_stable_15(stable15_occupation):
    _triangle(3, *stable15_occupation, 1.5, 20.0)


def test_criterion_04_cocycle_exact():
    rng = np.random.default_rng(2024)
    names = sorted(REGISTRY)
    dt = 0.01
    worst, count = 0.0, 0
    for i in range(100):
        name = names[i % len(names)]
        c = get_model(name).coeffs
        ks, kt = rng.integers(0, 150, size=2)
        x0 = rng.uniform(-10, 10)
        noise = sample_noise(c, (ks + kt) * dt + 0.5, dt, seed=int(rng.integers(2**31)))
        worst = max(worst, cocycle_check([x0], ks * dt, kt * dt, c, noise, dt))
        count += 1
    _verdict(4, worst == 0.0, f"max cocycle deviation over {count} instances = {worst!r} (exactly 0)")


@pytest.mark.parametrize("name", ["ou-brownian", "ou-cauchy"])
def test_criterion_05_generator_consistency(name):
    c = get_model(name, small_jumps="series").coeffs
    dts = default_dts(c)
    parts, ok = [], True
    for h in default_battery(1):
        rep = generator_consistency_check(h, [0.0], c, dts, 8_000_000, seed=0)
        good = rep.slope is not None and rep.slope >= 0.5 and rep.consistent
        ok &= good
        err = math.hypot(rep.intercept_se, rep.quadrature_bound)
        slope = "unresolved" if rep.slope is None else f"{rep.slope:.2f}"
        parts.append(f"{h.name}: slope={slope} |a-Lh|={abs(rep.intercept - rep.generator_value):.2e} "
                     f"(3sigma={3 * err:.2e})")
    _verdict(5, ok, f"{name}: " + "; ".join(parts))


@pytest.mark.parametrize("name,k3,m3", [("ou-brownian", 1.0, 2.0), ("bounded-jump-ou", 2.0, 1 / 3)])
def test_criterion_06_lyapunov_moment_bound(name, k3, m3):
    c = get_model(name).coeffs
    spec = quadratic_spec(k3=k3, m3=m3)
    assert not check_sandwich(spec).falsified
    assert not check_drift(spec, c, points=np.linspace(-20, 20, 201)).falsified
    times = np.linspace(0.0, 10.0, 21)
    rep = verify_ultimate_boundedness(c, spec, [3.0], times, MonteCarloConfig(100_000, 5e-3, seed=0,
                                                                                streams="block"))
    exact = (spec.k3 * (spec.m1 + spec.m2) + spec.m3) / (spec.k3 * spec.k1)
    const_ok = abs(rep.ultimate_constant - exact) <= 4 * np.finfo(float).eps * exact
    slack = float(np.min(rep.bound + 3 * rep.mc_stderr - rep.mc_mean))
    _verdict(6, rep.passed and const_ok,
             f"{name} (K3={k3:g}, M3={m3:.4g}): min(bound + 3se - MC) = {slack:.3e} >= 0 over {len(times)} "
             f"times, ultimate constant {rep.ultimate_constant!r} == {exact!r}")


def test_criterion_07_chebyshev_tail():
    c = get_model("ou-brownian").coeffs
    x0 = 3.0
    ens = simulate_ensemble([x0], c, 50, 1e-2, 200.0, seed=1, record_every=1)
    m = kb_occupation(ens, 0.0, 10)
    spec = quadratic_spec(k3=1.0, m3=2.0)
    curve = lambda t: x0 ** 2 * np.exp(-2 * t) + 1 - np.exp(-2 * t)  # noqa: E731  exact E X_t^2
    parts, ok = [], True
    for radius in (2.0, 5.0, 10.0):
        bound = chebyshev_tail_bound(curve, radius, m.meta["T"], 1.0, spec.ultimate_constant)
        mass, se = m.tail_mass(radius), m.tail_mass_stderr(radius)
        ok &= mass <= bound + 3 * se
        parts.append(f"R={radius:g}: {mass:.2e} <= {bound:.2e} + 3*{se:.1e}")
    _verdict(7, ok, "; ".join(parts))


def test_criterion_08_stationarity_push_forward():
    rng = np.random.default_rng(8)
    n = 2000
    mc = MonteCarloConfig(n, 1e-2, seed=3, streams="block")
    bro, cau = get_model("ou-brownian").coeffs, get_model("ou-cauchy").coeffs
    a = stationarity_test(EmpiricalMeasure.uniform(rng.standard_normal((n, 1))), bro, 1.0, mc)
    b = stationarity_test(EmpiricalMeasure.uniform(rng.standard_cauchy((n, 1))), cau, 1.0, mc)
    w = stationarity_test(EmpiricalMeasure.uniform(2 * rng.standard_normal((n, 1))), bro, 1.0, mc)
    ok = a.passed and b.passed and not w.passed
    _verdict(8, ok, f"N(0,1)/ou-brownian p={a.p_value:.3f}, Cauchy/ou-cauchy p={b.p_value:.3f} (> 0.01); "
                    f"N(0,4)/ou-brownian p={w.p_value:.3f} (rejected)")


def test_criterion_09_chapman_kolmogorov():
    rep = chapman_kolmogorov_check([1.0], 1.0, 1.0, get_model("ou-cauchy").coeffs,
                                   MonteCarloConfig(100_000, 1e-2, seed=9, streams="block"))
    _verdict(9, rep.distance <= 0.03, f"ou-cauchy s=t=1: L1(one-run, two-stage) = {rep.distance:.4f} <= 0.03")


@pytest.mark.parametrize("name,params", [("ou-brownian", None), ("ou-cauchy", StableParams(1.0))])
def test_criterion_10_long_time_limit(name, params):
    model = get_model(name)
    cfg = SpectralConfig(domain_halfwidth=50.0 if params else 10.0, n=4096)
    if params is None:
        ref = DensityGrid.from_function(stats.norm.pdf, (Axis.symmetric(10.0, 4096),))
    else:
        ref = closed_form_ou_density(params, cfg)
    curve = long_time_limit_check([5.0], [0.5, 1.0, 2.0, 5.0, 10.0], model.coeffs, ref,
                                  MonteCarloConfig(100_000, 1e-2, seed=10, streams="block"))
    d = ", ".join(f"{x:.3f}" for x in curve.distances)
    _verdict(10, curve.final <= 0.08, f"{name} from x0=5: L1 at t=0.5..10 = [{d}], final <= 0.08")


@pytest.mark.filterwarnings("ignore:values near the box edge")
def test_criterion_11_infrastructure():
    msgs, ok = [], True
    worst = 0.0
    for d in (1, 2, 3):
        for alpha in (0.5, 1.0, 1.5):
            chk = StableParams(alpha, d).self_check()
            worst = max(worst, chk["rel_err_c_exponent"], chk["rel_err_c_levy"])
    ok &= worst <= 1e-12
    msgs.append(f"constants rel err {worst:.1e}")

    c = get_model("ou-cauchy").coeffs
    a = simulate_ensemble([0.0], c, 500, 1e-2, 2.0, seed=11, record_every=10)
    b = simulate_ensemble([0.0], c, 500, 1e-2, 2.0, seed=11, record_every=10)
    same = np.array_equal(a.states, b.states)
    ok &= same
    msgs.append(f"same-seed ensembles bitwise equal: {same}")

    m = kb_occupation(a, 0.5, 3).with_histogram(50)
    werr = max(abs(m.weights.sum() - 1.0), abs(m.histogram[1].sum() - 1.0))
    ok &= werr <= 1e-12
    msgs.append(f"weight normalization err {werr:.1e}")

    rng = np.random.default_rng(11)
    ax = Axis(0.0, 2 * math.pi, 256)
    sa = neg = 0.0
    for alpha in (0.3, 0.8, 1.0, 1.5, 1.9):
        p = StableParams(alpha)
        f, g = rng.standard_normal((2, 256))
        lf = apply_fractional_laplacian(DensityGrid((ax,), f), p).values
        lg = apply_fractional_laplacian(DensityGrid((ax,), g), p).values
        sa = max(sa, abs(lf @ g - f @ lg) / max(abs(lf @ g), 1.0))
        neg = max(neg, float(lf @ f) / float(np.abs(lf) @ np.abs(f)))
    ok &= sa <= 1e-10 and neg <= 1e-10
    msgs.append(f"self-adjointness err {sa:.1e}, max normalized <f, Lf> = {neg:.1e}")
    _verdict(11, ok, "; ".join(msgs))
