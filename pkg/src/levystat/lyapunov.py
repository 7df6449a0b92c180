"""Lyapunov sandwich and drift conditions, and the exponential moment bound they imply.

A spec (V, K1, K2, K3, M1, M2, M3) satisfying

    K1|x|^2 - M1 <= V(x) <= K2|x|^2 + M2     and     LV <= -K3 V + M3

yields E|X_t|^2 <= (K2/K1) e^{-K3 t}|x|^2 + (K3(M1 + M2) + M3)/(K3 K1).
Both conditions are claims for all x; the checks here sample x and can only
falsify them. A pass is reported as such, never as a proof.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.stats import qmc

from .errors import ArgumentError, DomainError
from .generator import TestFunction, apply_generator
from .jumps import QuadratureSpec
from .sde import CoefficientSet, MonteCarloConfig, simulate_ensemble

NOT_A_PROOF = "sampled check: a negative margin falsifies, a pass is not a proof"


@dataclass(frozen=True)
class LyapunovSpec:
    """V with its derivatives (vectorized over (n, d) inputs) and the six constants."""

    v: Callable
    gradient: Callable
    hessian: Callable
    k1: float
    k2: float
    k3: float
    m1: float = 0.0
    m2: float = 0.0
    m3: float = 0.0
    dim: int = 1
    sup_hessian: float = math.inf

    def __post_init__(self):
        if not (self.k1 > 0 and self.k2 > 0 and self.k3 > 0):
            raise ArgumentError("K1, K2, K3 must be positive")
        if min(self.m1, self.m2, self.m3) < 0:
            raise ArgumentError("M1, M2, M3 must be nonnegative")

    @property
    def ultimate_constant(self) -> float:
        """(K3 (M1 + M2) + M3) / (K3 K1): the t -> infinity value of the moment bound."""
        return (self.k3 * (self.m1 + self.m2) + self.m3) / (self.k3 * self.k1)

    def as_test_function(self) -> TestFunction:
        return TestFunction(self.v, self.gradient, self.hessian, dim=self.dim,
                            sup_hessian=self.sup_hessian, name="V")

    def fd_check(self, points, step: float = 1e-4) -> dict:
        return self.as_test_function().fd_check(points, step)

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("k1", "k2", "k3", "m1", "m2", "m3", "dim")}


def quadratic_spec(k1: float = 1.0, k2: float = 1.0, k3: float = 1.0, m1: float = 0.0, m2: float = 0.0,
                   m3: float = 0.0, dim: int = 1, scale: float = 1.0) -> LyapunovSpec:
    """V(x) = scale |x|^2."""
    c = float(scale)
    return LyapunovSpec(
        v=lambda x: c * np.sum(x * x, axis=1),
        gradient=lambda x: 2.0 * c * x,
        hessian=lambda x: np.broadcast_to(2.0 * c * np.eye(x.shape[1]), (len(x), x.shape[1], x.shape[1])).copy(),
        k1=k1, k2=k2, k3=k3, m1=m1, m2=m2, m3=m3, dim=dim, sup_hessian=2.0 * abs(c),
    )


@dataclass
class MarginReport:
    """Per-point margins of a sampled inequality; negative means falsified."""

    margins: np.ndarray
    points: np.ndarray
    band: float = 0.0
    atol: float = 0.0
    note: str = NOT_A_PROOF
    terms: dict = field(default_factory=dict)

    @property
    def worst(self) -> float:
        return float(self.margins.min())

    @property
    def worst_point(self) -> np.ndarray:
        return self.points[int(np.argmin(self.margins))]

    @property
    def falsified(self) -> bool:
        return bool(self.worst < -(self.band + self.atol))

    def to_dict(self) -> dict:
        return {
            "worst_margin": self.worst,
            "worst_point": self.worst_point.tolist(),
            "uncertainty_band": self.band,
            "falsified": self.falsified,
            "n_points": int(len(self.margins)),
            "note": self.note,
        }


def sample_points(dim: int = 1, radius: float = 20.0, n: int = 10_000, rays: int = 201,
                  seed: int = 0) -> np.ndarray:
    """Scrambled Halton points in the ball B(0, radius) plus a radial scan.

    The scan runs along the coordinate axes and, for d >= 2, the main
    diagonals, at ``rays`` radii from 0 to ``radius`` in both directions.
    """
    if dim < 1 or n < 1:
        raise ArgumentError("dim and n must be positive")
    halton = qmc.Halton(d=dim, scramble=True, seed=seed)
    pts = np.empty((0, dim))
    while len(pts) < n:
        cand = (2.0 * halton.random(2 * n) - 1.0) * radius
        pts = np.vstack([pts, cand[np.linalg.norm(cand, axis=1) <= radius]])
    pts = pts[:n]
    dirs = [np.eye(dim)[i] for i in range(dim)]
    if dim >= 2:
        dirs.append(np.ones(dim) / math.sqrt(dim))
        alt = np.ones(dim)
        alt[1::2] = -1.0
        dirs.append(alt / math.sqrt(dim))
    r = np.linspace(0.0, radius, rays)
    scan = [s * r[:, None] * e[None, :] for e in dirs for s in (1.0, -1.0)]
    return np.vstack([pts, *scan])


def _points(points, dim):
    p = np.asarray(points, float)
    p = p.reshape(-1, dim) if p.ndim <= 1 else p
    if len(p) == 0:
        raise ArgumentError("need at least one point")
    return p


def check_sandwich(spec: LyapunovSpec, points=None, atol: float = 1e-12) -> MarginReport:
    """Margins min(V - (K1|x|^2 - M1), (K2|x|^2 + M2) - V) at each point."""
    x = _points(sample_points(spec.dim) if points is None else points, spec.dim)
    v = spec.v(x)
    r2 = np.sum(x * x, axis=1)
    lower = v - (spec.k1 * r2 - spec.m1)
    upper = spec.k2 * r2 + spec.m2 - v
    scale = max(1.0, float(np.abs(v).max()))
    return MarginReport(np.minimum(lower, upper), x, atol=atol * scale,
                        terms={"lower": lower, "upper": upper})


def check_drift(spec: LyapunovSpec, coeffs: CoefficientSet, quad: Optional[QuadratureSpec] = None,
                points=None, atol: float = 1e-9) -> MarginReport:
    """Margins (-K3 V + M3) - LV, with LV from :func:`apply_generator`.

    The quadrature error bound of LV becomes the uncertainty band. Heavy-
    tailed jump measures make the jump integrals of a quadratic-growth V
    diverge and are rejected.
    """
    js = coeffs.jump_space
    if js.active and not js.finite_second_moment:
        raise DomainError(
            "jump integrals of V diverge under a jump measure without second moments "
            "(alpha-stable noise); use a bounded-jump model for the drift condition"
        )
    if spec.dim != coeffs.dim:
        raise ArgumentError("spec and coefficient dimensions differ")
    x = _points(sample_points(spec.dim) if points is None else points, spec.dim)
    lv = apply_generator(spec.as_test_function(), x, coeffs, quad)
    v = spec.v(x)
    margin = -spec.k3 * v + spec.m3 - np.asarray(lv.value)
    scale = max(1.0, float(np.abs(v).max()))
    return MarginReport(margin, x, band=lv.error_bound, atol=atol * scale, terms={"LV": lv.value})


def moment_bound(spec: LyapunovSpec, x, t):
    """(K2/K1) e^{-K3 t}|x|^2 + (K3 (M1 + M2) + M3)/(K3 K1); t may be an array."""
    t_arr = np.asarray(t, float)
    if np.any(t_arr < 0):
        raise ArgumentError("t must be nonnegative")
    r2 = float(np.sum(np.asarray(x, float) ** 2))
    out = spec.k2 / spec.k1 * np.exp(-spec.k3 * t_arr) * r2 + spec.ultimate_constant
    return float(out) if out.ndim == 0 else out


@dataclass
class BoundednessReport:
    times: np.ndarray
    mc_mean: np.ndarray
    mc_stderr: np.ndarray
    bound: np.ndarray
    ultimate_constant: float
    n_paths: int
    n_sigma: float = 3.0

    @property
    def within(self) -> np.ndarray:
        return self.mc_mean <= self.bound + self.n_sigma * self.mc_stderr

    @property
    def passed(self) -> bool:
        return bool(np.all(self.within))

    @property
    def limsup_estimate(self) -> float:
        """Largest Monte Carlo second moment over the last quarter of the grid."""
        k = max(1, len(self.times) // 4)
        return float(self.mc_mean[-k:].max())

    def to_dict(self) -> dict:
        return {
            "times": self.times.tolist(),
            "mc_curve": self.mc_mean.tolist(),
            "mc_stderr": self.mc_stderr.tolist(),
            "bound_curve": self.bound.tolist(),
            "ultimate_constant": self.ultimate_constant,
            "limsup_estimate": self.limsup_estimate,
            "n_paths": self.n_paths,
            "passed": self.passed,
        }


def verify_ultimate_boundedness(coeffs: CoefficientSet, spec: LyapunovSpec, x0, times: Sequence[float],
                                mc: MonteCarloConfig, n_sigma: float = 3.0) -> BoundednessReport:
    """Compare Monte Carlo E|X_t(x0)|^2 with :func:`moment_bound` on a time grid.

    Exploded paths are excluded from the average (the engine records them
    as NaN); their count reduces ``n_paths`` in the report.
    """
    js = coeffs.jump_space
    if js.active and not js.finite_second_moment:
        raise DomainError("second moments are infinite under alpha-stable noise")
    t = np.asarray(times, float)
    if len(t) == 0 or np.any(t < 0) or np.any(np.diff(t) <= 0):
        raise ArgumentError("times must be nonnegative and increasing")
    positive = t[t > 0]
    if len(positive):
        ens = simulate_ensemble(x0, coeffs, mc.n_paths, mc.dt, float(t[-1]), seed=mc.seed,
                                record_times=positive, chunk_size=mc.chunk_size, streams=mc.streams)
        mean, se = ens.second_moment()
        rec = ens.times
        n_ok = int((~ens.exploded).sum())
    else:
        x = np.asarray(x0, float).reshape(-1)
        rec, mean, se, n_ok = np.zeros(1), np.array([float(x @ x)]), np.zeros(1), mc.n_paths
    keep = np.isin(np.round(rec / mc.dt), np.round(t / mc.dt))
    return BoundednessReport(t, mean[keep], se[keep], moment_bound(spec, x0, t) * np.ones(len(t)),
                             spec.ultimate_constant, n_ok, n_sigma)
