"""Symmetric alpha-stable noise: constants, Levy measure, sampling.

A d-dimensional symmetric alpha-stable process L has characteristic function

    E exp(i <z, L_t>) = exp(t * Psi(z)),    Psi(z) = -C |z|^alpha,

with C = pi^{-1/2} Gamma((1+alpha)/2) Gamma(d/2) / Gamma((d+alpha)/2), and
Levy measure nu(du) = C_{d,alpha} |u|^{-(d+alpha)} du.

Sampling
--------
* d = 1: Chambers-Mallows-Stuck, rescaled so the characteristic function is
  exactly exp(dt * Psi).
* d > 1: sub-Gaussian construction sqrt(A) * G with A a positive
  (alpha/2)-stable variable (Kanter's representation) and G an isotropic
  Gaussian, again scale-matched to Psi.
* ``decompose_jumps`` performs the Levy-Ito split at radius ``delta``:
  large jumps as a compound Poisson sample, small jumps either as a single
  Gaussian with the matching covariance or as a truncated series (compound
  Poisson on ``series_cutoff < |u| <= delta`` plus a Gaussian residual).

For d > 1 the two constants are not mutually consistent: integrating
C_{d,alpha}/|u|^{d+alpha} gives the exponent -|z|^alpha, not -C|z|^alpha.
Samplers follow Psi (and therefore C); the Levy density follows C_{d,alpha}.
In d = 1 both agree because C = 1.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import special

from .errors import ArgumentError, DomainError

SMALL_JUMP_MODES = ("gaussian", "series")


def exponent_constant(alpha: float, dim: int) -> float:
    """C = pi^{-1/2} Gamma((1+a)/2) Gamma(d/2) / Gamma((d+a)/2)."""
    return (
        special.gamma((1.0 + alpha) / 2.0)
        * special.gamma(dim / 2.0)
        / (math.sqrt(math.pi) * special.gamma((dim + alpha) / 2.0))
    )


def levy_constant(alpha: float, dim: int) -> float:
    """C_{d,a} = a Gamma((d+a)/2) / (2^{1-a} pi^{d/2} Gamma(1 - a/2))."""
    return (
        alpha
        * special.gamma((dim + alpha) / 2.0)
        / (2.0 ** (1.0 - alpha) * math.pi ** (dim / 2.0) * special.gamma(1.0 - alpha / 2.0))
    )


def sphere_area(dim: int) -> float:
    """Surface area of the unit sphere S^{d-1} (2 for d = 1)."""
    return 2.0 * math.pi ** (dim / 2.0) / math.gamma(dim / 2.0)


@dataclass(frozen=True)
class StableParams:
    """Parameters of a symmetric alpha-stable driver.

    ``c_exponent`` and ``c_levy`` are derived at construction and re-derived
    through log-gamma by :meth:`self_check`.
    """

    alpha: float
    dim: int = 1
    delta: float = 1.0
    small_jumps: str = "gaussian"
    series_cutoff: Optional[float] = None
    c_exponent: float = field(init=False)
    c_levy: float = field(init=False)

    def __post_init__(self):
        if not 0.0 < self.alpha < 2.0:
            raise ArgumentError(f"alpha must lie in (0, 2), got {self.alpha}")
        if int(self.dim) != self.dim or self.dim < 1:
            raise ArgumentError(f"dim must be a positive integer, got {self.dim}")
        if not self.delta > 0.0:
            raise ArgumentError(f"delta must be positive, got {self.delta}")
        if self.small_jumps not in SMALL_JUMP_MODES:
            raise ArgumentError(f"small_jumps must be one of {SMALL_JUMP_MODES}")
        if self.series_cutoff is not None and not 0.0 < self.series_cutoff < self.delta:
            raise ArgumentError("series_cutoff must lie in (0, delta)")
        object.__setattr__(self, "dim", int(self.dim))
        object.__setattr__(self, "c_exponent", float(exponent_constant(self.alpha, self.dim)))
        object.__setattr__(self, "c_levy", float(levy_constant(self.alpha, self.dim)))

    @property
    def cutoff(self) -> float:
        """Inner radius of the series small-jump mode (default delta / 10)."""
        return self.series_cutoff if self.series_cutoff is not None else 0.1 * self.delta

    def self_check(self, rtol: float = 1e-12) -> dict:
        """Recompute both constants via log-gamma and compare with the stored values."""
        a, d = self.alpha, self.dim
        c = math.exp(
            math.lgamma((1 + a) / 2) + math.lgamma(d / 2) - math.lgamma((d + a) / 2)
        ) / math.sqrt(math.pi)
        cl = a * math.exp(
            math.lgamma((d + a) / 2) - math.lgamma(1 - a / 2)
        ) / (2.0 ** (1 - a) * math.pi ** (d / 2))
        err_c = abs(c - self.c_exponent) / c
        err_l = abs(cl - self.c_levy) / cl
        return {
            "c_exponent": self.c_exponent,
            "c_levy": self.c_levy,
            "rel_err_c_exponent": err_c,
            "rel_err_c_levy": err_l,
            "ok": err_c <= rtol and err_l <= rtol,
        }

    # -- closed-form pieces of nu --------------------------------------------------
    def tail_mass(self, radius: float) -> float:
        """nu(|u| > radius) = C_{d,a} |S^{d-1}| radius^{-a} / a."""
        return self.c_levy * sphere_area(self.dim) * radius ** (-self.alpha) / self.alpha

    def large_jump_rate(self) -> float:
        """Total mass of nu outside the ball of radius delta."""
        return self.tail_mass(self.delta)

    def truncated_second_moment(self, radius: float) -> float:
        """int_{|u| <= radius} |u|^2 nu(du) = C_{d,a} |S^{d-1}| radius^{2-a} / (2-a)."""
        return self.c_levy * sphere_area(self.dim) * radius ** (2.0 - self.alpha) / (2.0 - self.alpha)

    def as_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "dim": self.dim,
            "delta": self.delta,
            "small_jumps": self.small_jumps,
            "series_cutoff": self.series_cutoff,
            "c_exponent": self.c_exponent,
            "c_levy": self.c_levy,
        }


@dataclass(frozen=True)
class BrownianParams:
    """The alpha = 2 comparison mode: multiplier -|z|^2 (generator = Laplacian)."""

    dim: int = 1
    alpha: float = 2.0
    c_exponent: float = 1.0


@dataclass
class JumpBatch:
    """Jumps drawn over one step (or a batch of independent steps).

    ``index`` maps each jump to the draw it belongs to when a batch of draws
    is sampled at once; it is all zeros for a single draw.
    """

    times: np.ndarray
    marks: np.ndarray
    compensation: np.ndarray
    index: np.ndarray

    def __len__(self):
        return len(self.times)


def char_exponent(z, params) -> np.ndarray:
    """Psi(z) = -C |z|^alpha; ``z`` has shape (..., d) or is a scalar for d = 1."""
    z = np.asarray(z, dtype=float)
    if params.dim == 1 and (z.ndim == 0 or z.shape[-1] != 1):
        r = np.abs(z)
    else:
        r = np.linalg.norm(z, axis=-1)
    return -params.c_exponent * r ** params.alpha


def levy_density(u, params: StableParams) -> np.ndarray:
    """C_{d,a} |u|^{-(d+a)}; raises DomainError at u = 0."""
    u = np.asarray(u, dtype=float)
    if params.dim == 1 and (u.ndim == 0 or u.shape[-1] != 1):
        r = np.abs(u)
    else:
        r = np.linalg.norm(u, axis=-1)
    if np.any(r == 0.0):
        raise DomainError("Levy density is singular at u = 0")
    return params.c_levy * r ** (-(params.dim + params.alpha))


def _check_dt(dt):
    if not dt > 0:
        raise ArgumentError(f"dt must be positive, got {dt}")


def standard_symmetric_stable(alpha: float, rng: np.random.Generator, size) -> np.ndarray:
    """Chambers-Mallows-Stuck draw with characteristic function exp(-|z|^alpha)."""
    u = rng.uniform(-0.5 * np.pi, 0.5 * np.pi, size)
    w = rng.standard_exponential(size)
    if alpha == 1.0:
        return np.tan(u)
    return (
        np.sin(alpha * u)
        / np.cos(u) ** (1.0 / alpha)
        * (np.cos((1.0 - alpha) * u) / w) ** ((1.0 - alpha) / alpha)
    )


def positive_stable(beta: float, rng: np.random.Generator, size) -> np.ndarray:
    """Kanter's draw with Laplace transform exp(-lambda^beta), 0 < beta < 1."""
    u = rng.uniform(0.0, np.pi, size)
    e = rng.standard_exponential(size)
    return (
        np.sin(beta * u) / np.sin(u) ** (1.0 / beta)
        * (np.sin((1.0 - beta) * u) / e) ** ((1.0 - beta) / beta)
    )


def sample_stable_increment(params: StableParams, dt: float, rng: np.random.Generator, size=None):
    """Draw L_{t+dt} - L_t.

    Returns shape (d,) for ``size=None`` and (size, d) otherwise.
    """
    _check_dt(dt)
    n = 1 if size is None else int(size)
    d = params.dim
    scale = (params.c_exponent * dt) ** (1.0 / params.alpha)
    if d == 1:
        out = scale * standard_symmetric_stable(params.alpha, rng, (n, 1))
    else:
        a = positive_stable(params.alpha / 2.0, rng, (n, 1))
        # exp(-(s^2 |z|^2 / 2)^{a/2}) = exp(-C dt |z|^a)  <=>  s^2 = 2 (C dt)^{2/a}
        g = rng.standard_normal((n, d)) * (math.sqrt(2.0) * scale)
        out = np.sqrt(a) * g
    return out[0] if size is None else out


def sample_directions(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    """Uniform points on S^{d-1}; for d = 1 these are random signs."""
    if dim == 1:
        return np.where(rng.random((n, 1)) < 0.5, -1.0, 1.0)
    g = rng.standard_normal((n, dim))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def sample_large_marks(params: StableParams, rng: np.random.Generator, n: int) -> np.ndarray:
    """Marks from nu restricted to |u| > delta, normalized: |u| = delta U^{-1/a}."""
    r = params.delta * rng.random(n) ** (-1.0 / params.alpha)
    # rng.random can return exactly 0 with probability ~2^-53; map to a huge finite jump
    r = np.where(np.isfinite(r), r, np.finfo(float).max ** 0.5)
    return r[:, None] * sample_directions(rng, n, params.dim)


def sample_band_marks(params: StableParams, lo: float, hi: float, rng, n: int) -> np.ndarray:
    """Marks from nu restricted to lo < |u| <= hi (inverse-CDF of the truncated power law)."""
    a = params.alpha
    v = rng.random(n)
    r = (lo ** (-a) - v * (lo ** (-a) - hi ** (-a))) ** (-1.0 / a)
    return r[:, None] * sample_directions(rng, n, params.dim)


def band_rate(params: StableParams, lo: float, hi: float) -> float:
    """nu(lo < |u| <= hi)."""
    return params.tail_mass(lo) - params.tail_mass(hi)


def small_jump_variance(params: StableParams, mode: Optional[str] = None) -> float:
    """Per-coordinate variance rate of the Gaussian part of the small jumps.

    In ``gaussian`` mode this covers all of |u| <= delta; in ``series`` mode
    only the residual |u| <= series_cutoff.
    """
    mode = mode or params.small_jumps
    radius = params.delta if mode == "gaussian" else params.cutoff
    return params.truncated_second_moment(radius) / params.dim


def decompose_jumps(params: StableParams, dt: float, rng: np.random.Generator,
                    size=None, mode: Optional[str] = None):
    """Levy-Ito split of the stable increment over ``dt``.

    Returns ``(small, large)``: ``small`` is the compensated small-jump
    increment with shape (d,) or (size, d); ``large`` is a :class:`JumpBatch`
    of the uncompensated jumps with |u| > delta. The symmetric Levy measure has
    zero compensator on every ball, so ``large.compensation`` is zero and the
    alpha < 1 form (a single uncompensated integral) coincides with this one.
    """
    _check_dt(dt)
    mode = mode or params.small_jumps
    if mode not in SMALL_JUMP_MODES:
        raise ArgumentError(f"unknown small-jump mode {mode!r}")
    n = 1 if size is None else int(size)
    d = params.dim

    counts = rng.poisson(params.large_jump_rate() * dt, n)
    k = int(counts.sum())
    index = np.repeat(np.arange(n), counts)
    times = rng.uniform(0.0, dt, k)
    order = np.lexsort((times, index))
    marks = sample_large_marks(params, rng, k)
    large = JumpBatch(times=times[order], marks=marks[order],
                      compensation=np.zeros((n, d)), index=index[order])

    sd = math.sqrt(small_jump_variance(params, mode) * dt)
    small = sd * rng.standard_normal((n, d))
    if mode == "series":
        lo, hi = params.cutoff, params.delta
        c = rng.poisson(band_rate(params, lo, hi) * dt, n)
        owners = np.repeat(np.arange(n), c)
        np.add.at(small, owners, sample_band_marks(params, lo, hi, rng, int(c.sum())))

    if size is None:
        large.compensation = large.compensation[0]
        return small[0], large
    return small, large


def empirical_cf(samples: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Real part of the empirical characteristic function (symmetric laws).

    ``samples`` (n, d), ``z`` (k, d) -> (k,).
    """
    samples = np.atleast_2d(samples)
    z = np.atleast_2d(z)
    return np.array([np.mean(np.cos(samples @ zi)) for zi in z])
