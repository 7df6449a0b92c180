"""Jump spaces (U, nu) with the split U_0 = {|u| <= delta} / U \\ U_0.

A jump space knows how to sample marks on both parts, how much Gaussian
variance stands in for small jumps it does not sample individually, and how to
discretize nu for quadrature in the generator.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np

from . import noise
from .errors import ArgumentError, DomainError
from .noise import StableParams


@dataclass(frozen=True)
class QuadratureSpec:
    """Log-radial quadrature for integrals against nu.

    ``inner_cutoff`` defaults to 1e-4 * delta; ``outer_cutoff`` defaults to
    the radius where the tail mass of nu (times sup|h|) drops below 1e-8.
    """

    inner_cutoff: Optional[float] = None
    outer_cutoff: Optional[float] = None
    nodes: int = 16
    angles: int = 32

    def __post_init__(self):
        if self.nodes < 4:
            raise ArgumentError("at least 4 quadrature nodes per decade are required")
        if self.inner_cutoff is not None and self.inner_cutoff <= 0:
            raise ArgumentError("inner_cutoff must be positive")
        if (
            self.inner_cutoff is not None
            and self.outer_cutoff is not None
            and not self.inner_cutoff < self.outer_cutoff
        ):
            raise ArgumentError("inner_cutoff must be smaller than outer_cutoff")


@lru_cache(maxsize=16)
def _gauss_legendre(order: int):
    x, w = np.polynomial.legendre.leggauss(order)
    x.flags.writeable = False
    w.flags.writeable = False
    return x, w


def _log_radial(lo: float, hi: float, per_decade: int, breaks=()):
    """Gauss-Legendre nodes in log r on [lo, hi]; returns radii and dr-weights.

    ``breaks`` are extra panel edges (radii where the integrand has a kink).
    """
    if hi <= lo:
        return np.empty(0), np.empty(0)
    decades = math.log10(hi / lo)
    panels = max(1, int(math.ceil(decades)))
    x, w = _gauss_legendre(per_decade)
    edges = np.linspace(math.log(lo), math.log(hi), panels + 1)
    inner = [math.log(b) for b in breaks if lo < b < hi]
    if inner:
        edges = np.unique(np.concatenate([edges, inner]))
    rs, ws = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        s = 0.5 * (b - a) * x + 0.5 * (b + a)
        rs.append(np.exp(s))
        ws.append(0.5 * (b - a) * w * np.exp(s))
    return np.concatenate(rs), np.concatenate(ws)


def _directions(dim: int, angles: int) -> np.ndarray:
    if dim == 1:
        return np.array([[1.0], [-1.0]])
    if dim == 2:
        th = 2 * np.pi * (np.arange(angles) + 0.5) / angles
        return np.column_stack([np.cos(th), np.sin(th)])
    raise DomainError("radial quadrature of nu is implemented for d <= 2")


class JumpSpace:
    """Base class: no jumps at all."""

    dim: int = 1
    delta: float = 1.0
    symmetric: bool = True
    finite_second_moment: bool = True

    def large_rate(self) -> float:
        return 0.0

    def small_rate(self) -> float:
        """Rate of individually sampled small jumps."""
        return 0.0

    def sample_large(self, rng, n):
        return np.zeros((n, self.dim))

    def sample_small(self, rng, n):
        return np.zeros((n, self.dim))

    def small_gauss_variance(self) -> float:
        """Per-coordinate variance rate of the Gaussian stand-in for small jumps."""
        return 0.0

    def quadrature(self, part: str, quad: QuadratureSpec, reach: float = math.inf, scale: float = 1.0,
                   breaks=()):
        """Nodes (k, d) and nu-weights (k,) on ``part`` in {"small", "large"}.

        ``reach`` is the radius beyond which the caller's integrand is known
        to be constant; quadrature stops there and :meth:`tail_mass` covers
        the rest.
        """
        return np.zeros((0, self.dim)), np.zeros(0)

    def tail_mass(self, radius: float) -> float:
        return 0.0

    def inner_second_moment(self, radius: float) -> float:
        """int_{|u| < radius} |u|^2 nu(du) (the part skipped by quadrature)."""
        return 0.0

    def describe(self) -> dict:
        return {"kind": "none"}

    @property
    def active(self) -> bool:
        return False


@dataclass(frozen=True)
class NoJumps(JumpSpace):
    dim: int = 1
    delta: float = 1.0


class StableJumps(JumpSpace):
    """nu = C_{d,a} |u|^{-(d+a)} du split at |u| = delta."""

    symmetric = True
    finite_second_moment = False

    def __init__(self, params: StableParams):
        self.params = params
        self.dim = params.dim
        self.delta = params.delta

    @property
    def active(self) -> bool:
        return True

    def large_rate(self):
        return self.params.large_jump_rate()

    def sample_large(self, rng, n):
        return noise.sample_large_marks(self.params, rng, n)

    def small_rate(self):
        if self.params.small_jumps == "series":
            return noise.band_rate(self.params, self.params.cutoff, self.delta)
        return 0.0

    def sample_small(self, rng, n):
        return noise.sample_band_marks(self.params, self.params.cutoff, self.delta, rng, n)

    def small_gauss_variance(self):
        return noise.small_jump_variance(self.params)

    def default_inner(self, quad: QuadratureSpec) -> float:
        return quad.inner_cutoff if quad.inner_cutoff is not None else 1e-4 * self.delta

    def default_outer(self, quad: QuadratureSpec, scale: float = 1.0) -> float:
        if quad.outer_cutoff is not None:
            return quad.outer_cutoff
        # tail_mass(R) * scale <= 1e-8
        p = self.params
        const = p.c_levy * noise.sphere_area(p.dim) / p.alpha
        return max(self.delta, (const * max(scale, 1e-300) / 1e-8) ** (1.0 / p.alpha))

    def quadrature(self, part, quad, reach=math.inf, scale=1.0, breaks=()):
        p = self.params
        if part == "small":
            lo, hi = self.default_inner(quad), self.delta
        elif part == "large":
            lo, hi = self.delta, min(reach, self.default_outer(quad, scale))
        else:
            raise ArgumentError(f"unknown part {part!r}")
        r, w = _log_radial(lo, hi, quad.nodes, breaks)
        dirs = _directions(p.dim, quad.angles)
        if p.dim == 1:
            shell = w * p.c_levy * r ** (-1.0 - p.alpha)
            dir_w = np.ones(len(dirs))
        else:
            shell = w * p.c_levy * r ** (p.dim - 1 - p.dim - p.alpha)
            dir_w = np.full(len(dirs), noise.sphere_area(p.dim) / len(dirs))
        nodes = (r[:, None, None] * dirs[None, :, :]).reshape(-1, p.dim)
        weights = (shell[:, None] * dir_w[None, :]).reshape(-1)
        return nodes, weights

    def tail_mass(self, radius):
        return self.params.tail_mass(radius)

    def inner_second_moment(self, radius):
        return self.params.truncated_second_moment(radius)

    def describe(self):
        return {"kind": "stable", **self.params.as_dict()}


class UniformJumps(JumpSpace):
    """Finite measure with constant density on [lo, hi] \\ {0} (d = 1).

    Marks with |u| <= delta are small (compensated), the rest large.
    """

    symmetric = False
    finite_second_moment = True

    def __init__(self, lo: float = -1.0, hi: float = 1.0, mass: float = 1.0, delta: float = 1.0,
                 order: int = 32):
        if not hi > lo:
            raise ArgumentError("need hi > lo")
        if mass <= 0:
            raise ArgumentError("mass must be positive")
        self.lo, self.hi, self.mass, self.delta = float(lo), float(hi), float(mass), float(delta)
        self.dim = 1
        self.order = order
        self.symmetric = lo == -hi

    @property
    def active(self):
        return True

    def _mass_on(self, a, b):
        a, b = max(a, self.lo), min(b, self.hi)
        return self.mass * max(0.0, b - a) / (self.hi - self.lo)

    def _intervals(self, part):
        d = self.delta
        if part == "small":
            return [(-d, d)]
        return [(-math.inf, -d), (d, math.inf)]

    def small_rate(self):
        return self._mass_on(-self.delta, self.delta)

    def large_rate(self):
        return self.mass - self.small_rate()

    def _sample(self, rng, n, part):
        pieces = [(max(a, self.lo), min(b, self.hi)) for a, b in self._intervals(part)]
        pieces = [(a, b) for a, b in pieces if b > a]
        if not pieces or n == 0:
            return np.zeros((n, 1))
        lengths = np.array([b - a for a, b in pieces])
        v = rng.random(n) * lengths.sum()
        out = np.empty(n)
        start = 0.0
        for (a, b), ln in zip(pieces, lengths):
            sel = (v >= start) & (v < start + ln)
            out[sel] = a + (v[sel] - start)
            start += ln
        return out[:, None]

    def sample_small(self, rng, n):
        return self._sample(rng, n, "small")

    def sample_large(self, rng, n):
        return self._sample(rng, n, "large")

    def quadrature(self, part, quad, reach=math.inf, scale=1.0, breaks=()):
        x, w = _gauss_legendre(self.order)
        nodes, weights = [], []
        dens = self.mass / (self.hi - self.lo)
        for a, b in self._intervals(part):
            a, b = max(a, self.lo), min(b, self.hi)
            # split at 0 so the node set never hits the excluded origin
            cuts = sorted({a, b, 0.0, *[c for c in breaks if a < c < b], *[-c for c in breaks if a < -c < b]})
            for lo, hi in zip(cuts[:-1], cuts[1:]):
                if hi > lo and lo >= a and hi <= b:
                    nodes.append(0.5 * (hi - lo) * x + 0.5 * (hi + lo))
                    weights.append(0.5 * (hi - lo) * w * dens)
        if not nodes:
            return np.zeros((0, 1)), np.zeros(0)
        return np.concatenate(nodes)[:, None], np.concatenate(weights)

    def second_moment(self):
        return self.mass * (self.hi ** 3 - self.lo ** 3) / (3.0 * (self.hi - self.lo))

    def describe(self):
        return {"kind": "uniform", "lo": self.lo, "hi": self.hi, "mass": self.mass, "delta": self.delta}
