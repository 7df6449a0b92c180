"""The generator L of a jump SDE, the fractional Laplacian, and the adjoint L*.

For h in C^2,

    (Lh)(y) = <dh, b> + 1/2 tr(d^2h sigma sigma^T)
              + int_{|u|<=delta} (h(y+f) - h(y) - <dh, f>) nu(du)
              + int_{|u|>delta}  (h(y+g) - h(y)) nu(du).

The jump integrals use the log-radial quadrature of the jump space. The
nonlocal operator L_alpha = C[-(-Delta)^{alpha/2}] is applied as the Fourier
multiplier Psi on a periodic grid.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import fft as sfft

from .errors import ArgumentError, DomainError
from .grid import Axis, DensityGrid
from .jumps import QuadratureSpec, StableJumps
from .noise import BrownianParams, StableParams
from .sde import CoefficientSet, simulate_ensemble


# ---------------------------------------------------------------------------
# test functions
# ---------------------------------------------------------------------------


@dataclass
class TestFunction:
    """A C^2 function with its derivatives, vectorized over (n, d) inputs.

    ``support_radius`` and ``center`` describe a ball outside which h == 0
    (inf when not compactly supported). ``sup_abs`` is sup|h| (inf for
    unbounded h) and ``sup_hessian`` bounds the spectral norm of d^2h.
    """

    __test__ = False  # not a pytest class

    value: Callable
    gradient: Callable
    hessian: Callable
    dim: int = 1
    center: Optional[np.ndarray] = None
    support_radius: float = math.inf
    sup_abs: float = math.inf
    sup_hessian: float = math.inf
    name: str = ""
    terms: Optional[list] = None  # (a_k, h_k) when built by combine

    def __post_init__(self):
        self.center = np.zeros(self.dim) if self.center is None else np.asarray(self.center, float)

    @property
    def bounded(self) -> bool:
        return math.isfinite(self.sup_abs)

    def __call__(self, x):
        return self.value(np.atleast_2d(np.asarray(x, float)))

    def fd_check(self, points, step: float = 1e-4) -> dict:
        """Relative disagreement of gradient/hessian with central differences."""
        x = np.atleast_2d(np.asarray(points, float))
        n, d = x.shape
        g_fd = np.empty((n, d))
        h_fd = np.empty((n, d, d))
        e = np.eye(d) * step
        for i in range(d):
            g_fd[:, i] = (self.value(x + e[i]) - self.value(x - e[i])) / (2 * step)
            h_fd[:, :, i] = (self.gradient(x + e[i]) - self.gradient(x - e[i])) / (2 * step)
        g, h = self.gradient(x), self.hessian(x)
        scale_g = max(1.0, float(np.abs(g).max()))
        scale_h = max(1.0, float(np.abs(h).max()))
        return {
            "gradient": float(np.abs(g - g_fd).max() / scale_g),
            "hessian": float(np.abs(h - h_fd).max() / scale_h),
        }

    @staticmethod
    def combine(terms: Sequence) -> "TestFunction":
        """sum_k a_k h_k for pairs (a_k, h_k)."""
        terms = [(float(a), h) for a, h in terms]
        dim = terms[0][1].dim
        centers = {tuple(h.center) for _, h in terms}
        same_center = len(centers) == 1
        return TestFunction(
            value=lambda x: sum(a * h.value(x) for a, h in terms),
            gradient=lambda x: sum(a * h.gradient(x) for a, h in terms),
            hessian=lambda x: sum(a * h.hessian(x) for a, h in terms),
            dim=dim,
            center=terms[0][1].center if same_center else None,
            support_radius=max(h.support_radius for _, h in terms) if same_center else math.inf,
            sup_abs=sum(abs(a) * h.sup_abs for a, h in terms),
            sup_hessian=sum(abs(a) * h.sup_hessian for a, h in terms),
            name="+".join(h.name for _, h in terms),
            terms=terms,
        )


def constant_function(c: float = 1.0, dim: int = 1) -> TestFunction:
    return TestFunction(
        value=lambda x: np.full(len(x), float(c)),
        gradient=lambda x: np.zeros_like(x),
        hessian=lambda x: np.zeros((len(x), x.shape[1], x.shape[1])),
        dim=dim, sup_abs=abs(c), sup_hessian=0.0, name="constant",
    )


def _bump_profile(s):
    """phi(s) = exp(1 - 1/(1-s)) on s < 1 and its first two s-derivatives."""
    inside = s < 1.0
    q = np.where(inside, 1.0 - s, 1.0)
    phi = np.where(inside, np.exp(1.0 - 1.0 / q), 0.0)
    d1 = np.where(inside, -phi / q ** 2, 0.0)
    d2 = np.where(inside, phi * (1.0 / q ** 4 - 2.0 / q ** 3), 0.0)
    return phi, d1, d2


def bump(center=0.0, radius: float = 1.0, dim: int = 1) -> TestFunction:
    """Smooth bump exp(1 - 1/(1 - |x-c|^2/R^2)) with value 1 at c, supported in B(c, R)."""
    c = np.broadcast_to(np.asarray(center, float), (dim,)).copy()
    R2 = float(radius) ** 2

    def parts(x):
        z = x - c
        s = np.sum(z * z, axis=1) / R2
        return z, _bump_profile(s)

    def value(x):
        return parts(x)[1][0]

    def gradient(x):
        z, (_, d1, _) = parts(x)
        return (2.0 / R2) * d1[:, None] * z

    def hessian(x):
        z, (_, d1, d2) = parts(x)
        eye = np.eye(dim)[None]
        return (4.0 / R2 ** 2) * d2[:, None, None] * z[:, :, None] * z[:, None, :] + (
            2.0 / R2
        ) * d1[:, None, None] * eye

    # radial scan for sup ||d^2 h||: eigenvalues 2 phi'/R^2 and 2 phi'/R^2 + 4 s phi''/R^2
    s = np.linspace(0.0, 1.0, 20001)[:-1]
    _, d1, d2 = _bump_profile(s)
    lam = np.maximum(np.abs(2 * d1 / R2), np.abs(2 * d1 / R2 + 4 * s * d2 / R2))
    return TestFunction(value, gradient, hessian, dim=dim, center=c, support_radius=float(radius),
                        sup_abs=1.0, sup_hessian=float(lam.max()) * 1.001,
                        name=f"bump(c={c.tolist()},R={radius})")


def gaussian_function(center=0.0, scale: float = 1.0, dim: int = 1) -> TestFunction:
    """exp(-|x-c|^2 / (2 s^2)); bounded, not compactly supported."""
    c = np.broadcast_to(np.asarray(center, float), (dim,)).copy()
    s2 = float(scale) ** 2

    def value(x):
        z = x - c
        return np.exp(-np.sum(z * z, axis=1) / (2 * s2))

    def gradient(x):
        return -(x - c) / s2 * value(x)[:, None]

    def hessian(x):
        z = x - c
        v = value(x)[:, None, None]
        return v * (z[:, :, None] * z[:, None, :] / s2 ** 2 - np.eye(dim)[None] / s2)

    return TestFunction(value, gradient, hessian, dim=dim, center=c, sup_abs=1.0,
                        sup_hessian=1.0 / s2, name=f"gaussian(c={c.tolist()},s={scale})")


def quadratic(dim: int = 1) -> TestFunction:
    """|x|^2 (unbounded)."""
    return TestFunction(
        value=lambda x: np.sum(x * x, axis=1),
        gradient=lambda x: 2.0 * x,
        hessian=lambda x: np.broadcast_to(2.0 * np.eye(x.shape[1]), (len(x), x.shape[1], x.shape[1])).copy(),
        dim=dim, sup_hessian=2.0, name="quadratic",
    )


def default_battery(dim: int = 1) -> list:
    """Three bumps of different centers and widths."""
    return [bump(0.0, 1.0, dim), bump(0.5, 1.5, dim), bump(-1.0, 2.0, dim)]


# ---------------------------------------------------------------------------
# the generator
# ---------------------------------------------------------------------------


@dataclass
class GeneratorValue:
    """(Lh)(y) with a bound on the neglected inner jump mass and a per-term split."""

    value: np.ndarray
    error_bound: float
    terms: dict = field(default_factory=dict)

    def __float__(self):
        return float(np.asarray(self.value).reshape(-1)[0])


def _jump_breaks(h: TestFunction, y: np.ndarray) -> list:
    """Radii where u -> h(y + u) crosses the edge of its support (single point, d = 1)."""
    if not math.isfinite(h.support_radius) or len(y) != 1 or y.shape[1] != 1:
        return []
    off = float(h.center[0] - y[0, 0])
    R = h.support_radius
    return sorted({abs(off + R), abs(off - R)} - {0.0})


def apply_generator(h: TestFunction, y, coeffs: CoefficientSet,
                    quad: Optional[QuadratureSpec] = None) -> GeneratorValue:
    """Evaluate (Lh)(y) for one point (d,) or a batch (n, d).

    The inner ball |u| < eps skipped by the quadrature is replaced by its
    second-order term 1/2 d^2h : int_{|u|<eps} u u^T nu(du) (identity small
    jumps only); the reported bound is the cruder
    1/2 sup||d^2h|| int_{|u|<eps} |u|^2 nu(du).

    Combined test functions are evaluated term by term, so L acts linearly
    on them exactly. Compactly supported h in d = 1 is evaluated point by
    point with quadrature breaks at the support edges.
    """
    quad = quad or QuadratureSpec()
    y_arr = np.asarray(y, dtype=float)
    single = y_arr.ndim <= 1
    y2 = y_arr.reshape(-1, coeffs.dim)
    n, d = y2.shape

    if h.terms is not None:
        parts = [(a, apply_generator(hk, y2, coeffs, quad)) for a, hk in h.terms]
        total = sum(a * np.asarray(g.value) for a, g in parts)
        bound = sum(abs(a) * g.error_bound for a, g in parts)
        keys = parts[0][1].terms.keys()
        terms = {k: sum(a * np.asarray(g.terms[k]) for a, g in parts) for k in keys}
        if single:
            return GeneratorValue(float(total[0]), float(bound), {k: float(v[0]) for k, v in terms.items()})
        return GeneratorValue(total, float(bound), terms)
    if n > 1 and d == 1 and math.isfinite(h.support_radius) and coeffs.jump_space.active:
        each = [apply_generator(h, y2[i:i + 1], coeffs, quad) for i in range(n)]
        value = np.concatenate([g.value for g in each])
        terms = {k: np.concatenate([g.terms[k] for g in each]) for k in each[0].terms}
        return GeneratorValue(value, max(g.error_bound for g in each), terms)

    hy = h.value(y2)
    gy = h.gradient(y2)
    drift = np.sum(gy * coeffs.drift(y2), axis=1)
    if coeffs.diffusion is not None:
        s = coeffs.diffusion(y2)
        a = np.einsum("nik,njk->nij", s, s)
        diff = 0.5 * np.einsum("nij,nij->n", h.hessian(y2), a)
    else:
        diff = np.zeros(n)
    small = np.zeros(n)
    large = np.zeros(n)
    bound = 0.0
    js = coeffs.jump_space

    if js.active:
        breaks = _jump_breaks(h, y2)
        # compensated small jumps
        nodes, w = js.quadrature("small", quad, breaks=breaks)
        if len(nodes):
            k = len(nodes)
            ys = np.repeat(y2, k, axis=0)
            us = np.tile(nodes, (n, 1))
            fu = coeffs.f(ys, us)
            integrand = h.value(ys + fu) - np.repeat(hy, k) - np.sum(np.repeat(gy, k, axis=0) * fu, axis=1)
            small = integrand.reshape(n, k) @ w
        if isinstance(js, StableJumps):
            eps = js.default_inner(quad)
            m_eps = js.inner_second_moment(eps)
            if coeffs.small_jump is None:
                small = small + 0.5 * np.trace(h.hessian(y2), axis1=1, axis2=2) * m_eps / d
            bound += 0.5 * h.sup_hessian * m_eps

        # uncompensated large jumps
        if js.large_rate() > 0:
            if not h.bounded and not js.finite_second_moment:
                raise DomainError(
                    "large-jump term int (h(y+g) - h(y)) nu(du) diverges: h is unbounded and nu "
                    "is heavy-tailed; use a bounded test function or a bounded-jump model"
                )
            reach = math.inf
            if math.isfinite(h.support_radius) and coeffs.large_jump is None:
                reach = float(np.max(np.linalg.norm(y2 - h.center, axis=1))) + h.support_radius
            nodes, w = js.quadrature("large", quad, reach=reach, scale=h.sup_abs if h.bounded else 1.0,
                                     breaks=breaks)
            if len(nodes):
                k = len(nodes)
                ys = np.repeat(y2, k, axis=0)
                gu = coeffs.g(ys, np.tile(nodes, (n, 1)))
                large = (h.value(ys + gu) - np.repeat(hy, k)).reshape(n, k) @ w
            if isinstance(js, StableJumps):
                outer = max(js.delta, min(reach, js.default_outer(quad, h.sup_abs)))
                tail = js.tail_mass(outer)
                large = large - hy * tail
                if not math.isfinite(reach):
                    bound += 2.0 * h.sup_abs * tail

    total = drift + diff + small + large
    terms = {"drift": drift, "diffusion": diff, "small_jumps": small, "large_jumps": large}
    if single:
        total = float(total[0])
        terms = {k: float(v[0]) for k, v in terms.items()}
    return GeneratorValue(total, float(bound), terms)


# ---------------------------------------------------------------------------
# spectral operators
# ---------------------------------------------------------------------------


def _wavenumbers(axes) -> list:
    return [2.0 * np.pi * np.fft.fftfreq(a.n, d=a.h) for a in axes]


def fractional_multiplier(axes, params) -> np.ndarray:
    """Psi on the DFT frequency grid: -C|k|^alpha, or -|k|^2 in Brownian mode."""
    ks = np.meshgrid(*_wavenumbers(axes), indexing="ij")
    k2 = sum(k * k for k in ks)
    if isinstance(params, BrownianParams):
        return -k2
    return -params.c_exponent * k2 ** (params.alpha / 2.0)


def _check_uniform(grid: DensityGrid):
    if not isinstance(grid, DensityGrid) or not all(isinstance(a, Axis) for a in grid.axes):
        raise ArgumentError("a uniform DensityGrid is required")


def _wrap_warning(grid: DensityGrid, tol: float = 1e-8):
    if grid.boundary_mass(0.02) > tol:
        warnings.warn("values near the box edge exceed 1e-8; periodic wrap-around is not negligible",
                      RuntimeWarning, stacklevel=3)


def apply_fractional_laplacian(values: DensityGrid, params) -> DensityGrid:
    """Forward FFT, multiply by Psi(k), inverse FFT. Exact for band-limited periodic data."""
    _check_uniform(values)
    _wrap_warning(values)
    mult = fractional_multiplier(values.axes, params)
    out = np.real(sfft.ifftn(mult * sfft.fftn(values.values)))
    return values.like(out)


class AdjointOperator:
    """Discrete L* on a fixed grid, reusable across many applications.

    The local part is a sparse matrix: drift by conservative face fluxes
    (``upwind`` or ``central``), diffusion in flux form plus centered mixed
    differences. The nonlocal part is the Fourier multiplier Psi.

    ``boundary="closed"`` puts zero drift flux through both faces of the
    node at ``lo`` (the one node without a mirror image) and wraps diffusion
    periodically, so column sums vanish, mass is conserved exactly, and an
    odd drift gives a reflection-symmetric operator. ``boundary="open"``
    lets the drift carry b(face) * psi(edge node) through them; the net
    outflow is what :meth:`apply` reports as the boundary flux.
    """

    def __init__(self, axes, drift: Optional[Callable] = None, sigma: Optional[Callable] = None,
                 params=None, scheme: str = "upwind", boundary: str = "open"):
        if scheme not in ("upwind", "central"):
            raise ArgumentError("scheme must be 'upwind' or 'central'")
        if boundary not in ("open", "closed"):
            raise ArgumentError("boundary must be 'open' or 'closed'")
        self.boundary = boundary
        self.axes = tuple(axes)
        self.shape = tuple(a.n for a in self.axes)
        self.size = int(np.prod(self.shape))
        self.dim = len(self.axes)
        self.scheme = scheme
        self.params = params
        mesh = np.meshgrid(*[a.nodes for a in self.axes], indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=1)
        idx = np.arange(self.size).reshape(self.shape)

        rows, cols, vals = [], [], []
        self._outer = []  # (node indices, outward drift, face area) per outer face, for flux reports

        def add(r, c, v):
            rows.append(r.ravel())
            cols.append(c.ravel())
            vals.append(np.broadcast_to(v, r.shape).ravel())

        for j, ax in enumerate(self.axes):
            inner = [slice(None)] * self.dim
            inner[j] = slice(0, ax.n - 1)
            inner = tuple(inner)
            me = idx[inner]
            nxt = np.roll(idx, -1, axis=j)[inner]
            area = float(np.prod([a.h for k, a in enumerate(self.axes) if k != j]))
            if drift is not None:
                face = pts.copy()
                face[:, j] += 0.5 * ax.h
                bf = drift(face)[:, j].reshape(self.shape)[inner]
                dme, dnx = me, nxt
                if boundary == "closed":
                    # the node at lo has no mirror image; walling both of its
                    # faces keeps the layout symmetric about 0
                    sl = [slice(None)] * self.dim
                    sl[j] = slice(1, None)
                    sl = tuple(sl)
                    bf, dme, dnx = bf[sl], me[sl], nxt[sl]
                if scheme == "upwind":
                    c_me, c_nx = np.maximum(bf, 0.0), np.minimum(bf, 0.0)
                else:
                    c_me, c_nx = 0.5 * bf, 0.5 * bf
                # flux F = c_me psi_me + c_nx psi_nxt leaves `me` and enters `nxt`
                add(dme, dme, -c_me / ax.h)
                add(dme, dnx, -c_nx / ax.h)
                add(dnx, dme, c_me / ax.h)
                add(dnx, dnx, c_nx / ax.h)
                lo = [slice(None)] * self.dim
                lo[j] = 0
                hi = [slice(None)] * self.dim
                hi[j] = ax.n - 1
                left = pts.copy()
                left[:, j] -= 0.5 * ax.h
                right = pts.copy()
                right[:, j] += 0.5 * ax.h
                # outward drift on the outer faces
                b_left = -drift(left)[:, j].reshape(self.shape)[tuple(lo)]
                b_right = drift(right)[:, j].reshape(self.shape)[tuple(hi)]
                self._outer.append((idx[tuple(lo)].ravel(), b_left.ravel(), area))
                self._outer.append((idx[tuple(hi)].ravel(), b_right.ravel(), area))
                if boundary == "open":
                    add(idx[tuple(lo)], idx[tuple(lo)], -b_left / ax.h)
                    add(idx[tuple(hi)], idx[tuple(hi)], -b_right / ax.h)
            if sigma is not None:
                if j == 0:
                    s = sigma(pts)
                    self._a = np.einsum("nik,njk->nij", s, s).reshape(self.shape + (self.dim, self.dim))
                a_jj = self._a[..., j, j]
                k = 0.5 / ax.h ** 2
                sme, snx, s_a = me, nxt, a_jj[inner]
                if boundary == "closed":
                    # periodic wrap: conservative and mirror symmetric
                    sme, snx, s_a = idx, np.roll(idx, -1, axis=j), a_jj
                # G = (a psi)_nxt - (a psi)_me across each face
                add(sme, sme, -k * s_a)
                add(sme, snx, k * a_jj.ravel()[snx])
                add(snx, sme, k * s_a)
                add(snx, snx, -k * a_jj.ravel()[snx])

        self.local = None
        n = self.size
        if rows:
            from scipy import sparse

            self.local = sparse.csr_matrix(
                (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
            )
            if sigma is not None and self.dim > 1:
                self.local = self.local + self._mixed_terms(idx)
        self.mult = fractional_multiplier(self.axes, params) if params is not None else None

    def _mixed_terms(self, idx):
        from scipy import sparse

        def centered(j):
            h = self.axes[j].h
            up = np.roll(idx, -1, axis=j).ravel()
            dn = np.roll(idx, 1, axis=j).ravel()
            r = np.concatenate([idx.ravel(), idx.ravel()])
            c = np.concatenate([up, dn])
            v = np.concatenate([np.full(self.size, 0.5 / h), np.full(self.size, -0.5 / h)])
            return sparse.csr_matrix((v, (r, c)), shape=(self.size, self.size))

        out = sparse.csr_matrix((self.size, self.size))
        for i in range(self.dim):
            for j in range(self.dim):
                if i != j:
                    diag = sparse.diags(self._a[..., i, j].ravel())
                    out = out + 0.5 * (centered(i) @ (centered(j) @ diag))
        return out

    def apply(self, psi: np.ndarray, with_flux: bool = False):
        psi = np.asarray(psi, dtype=float)
        flat = psi.reshape(-1)
        out = np.zeros(self.size)
        if self.local is not None:
            out += self.local @ flat
        if self.mult is not None:
            out += np.real(sfft.ifftn(self.mult * sfft.fftn(flat.reshape(self.shape)))).ravel()
        out = out.reshape(self.shape)
        if not with_flux:
            return out
        # net outflow through the outer faces (what closed walls withhold)
        leak = sum(float((b * flat[i]).sum() * area) for i, b, area in self._outer)
        return out, leak


def apply_adjoint(density: DensityGrid, drift: Optional[Callable] = None, sigma: Optional[Callable] = None,
                  params=None, scheme: str = "upwind", boundary: str = "open") -> DensityGrid:
    """(L* psi) = -div(b psi) + 1/2 d_ij((sigma sigma^T)_ij psi) + L_alpha psi on the grid.

    ``meta["boundary_flux"]`` is the net drift outflow through the outer
    faces. With open walls the output integrates to minus that flux; with
    closed walls it integrates to zero up to rounding.
    """
    _check_uniform(density)
    op = AdjointOperator(density.axes, drift, sigma, params, scheme, boundary)
    out, leak = op.apply(density.values, with_flux=True)
    return density.like(out, boundary_flux=leak)


# ---------------------------------------------------------------------------
# simulation versus generator
# ---------------------------------------------------------------------------


@dataclass
class ConsistencyReport:
    """Difference quotients (E h(X_dt) - h(y))/dt against (Lh)(y).

    ``slope`` / ``loglog_intercept`` fit log|Q(dt) - Lh| = c + slope log dt
    over the dts whose error is resolved above Monte Carlo noise, weighting
    each point by its error-to-noise ratio.
    ``intercept`` is Q extrapolated to dt = 0 by a weighted polynomial fit
    in dt, with standard error ``intercept_se``.
    """

    generator_value: float
    quadrature_bound: float
    per_dt: list
    slope: Optional[float]
    loglog_intercept: Optional[float]
    intercept: float
    intercept_se: float
    inconclusive: bool
    consistent: bool
    name: str = ""

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "generator_value": self.generator_value,
            "quadrature_bound": self.quadrature_bound,
            "slope": self.slope,
            "loglog_intercept": self.loglog_intercept,
            "intercept": self.intercept,
            "intercept_se": self.intercept_se,
            "inconclusive": self.inconclusive,
            "consistent": self.consistent,
            "per_dt": self.per_dt,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @property
    def passed(self) -> bool:
        slope_ok = self.inconclusive or (self.slope is not None and self.slope >= 0.5)
        return self.consistent and slope_ok


def generator_consistency_check(h: TestFunction, y, coeffs: CoefficientSet, dts: Sequence[float],
                                n_paths: int, seed=0, quad: Optional[QuadratureSpec] = None,
                                antithetic: Optional[bool] = None, n_sigma: float = 3.0,
                                degree: int = 3) -> ConsistencyReport:
    """Fit the convergence of the simulated difference quotient to apply_generator.

    Each dt uses one Euler step from ``y`` over ``n_paths`` paths (block
    streams, antithetic pairs when the noise is symmetric). The intercept
    is a weighted polynomial fit of Q(dt) of the given degree (capped at
    len(dts) - 1) evaluated at dt = 0.

    Stable drivers must sample small jumps in ``series`` mode here: the
    Gaussian stand-in changes the generator by a dt-independent amount.
    """
    if degree < 1:
        raise ArgumentError("degree must be >= 1")
    dts = [float(v) for v in dts]
    if len(dts) < 2 or any(b >= a for a, b in zip(dts, dts[1:])):
        raise ArgumentError("dts must be a decreasing sequence of at least two steps")
    y = np.asarray(y, float).reshape(coeffs.dim)
    gv = apply_generator(h, y, coeffs, quad)
    lh = float(gv)
    if antithetic is None:
        antithetic = coeffs.jump_space.symmetric or not coeffs.jump_space.active
    h0 = float(h.value(y[None])[0])

    rows = []
    for i, dt in enumerate(dts):
        chunk = 1 << 16
        ens = simulate_ensemble(y, coeffs, n_paths, dt, dt, seed=[int(_seed_int(seed)), i],
                                record_every=1, chunk_size=chunk, streams="block", antithetic=antithetic)
        vals = h.value(ens.final) - h0
        if antithetic:
            first, second = _antithetic_pairs(n_paths, chunk)
            vals = 0.5 * (vals[first] + vals[second])
        vals = vals[np.isfinite(vals)]
        q = vals.mean() / dt
        se = vals.std(ddof=1) / math.sqrt(len(vals)) / dt
        rows.append({"dt": dt, "quotient": float(q), "stderr": float(se), "error": float(q - lh)})

    dt_arr = np.array([r["dt"] for r in rows])
    q_arr = np.array([r["quotient"] for r in rows])
    se_arr = np.array([r["stderr"] for r in rows])
    # noiseless quotients (e.g. no dynamics) get equal weights
    se_arr = np.maximum(se_arr, se_arr.max() * 1e-6) if se_arr.max() > 0 else np.ones_like(se_arr)
    err = np.abs(q_arr - lh)
    resolved = err > n_sigma * np.sqrt(se_arr ** 2 + gv.error_bound ** 2)
    slope = loglog = None
    inconclusive = int(resolved.sum()) < 2
    if not inconclusive:
        # var(log err) ~ sigma^2 / err^2, so weight each point by err / sigma
        sig = np.sqrt(se_arr ** 2 + gv.error_bound ** 2)
        sl, ic = np.polyfit(np.log(dt_arr[resolved]), np.log(err[resolved]), 1,
                            w=(err / np.maximum(sig, 1e-300))[resolved])
        slope, loglog = float(sl), float(ic)

    # weighted polynomial fit Q = a + c_1 dt + ... + c_k dt^k
    wts = 1.0 / se_arr ** 2
    k = min(degree, len(dt_arr) - 1)
    A = np.column_stack([dt_arr ** j for j in range(k + 1)])
    cov = np.linalg.inv(A.T @ (A * wts[:, None]))
    coef = cov @ (A.T @ (wts * q_arr))
    a, a_se = float(coef[0]), float(math.sqrt(cov[0, 0]))
    if not np.any([r["stderr"] for r in rows]):
        a_se = 0.0
    consistent = abs(a - lh) <= n_sigma * math.sqrt(a_se ** 2 + gv.error_bound ** 2)
    return ConsistencyReport(lh, gv.error_bound, rows, slope, loglog, a, a_se, inconclusive,
                             bool(consistent), name=h.name)


def default_dts(coeffs: CoefficientSet, n: int = 7) -> list:
    """Halving ladder for the consistency check: from 0.1 with jumps, from 0.02 without.

    Jump noise keeps the quotient's standard error growing like dt^{-1/2},
    so it needs larger steps to resolve the O(dt) error; diffusions under
    antithetic pairing have dt-independent noise and tolerate small steps.
    """
    top = 0.1 if coeffs.jump_space.active else 0.02
    return [top / 2 ** k for k in range(n)]


def _antithetic_pairs(n: int, chunk: int):
    """Indices (i, j) of the mirrored path pairs produced by block streams."""
    first, second = [], []
    for lo in range(0, n, chunk):
        m = min(chunk, n - lo)
        half = (m + 1) // 2
        k = m - half
        first.append(lo + np.arange(k))
        second.append(lo + half + np.arange(k))
    return np.concatenate(first), np.concatenate(second)


def _seed_int(seed) -> int:
    if isinstance(seed, (int, np.integer)):
        return int(seed)
    if isinstance(seed, np.random.SeedSequence):
        return int(seed.entropy)
    raise ArgumentError("seed must be an integer")
