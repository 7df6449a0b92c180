"""Registered reference models with known (or computable) stationary behaviour."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import stats

from .errors import ArgumentError
from .jumps import JumpSpace, NoJumps, StableJumps, UniformJumps
from .noise import BrownianParams, StableParams
from .sde import CoefficientSet


@dataclass
class Model:
    """Coefficients for simulation plus what the Fokker-Planck side needs.

    ``fp_params`` is the nonlocal (or Brownian-mode) part handed to the
    spectral solver; ``fp_sigma`` any extra diffusion. ``stationary_cdf`` is
    the known stationary law in d = 1 (None when unknown or degenerate).
    """

    name: str
    coeffs: CoefficientSet
    fp_drift: Optional[Callable] = None
    fp_sigma: Optional[Callable] = None
    fp_params: object = None
    stationary_cdf: Optional[Callable] = None
    stationary_sampler: Optional[Callable] = None
    closed_form: bool = False
    description: str = ""

    @property
    def dim(self) -> int:
        return self.coeffs.dim


def _linear_drift(rate: float = 1.0):
    return lambda x: -rate * x


def _constant_sigma(value: float, dim: int = 1):
    mat = value * np.eye(dim)
    return lambda x: np.broadcast_to(mat, (len(x), dim, dim)).copy()


def ou_brownian() -> Model:
    coeffs = CoefficientSet(1, _linear_drift(), _constant_sigma(math.sqrt(2.0)), noise_dim=1, name="ou-brownian")
    return Model("ou-brownian", coeffs, _linear_drift(), None, BrownianParams(),
                 stats.norm.cdf, lambda rng, n: rng.standard_normal(n), True,
                 "b(x) = -x, sigma = sqrt(2); stationary law N(0, 1)")


def ou_stable(alpha: float, small_jumps: str = "gaussian", name: Optional[str] = None) -> Model:
    params = StableParams(alpha, small_jumps=small_jumps)
    name = name or f"ou-stable-{alpha:g}"
    coeffs = CoefficientSet(1, _linear_drift(), jump_space=StableJumps(params), name=name)
    cdf = sampler = None
    if alpha == 1.0:
        cdf = stats.cauchy.cdf
        sampler = lambda rng, n: rng.standard_cauchy(n)  # noqa: E731
    else:
        # X = (1/alpha)^{1/alpha} S with S standard: characteristic function exp(-|u|^alpha / alpha)
        scale = (1.0 / alpha) ** (1.0 / alpha)
        cdf = _tabulated_ou_cdf(params)
        sampler = lambda rng, n: stats.levy_stable.rvs(alpha, 0.0, scale=scale, size=n,  # noqa: E731
                                                       random_state=rng)
    return Model(name, coeffs, _linear_drift(), None, params, cdf, sampler, True,
                 f"b(x) = -x driven by symmetric {alpha:g}-stable noise")


def _tabulated_ou_cdf(params: StableParams, halfwidth: float = 200.0, n: int = 1 << 15):
    """CDF of the stable OU stationary law from the closed-form density (built on first use).

    Accurate to ~1e-5; the mass beyond the table splits evenly between the tails.
    """
    table = {}

    def cdf(x):
        if not table:
            from .fokker_planck import SpectralConfig, closed_form_ou_density

            g = closed_form_ou_density(params, SpectralConfig(domain_halfwidth=halfwidth, n=n))
            h = g.axes[0].h
            left = 0.5 * (1.0 - g.meta["box_mass"])
            table["x"] = np.r_[g.axes[0].lo - 0.5 * h, g.axes[0].nodes + 0.5 * h]
            table["F"] = left + np.r_[0.0, np.cumsum(g.values) * h]
        return np.interp(x, table["x"], table["F"])

    return cdf


def bounded_jump_ou() -> Model:
    js = UniformJumps(-1.0, 1.0, mass=1.0, delta=1.0)
    coeffs = CoefficientSet(1, _linear_drift(), jump_space=js, name="bounded-jump-ou")
    return Model("bounded-jump-ou", coeffs, description="b(x) = -x, compensated jumps with nu uniform of mass 1 on [-1, 1]")


def decay() -> Model:
    coeffs = CoefficientSet(1, _linear_drift(), name="decay")
    return Model("decay", coeffs, _linear_drift(), None, None,
                 lambda x: (np.asarray(x) >= 0).astype(float), lambda rng, n: np.zeros(n), False,
                 "b(x) = -x without noise; stationary law delta_0")


REGISTRY = {
    "ou-brownian": ou_brownian,
    "ou-cauchy": lambda: ou_stable(1.0, name="ou-cauchy"),
    "ou-stable-1.5": lambda: ou_stable(1.5, name="ou-stable-1.5"),
    "bounded-jump-ou": bounded_jump_ou,
    "decay": decay,
}


def get_model(name: str, small_jumps: Optional[str] = None) -> Model:
    """Build a registered model; ``small_jumps`` overrides the mode of a stable driver."""
    if name not in REGISTRY:
        raise ArgumentError(f"unknown model {name!r}; registered: {', '.join(sorted(REGISTRY))}")
    model = REGISTRY[name]()
    if small_jumps is not None and isinstance(model.fp_params, StableParams):
        model = ou_stable(model.fp_params.alpha, small_jumps, name)
    return model


def affine_model(drift_matrix, drift_offset=None, sigma=None, jump_space: Optional[JumpSpace] = None,
                 fp_params=None, name: str = "inline") -> Model:
    """b(x) = A x + c, constant sigma, optional jump space."""
    A = np.atleast_2d(np.asarray(drift_matrix, float))
    d = A.shape[0]
    if A.shape != (d, d):
        raise ArgumentError("drift matrix must be square")
    c = np.zeros(d) if drift_offset is None else np.asarray(drift_offset, float).reshape(d)
    drift = lambda x: x @ A.T + c  # noqa: E731
    diffusion = None
    noise_dim = 0
    if sigma is not None:
        S = np.atleast_2d(np.asarray(sigma, float))
        if S.shape[0] != d:
            raise ArgumentError("sigma must have d rows")
        noise_dim = S.shape[1]
        diffusion = lambda x: np.broadcast_to(S, (len(x),) + S.shape).copy()  # noqa: E731
    coeffs = CoefficientSet(d, drift, diffusion, noise_dim, jump_space=jump_space or NoJumps(dim=d), name=name)
    return Model(name, coeffs, drift, diffusion, fp_params)
