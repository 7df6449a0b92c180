"""Occupation measures, tightness diagnostics and stationarity tests.

The Krylov-Bogolyubov measure (1/T) int_0^T p_t(x, .) dt is estimated by
time-averaging an ensemble of trajectories: every retained (thinned) time
point of every path gets the same weight. Samples remember which path they
came from, so standard errors can use per-path batch means instead of
treating correlated time points as independent.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy import stats
from scipy.spatial.distance import cdist

from .errors import ArgumentError
from .generator import TestFunction, apply_generator
from .jumps import QuadratureSpec
from .sde import CoefficientSet, Ensemble, MonteCarloConfig, PathSample, simulate_ensemble

WEIGHT_TOL = 1e-12


@dataclass
class EmpiricalMeasure:
    """Weighted point cloud with an optional histogram.

    ``groups`` labels each sample with its source path (or any batch id);
    it is used for batch-means standard errors and may be None.
    """

    samples: np.ndarray
    weights: np.ndarray
    histogram: Optional[tuple] = None
    meta: dict = field(default_factory=dict)
    groups: Optional[np.ndarray] = None

    def __post_init__(self):
        s = np.asarray(self.samples, float)
        self.samples = s[:, None] if s.ndim == 1 else s
        self.weights = np.asarray(self.weights, float)
        if len(self.weights) != len(self.samples):
            raise ArgumentError("one weight per sample is required")
        if len(self.samples) == 0:
            raise ArgumentError("empty measure")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > WEIGHT_TOL:
            raise ArgumentError("weights must be nonnegative and sum to 1")
        if self.histogram is not None:
            edges, masses = self.histogram
            if abs(np.sum(masses) - 1.0) > WEIGHT_TOL:
                raise ArgumentError("histogram masses must sum to 1")

    @classmethod
    def uniform(cls, samples, meta: Optional[dict] = None, groups=None) -> "EmpiricalMeasure":
        s = np.asarray(samples, float)
        n = len(s)
        if n == 0:
            raise ArgumentError("empty measure")
        return cls(s, np.full(n, 1.0 / n), None, dict(meta or {}), groups)

    @property
    def n(self) -> int:
        return len(self.samples)

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    @property
    def is_uniform(self) -> bool:
        return bool(np.all(self.weights == self.weights[0]))

    def norms(self) -> np.ndarray:
        return np.linalg.norm(self.samples, axis=1)

    def mean(self) -> np.ndarray:
        return self.weights @ self.samples

    def expectation(self, values) -> float:
        return float(self.weights @ np.asarray(values, float))

    def expectation_stderr(self, values) -> float:
        """Standard error of the weighted mean of ``values``.

        With groups: batch means over groups (each group weighted by its
        total weight). Without: the i.i.d. formula.
        """
        v = np.asarray(values, float)
        mu = self.weights @ v
        if self.groups is None:
            return float(math.sqrt(np.sum(self.weights ** 2 * (v - mu) ** 2)))
        labels, inv = np.unique(self.groups, return_inverse=True)
        g = len(labels)
        if g < 2:
            return math.inf
        wg = np.bincount(inv, weights=self.weights, minlength=g)
        mg = np.bincount(inv, weights=self.weights * v, minlength=g) / np.where(wg > 0, wg, 1.0)
        # weighted batch means: sum w_g^2 (m_g - mu)^2, scaled for the lost degree of freedom
        return float(math.sqrt(np.sum(wg ** 2 * (mg - mu) ** 2) * g / (g - 1)))

    def tail_mass(self, radius: float) -> float:
        """Mass outside the closed ball B(0, radius)."""
        return self.expectation(self.norms() > radius)

    def tail_mass_stderr(self, radius: float) -> float:
        return self.expectation_stderr(self.norms() > radius)

    def ball_radius(self, epsilon: float) -> float:
        """Smallest R with mass(|x| <= R) > 1 - epsilon (R is one of the sample norms)."""
        if not 0 < epsilon < 1:
            raise ArgumentError("epsilon must lie in (0, 1)")
        r = self.norms()
        order = np.argsort(r, kind="stable")
        cum = np.cumsum(self.weights[order])
        # ties: the mass at radius r[k] includes every sample with the same norm
        r_sorted = r[order]
        last_of_tie = np.r_[r_sorted[1:] != r_sorted[:-1], True]
        ok = np.nonzero((cum > 1.0 - epsilon) & last_of_tie)[0]
        return float(r_sorted[ok[0]]) if len(ok) else float(r_sorted[-1])

    def resample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        idx = rng.choice(self.n, size=n, replace=True, p=self.weights)
        return self.samples[idx]

    def with_histogram(self, bins: Union[int, Sequence] = 100, range_=None) -> "EmpiricalMeasure":
        """Attach a weighted histogram. Samples outside ``range_`` go to the outermost bins."""
        if range_ is None:
            lo, hi = self.samples.min(axis=0), self.samples.max(axis=0)
            range_ = [(float(a), float(b) if b > a else float(a) + 1.0) for a, b in zip(lo, hi)]
        clipped = np.column_stack([
            np.clip(self.samples[:, j], range_[j][0], range_[j][1]) for j in range(self.dim)
        ])
        masses, edges = np.histogramdd(clipped, bins=bins, range=range_, weights=self.weights)
        masses = masses / masses.sum()
        return EmpiricalMeasure(self.samples, self.weights, (list(edges), masses), dict(self.meta), self.groups)

    def histogram_consistent(self, atol: float = 1e-12) -> bool:
        """Rebinning the samples onto the stored edges reproduces the stored masses."""
        if self.histogram is None:
            return True
        edges, masses = self.histogram
        rng_ = [(float(e[0]), float(e[-1])) for e in edges]
        again = self.with_histogram([np.asarray(e) for e in edges], rng_).histogram[1]
        return bool(np.abs(again - masses).max() <= atol)

    def ks_to(self, cdf: Callable) -> float:
        """Weighted Kolmogorov-Smirnov distance to a continuous 1-d law."""
        if self.dim != 1:
            raise ArgumentError("KS distance is one-dimensional")
        x = self.samples[:, 0]
        order = np.argsort(x, kind="stable")
        xs, w = x[order], self.weights[order]
        upper = np.cumsum(w)
        lower = upper - w
        f = cdf(xs)
        return float(max(np.max(upper - f), np.max(f - lower)))

    def to_csv(self, path) -> None:
        header = ",".join([f"state_{i + 1}" for i in range(self.dim)] + ["weight"])
        data = np.column_stack([self.samples, self.weights])
        np.savetxt(path, data, delimiter=",", header=header, comments="", fmt="%.17g")

    def histogram_json(self) -> str:
        if self.histogram is None:
            raise ArgumentError("no histogram attached")
        edges, masses = self.histogram
        return json.dumps({"edges": [np.asarray(e).tolist() for e in edges],
                           "masses": np.asarray(masses).tolist()}, indent=2)


def _as_ensembles(paths) -> list:
    if isinstance(paths, (Ensemble, PathSample)):
        return [paths]
    return list(paths)


def kb_occupation(paths, burn_in: float, thinning: int = 10) -> EmpiricalMeasure:
    """Occupation measure of the recorded states at times >= ``burn_in``.

    ``paths`` is an Ensemble, a PathSample or a sequence of them. Every
    ``thinning``-th recorded point from the first retained one is kept; all
    kept points get equal weight. Exploded paths contribute nothing.
    """
    if thinning < 1:
        raise ArgumentError("thinning must be >= 1")
    chunks, groups = [], []
    horizons, n_paths, offset = [], 0, 0
    for item in _as_ensembles(paths):
        if isinstance(item, PathSample):
            times, states, bad = item.times, item.states[:, None, :], np.array([item.exploded])
        else:
            times, states, bad = item.times, item.states, item.exploded
        horizon = float(times[-1])
        if not burn_in < horizon:
            raise ArgumentError("burn_in must be smaller than every path horizon")
        horizons.append(horizon)
        # small slack so burn-in on the grid is retained despite rounding of times
        first = int(np.searchsorted(times, burn_in - 1e-9 * max(1.0, horizon)))
        sel = states[first::thinning]
        ok = ~bad & np.all(np.isfinite(sel), axis=(0, 2))
        kept = sel[:, ok, :]
        chunks.append(kept.transpose(1, 0, 2).reshape(-1, states.shape[2]))
        groups.append(np.repeat(offset + np.nonzero(ok)[0], kept.shape[0]))
        offset += states.shape[1]
        n_paths += int(ok.sum())
    samples = np.concatenate(chunks)
    if len(samples) == 0:
        raise ArgumentError("no retained points")
    meta = {"T": min(horizons) - burn_in, "burn_in": burn_in, "thinning": thinning, "n_paths": n_paths}
    return EmpiricalMeasure.uniform(samples, meta, np.concatenate(groups))


def chebyshev_tail_bound(second_moments, radius: float, horizon: float, t0: float, m: float) -> float:
    """(1/R^2) ((1/T) int_0^{t0} E|X_s|^2 ds + M (1 - t0/T)).

    ``second_moments`` is a pair (times, values) covering [0, t0] or a
    callable t -> E|X_t|^2. The integral is a trapezoid rule (on 2001
    points for callables).
    """
    if not horizon > t0:
        raise ArgumentError("need T > t0")
    if not radius > 0:
        raise ArgumentError("radius must be positive")
    if callable(second_moments):
        s = np.linspace(0.0, t0, 2001)
        vals = np.asarray(second_moments(s), float)
    else:
        times, values = (np.asarray(a, float) for a in second_moments)
        if times[0] > 0 or times[-1] < t0:
            raise ArgumentError("moment curve must cover [0, t0]")
        inside = times < t0
        s = np.r_[times[inside], t0]
        vals = np.r_[values[inside], np.interp(t0, times, values)]
    integral = float(np.trapezoid(vals, s)) if len(s) > 1 else 0.0
    return (integral / horizon + m * (1.0 - t0 / horizon)) / radius ** 2


@dataclass
class TightnessReport:
    epsilon: float
    radii: list
    horizons: list
    successive_ks: list

    @property
    def radius(self) -> float:
        """R(eps): inf_T mass(B(0, R)) > 1 - eps over the whole sequence."""
        return float(max(self.radii))

    @property
    def stabilized(self) -> bool:
        a, b = self.radii[-2], self.radii[-1]
        if a == b:
            return True
        return bool(min(a, b) > 0 and max(a, b) / min(a, b) <= 1.1)

    def to_dict(self) -> dict:
        return {"epsilon": self.epsilon, "R": self.radius, "radii": self.radii, "T": self.horizons,
                "stabilized": self.stabilized, "successive_ks": self.successive_ks}


def tightness_diagnostic(measures: Sequence[EmpiricalMeasure], epsilon: float) -> TightnessReport:
    """Radius of the ball holding more than 1 - eps of every measure, and its stability."""
    if len(measures) < 2:
        raise ArgumentError("at least two measures are required")
    radii = [m.ball_radius(epsilon) for m in measures]
    ks = []
    if all(m.dim == 1 for m in measures):
        for a, b in zip(measures[:-1], measures[1:]):
            ks.append(_weighted_ks(a, b))
    return TightnessReport(float(epsilon), radii, [m.meta.get("T") for m in measures], ks)


def _weighted_ks(a: EmpiricalMeasure, b: EmpiricalMeasure) -> float:
    xa, xb = a.samples[:, 0], b.samples[:, 0]
    grid = np.sort(np.concatenate([xa, xb]))
    oa, ob = np.argsort(xa), np.argsort(xb)
    ca = np.r_[0.0, np.cumsum(a.weights[oa])][np.searchsorted(xa[oa], grid, side="right")]
    cb = np.r_[0.0, np.cumsum(b.weights[ob])][np.searchsorted(xb[ob], grid, side="right")]
    return float(np.abs(ca - cb).max())


def _ks_stat(a, b) -> float:
    return float(stats.ks_2samp(a, b).statistic)


def _energy_from_matrix(dmat, ia, ib) -> float:
    return float(2.0 * dmat[np.ix_(ia, ib)].mean() - dmat[np.ix_(ia, ia)].mean() - dmat[np.ix_(ib, ib)].mean())


@dataclass
class StationarityReport:
    statistic: str
    distance: float
    p_value: float
    n: int
    alpha: float = 0.01

    @property
    def passed(self) -> bool:
        return self.p_value > self.alpha

    def to_dict(self) -> dict:
        return {"statistic": self.statistic, self.statistic: self.distance, "p_value": self.p_value,
                "n": self.n, "alpha": self.alpha, "passed": self.passed}


def stationarity_test(measure: EmpiricalMeasure, coeffs: CoefficientSet, t: float, mc: MonteCarloConfig,
                      n_permutations: int = 199, alpha: float = 0.01, max_energy_samples: int = 1000,
                      min_samples: int = 1000) -> StationarityReport:
    """Push the measure forward by the dynamics for time t and compare with itself.

    Starting points are the samples themselves when the measure is uniform
    and ``mc.n_paths`` equals its size, otherwise a weighted resample. The
    pushed-forward sample is compared with the measure's own sample by KS
    (d = 1) or energy distance (d > 1), with a permutation p-value from
    pooled relabelling. Because each pushed point depends on its start,
    the two samples are positively dependent and the pooled null is
    conservative.
    """
    if measure.n < min_samples:
        raise ArgumentError(f"at least {min_samples} samples are required")
    rng = np.random.default_rng(np.random.SeedSequence(mc.seed, spawn_key=(7,)))
    if measure.is_uniform and mc.n_paths == measure.n:
        starts = measure.samples
        original = measure.samples
    else:
        starts = measure.resample(mc.n_paths, rng)
        original = measure.samples if measure.is_uniform else measure.resample(measure.n, rng)
    ens = simulate_ensemble(starts, coeffs, len(starts), mc.dt, t, seed=mc.seed, record_every=10 ** 9,
                            chunk_size=mc.chunk_size, streams=mc.streams)
    pushed = ens.final[~ens.exploded]
    if measure.dim == 1:
        a, b = original[:, 0], pushed[:, 0]
        observed = _ks_stat(a, b)
        pooled = np.concatenate([a, b])
        count = 0
        for _ in range(n_permutations):
            perm = rng.permutation(pooled)
            count += _ks_stat(perm[:len(a)], perm[len(a):]) >= observed
        name = "ks"
    else:
        a = original[rng.choice(len(original), min(len(original), max_energy_samples), replace=False)]
        b = pushed[rng.choice(len(pushed), min(len(pushed), max_energy_samples), replace=False)]
        pooled = np.vstack([a, b])
        dmat = cdist(pooled, pooled)
        idx = np.arange(len(pooled))
        observed = _energy_from_matrix(dmat, idx[:len(a)], idx[len(a):])
        count = 0
        for _ in range(n_permutations):
            perm = rng.permutation(idx)
            count += _energy_from_matrix(dmat, perm[:len(a)], perm[len(a):]) >= observed
        name = "energy"
    p = (count + 1) / (n_permutations + 1)
    if observed == 0.0:
        p = 1.0
    return StationarityReport(name, observed, float(p), int(len(pushed)), alpha)


@dataclass
class WeakResidualReport:
    names: list
    residuals: np.ndarray
    mc_errors: np.ndarray
    quad_errors: np.ndarray
    n_sigma: float = 3.0

    @property
    def max_residual(self) -> float:
        return float(np.abs(self.residuals).max())

    @property
    def error_bars(self) -> np.ndarray:
        return self.mc_errors + self.quad_errors

    @property
    def within(self) -> np.ndarray:
        return np.abs(self.residuals) <= self.n_sigma * self.error_bars

    @property
    def passed(self) -> bool:
        return bool(np.all(self.within))

    def to_dict(self) -> dict:
        return {"tests": self.names, "residuals": self.residuals.tolist(), "mc_error": self.mc_errors.tolist(),
                "quadrature_error": self.quad_errors.tolist(), "max_residual": self.max_residual,
                "within_error_bars": self.within.tolist(), "passed": self.passed}


def weak_residual(measure: EmpiricalMeasure, coeffs: CoefficientSet, tests: Sequence[TestFunction],
                  quad: Optional[QuadratureSpec] = None, n_sigma: float = 3.0) -> WeakResidualReport:
    """int (L phi) d mu for each test function, with Monte Carlo and quadrature error bars."""
    if not tests:
        raise ArgumentError("at least one test function is required")
    res, mc_err, q_err, names = [], [], [], []
    for k, phi in enumerate(tests):
        lv = apply_generator(phi, measure.samples, coeffs, quad)
        vals = np.asarray(lv.value, float)
        res.append(measure.expectation(vals))
        mc_err.append(measure.expectation_stderr(vals))
        q_err.append(lv.error_bound)
        names.append(phi.name or f"test_{k}")
    return WeakResidualReport(names, np.array(res), np.array(mc_err), np.array(q_err), n_sigma)
