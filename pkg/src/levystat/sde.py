"""Euler simulation of SDEs with jumps and replayable noise.

The equation is

    dX = b(X) dt + sigma(X) dW + int_{U_0} f(X-, u) N~(dt, du) + int_{U \\ U_0} g(X-, u) N(dt, du).

Coefficient maps are vectorized over a leading batch axis: ``drift`` maps
(n, d) -> (n, d), ``diffusion`` maps (n, d) -> (n, d, m), ``small_jump`` and
``large_jump`` map ((k, d), (k, d)) -> (k, d).

Scheme: for step k on [t_k, t_{k+1}] the continuous part is an Euler update
from the pre-step state; the jumps whose instants fall in (t_k, t_{k+1}] are
then applied one at a time in instant order, each seeing the state left by
the previous one. Jump instants are stored as (step index, offset in (0, dt])
so a grid-aligned shift is pure integer arithmetic, which is what makes the
cocycle identity hold bit for bit.
"""
from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .errors import ArgumentError
from .jumps import JumpSpace, NoJumps, QuadratureSpec, StableJumps, UniformJumps

EXPLOSION_GUARD = 1e12
NOISE_FORMAT = "levystat-noise/1"


# ---------------------------------------------------------------------------
# coefficients
# ---------------------------------------------------------------------------


@dataclass
class CoefficientSet:
    """The maps b, sigma, f, g together with the jump space (U, nu).

    ``small_jump`` / ``large_jump`` default to the identity f(x, u) = u.
    ``compensator`` is x -> int f(x, u) nu(du) over the individually sampled
    small jumps; when omitted it is zero for symmetric nu with the identity
    f, and otherwise computed by quadrature of the jump space.
    """

    dim: int
    drift: Callable
    diffusion: Optional[Callable] = None
    noise_dim: int = 0
    small_jump: Optional[Callable] = None
    large_jump: Optional[Callable] = None
    jump_space: JumpSpace = field(default_factory=NoJumps)
    compensator: Optional[Callable] = None
    name: str = ""

    def __post_init__(self):
        if self.diffusion is not None and self.noise_dim < 1:
            raise ArgumentError("noise_dim must be >= 1 when a diffusion map is given")
        if self.jump_space.active and self.jump_space.dim != self.dim:
            raise ArgumentError("jump space dimension differs from state dimension")
        if self.compensator is None and self.jump_space.small_rate() > 0:
            if not (self.jump_space.symmetric and self.small_jump is None):
                self.compensator = self._quadrature_compensator()

    def _quadrature_compensator(self):
        js = self.jump_space
        if isinstance(js, StableJumps):
            quad = QuadratureSpec(inner_cutoff=js.params.cutoff)
        else:
            quad = QuadratureSpec()
        nodes, weights = js.quadrature("small", quad)
        f = self.small_jump or (lambda x, u: u)

        def comp(x):
            k = len(nodes)
            xs = np.repeat(x, k, axis=0)
            us = np.tile(nodes, (len(x), 1))
            vals = f(xs, us).reshape(len(x), k, self.dim)
            return np.einsum("pkd,k->pd", vals, weights)

        return comp

    def f(self, x, u):
        return u if self.small_jump is None else self.small_jump(x, u)

    def g(self, x, u):
        return u if self.large_jump is None else self.large_jump(x, u)


def zero_coefficients(dim: int = 1) -> CoefficientSet:
    return CoefficientSet(dim=dim, drift=lambda x: np.zeros_like(x), name="zero")


# ---------------------------------------------------------------------------
# noise realizations
# ---------------------------------------------------------------------------


def _aligned_steps(s: float, dt: float, what: str = "time") -> int:
    k = int(round(s / dt))
    if k < 0 or abs(k * dt - s) > 1e-9 * max(1.0, abs(s)):
        raise ArgumentError(f"{what} {s} is not a multiple of the step {dt}")
    return k


def seed_sequence(seed, index: Optional[int] = None) -> np.random.SeedSequence:
    """Seed stream for a run, or for path ``index`` of an ensemble run."""
    if isinstance(seed, np.random.SeedSequence):
        if index is None:
            return seed
        return np.random.SeedSequence(seed.entropy, spawn_key=tuple(seed.spawn_key) + (index,))
    if index is None:
        return np.random.SeedSequence(seed)
    return np.random.SeedSequence(seed, spawn_key=(index,))


def _seed_token(ss: np.random.SeedSequence) -> dict:
    return {"entropy": int(ss.entropy), "spawn_key": [int(k) for k in ss.spawn_key]}


def _seed_from_token(tok: dict) -> np.random.SeedSequence:
    return np.random.SeedSequence(tok["entropy"], spawn_key=tuple(tok["spawn_key"]))


@dataclass
class NoiseRealization:
    """One realization omega of the driving noise on a uniform grid.

    Brownian increments are dense, shape (n_steps, m); ``gauss`` carries the
    Gaussian stand-in for unsampled small jumps, shape (n_steps, d) or
    (n_steps, 0). Jumps are sparse and sorted by instant.
    """

    dt: float
    brownian: np.ndarray
    gauss: np.ndarray
    jump_step: np.ndarray
    jump_offset: np.ndarray
    jump_mark: np.ndarray
    jump_small: np.ndarray
    seed: Optional[dict] = None
    origin: int = 0
    total_steps: Optional[int] = None
    scales: tuple = (0.0, 0.0)

    @property
    def n_steps(self) -> int:
        return self.brownian.shape[0]

    @property
    def horizon(self) -> float:
        return self.n_steps * self.dt

    @property
    def instants(self) -> np.ndarray:
        return self.jump_step * self.dt + self.jump_offset

    @property
    def jumps(self) -> list:
        """Time-ordered (instant, mark, tag) triples, tag in {"small", "large"}."""
        return [
            (float(t), m.copy(), "small" if s else "large")
            for t, m, s in zip(self.instants, self.jump_mark, self.jump_small)
        ]

    def truncate(self, horizon: float) -> "NoiseRealization":
        k = _aligned_steps(horizon, self.dt, "horizon")
        if k > self.n_steps:
            raise ArgumentError("cannot extend a noise realization by truncation")
        keep = self.jump_step < k
        return replace(
            self,
            brownian=self.brownian[:k],
            gauss=self.gauss[:k],
            jump_step=self.jump_step[keep],
            jump_offset=self.jump_offset[keep],
            jump_mark=self.jump_mark[keep],
            jump_small=self.jump_small[keep],
        )

    @classmethod
    def from_jumps(cls, dt, n_steps, instants=(), marks=(), small=None, brownian=None,
                   dim=1, noise_dim=0):
        """Build a realization by hand from jump instants in (0, horizon]."""
        instants = np.asarray(instants, dtype=float)
        marks = np.asarray(marks, dtype=float).reshape(len(instants), dim)
        if np.any(instants <= 0) or np.any(instants > n_steps * dt + 1e-12):
            raise ArgumentError("jump instants must lie in (0, horizon]")
        step = np.ceil(instants / dt - 1e-12).astype(np.int64) - 1
        step = np.clip(step, 0, n_steps - 1)
        offset = instants - step * dt
        small = np.zeros(len(instants), bool) if small is None else np.asarray(small, bool)
        order = np.argsort(instants, kind="stable")
        if brownian is None:
            brownian = np.zeros((n_steps, noise_dim))
        return cls(
            dt=dt,
            brownian=np.asarray(brownian, float).reshape(n_steps, -1),
            gauss=np.zeros((n_steps, 0)),
            jump_step=step[order],
            jump_offset=offset[order],
            jump_mark=marks[order],
            jump_small=small[order],
        )


def _draw_jumps(rng, rate, sampler, n_steps, dt):
    if rate <= 0.0:
        return np.empty(0, np.int64), np.empty(0), None
    counts = rng.poisson(rate * dt, n_steps)
    steps = np.repeat(np.arange(n_steps, dtype=np.int64), counts)
    # offsets in (0, dt]: the jump belongs to the step whose right end follows it
    offsets = dt - rng.uniform(0.0, dt, len(steps))
    marks = sampler(rng, len(steps))
    return steps, offsets, marks


def _generate(coeffs: CoefficientSet, n_steps: int, dt: float, ss: np.random.SeedSequence,
              with_jumps: bool = True):
    rng = np.random.default_rng(ss)
    js = coeffs.jump_space
    b_scale = math.sqrt(dt)
    g_var = js.small_gauss_variance() if js.active else 0.0
    g_scale = math.sqrt(g_var * dt)
    m = coeffs.noise_dim if coeffs.diffusion is not None else 0
    brownian = rng.standard_normal((n_steps, m)) * b_scale
    if g_var > 0:
        gauss = rng.standard_normal((n_steps, coeffs.dim)) * g_scale
    else:
        gauss = np.zeros((n_steps, 0))
    if not with_jumps:
        return brownian, gauss, (b_scale, g_scale)
    s_step, s_off, s_mark = _draw_jumps(rng, js.small_rate(), js.sample_small, n_steps, dt)
    l_step, l_off, l_mark = _draw_jumps(rng, js.large_rate(), js.sample_large, n_steps, dt)
    d = coeffs.dim
    s_mark = np.zeros((0, d)) if s_mark is None else s_mark
    l_mark = np.zeros((0, d)) if l_mark is None else l_mark
    steps = np.concatenate([s_step, l_step])
    offs = np.concatenate([s_off, l_off])
    marks = np.concatenate([s_mark, l_mark])
    small = np.concatenate([np.ones(len(s_step), bool), np.zeros(len(l_step), bool)])
    order = np.lexsort((offs, steps))
    return brownian, gauss, (b_scale, g_scale), (steps[order], offs[order], marks[order], small[order])


def sample_noise(coeffs: CoefficientSet, horizon: float, dt: float, seed=None) -> NoiseRealization:
    """Draw a realization on [0, horizon] with step ``dt`` from its own seed stream."""
    if not dt > 0:
        raise ArgumentError(f"dt must be positive, got {dt}")
    n_steps = _aligned_steps(horizon, dt, "horizon")
    ss = seed_sequence(seed)
    brownian, gauss, scales, (steps, offs, marks, small) = _generate(coeffs, n_steps, dt, ss)
    return NoiseRealization(
        dt=dt, brownian=brownian, gauss=gauss, jump_step=steps, jump_offset=offs,
        jump_mark=marks, jump_small=small, seed=_seed_token(ss), origin=0,
        total_steps=n_steps, scales=scales,
    )


def shift_noise(noise: NoiseRealization, s: float) -> NoiseRealization:
    """theta_s: re-index increments from s, translate jump instants by -s."""
    k = _aligned_steps(s, noise.dt, "shift")
    if k > noise.n_steps:
        raise ArgumentError("shift exceeds the horizon of the realization")
    keep = noise.jump_step >= k
    return replace(
        noise,
        brownian=noise.brownian[k:],
        gauss=noise.gauss[k:],
        jump_step=noise.jump_step[keep] - k,
        jump_offset=noise.jump_offset[keep],
        jump_mark=noise.jump_mark[keep],
        jump_small=noise.jump_small[keep],
        origin=noise.origin + k,
    )


def coarsen_noise(noise: NoiseRealization) -> NoiseRealization:
    """The same omega seen on a grid of step 2*dt (increments summed pairwise)."""
    n = noise.n_steps
    if n % 2:
        raise ArgumentError("coarsening needs an even number of steps")

    def pair(a):
        return a[0::2] + a[1::2]

    step = noise.jump_step // 2
    offset = noise.jump_offset + (noise.jump_step % 2) * noise.dt
    return replace(
        noise, dt=2 * noise.dt, brownian=pair(noise.brownian), gauss=pair(noise.gauss),
        jump_step=step, jump_offset=offset, seed=None, total_steps=None,
    )


def noise_to_json(noise: NoiseRealization) -> str:
    """Serialize as seed + grid spec + jump list (arrays inline when unseeded)."""
    doc = {
        "format": NOISE_FORMAT,
        "dt": noise.dt,
        "n_steps": noise.n_steps,
        "origin": noise.origin,
        "total_steps": noise.total_steps,
        "noise_dim": noise.brownian.shape[1],
        "gauss_dim": noise.gauss.shape[1],
        "dim": noise.jump_mark.shape[1] if noise.jump_mark.ndim == 2 else 1,
        "scales": list(noise.scales),
        "seed": noise.seed,
        "jumps": [
            [int(s), float(o), [float(v) for v in m], bool(t)]
            for s, o, m, t in zip(noise.jump_step, noise.jump_offset, noise.jump_mark, noise.jump_small)
        ],
    }
    if noise.seed is None:
        doc["brownian"] = noise.brownian.tolist()
        doc["gauss"] = noise.gauss.tolist()
    return json.dumps(doc)


def noise_from_json(text: str) -> NoiseRealization:
    doc = json.loads(text)
    if doc.get("format") != NOISE_FORMAT:
        raise ArgumentError("not a noise sidecar")
    n, m, gd, d = doc["n_steps"], doc["noise_dim"], doc["gauss_dim"], doc["dim"]
    if doc["seed"] is None:
        brownian = np.asarray(doc["brownian"], float).reshape(n, m)
        gauss = np.asarray(doc["gauss"], float).reshape(n, gd)
    else:
        rng = np.random.default_rng(_seed_from_token(doc["seed"]))
        b_scale, g_scale = doc["scales"]
        total, o = doc["total_steps"], doc["origin"]
        brownian = (rng.standard_normal((total, m)) * b_scale)[o:o + n]
        if gd:
            gauss = (rng.standard_normal((total, gd)) * g_scale)[o:o + n]
        else:
            gauss = np.zeros((n, 0))
    jumps = doc["jumps"]
    return NoiseRealization(
        dt=doc["dt"],
        brownian=brownian,
        gauss=gauss,
        jump_step=np.array([j[0] for j in jumps], dtype=np.int64),
        jump_offset=np.array([j[1] for j in jumps], dtype=float),
        jump_mark=np.array([j[2] for j in jumps], dtype=float).reshape(len(jumps), d),
        jump_small=np.array([j[3] for j in jumps], dtype=bool),
        seed=doc["seed"],
        origin=doc["origin"],
        total_steps=doc["total_steps"],
        scales=tuple(doc["scales"]),
    )


# ---------------------------------------------------------------------------
# the Euler engine
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MonteCarloConfig:
    """Ensemble settings shared by the Monte Carlo checks."""

    n_paths: int = 10_000
    dt: float = 1e-2
    seed: int = 0
    chunk_size: int = 4096
    streams: str = "path"

    def __post_init__(self):
        if self.n_paths < 1:
            raise ArgumentError("n_paths must be >= 1")
        if not self.dt > 0:
            raise ArgumentError("dt must be positive")
        if self.streams not in ("path", "block"):
            raise ArgumentError("streams must be 'path' or 'block'")


@dataclass
class PathSample:
    """A simulated trajectory; the state at a jump instant is the post-jump value."""

    times: np.ndarray
    states: np.ndarray
    jump_log: Optional[dict] = None
    exploded: bool = False

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


@dataclass
class Ensemble:
    """Independent paths on a common recording grid; states has shape (n_rec, n_paths, d)."""

    times: np.ndarray
    states: np.ndarray
    exploded: np.ndarray
    dt: float
    seed: object = None

    def __len__(self):
        return self.states.shape[1]

    def __getitem__(self, i) -> PathSample:
        return PathSample(self.times, self.states[:, i, :], None, bool(self.exploded[i]))

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    def second_moment(self):
        """E|X_t|^2 per recorded time with its Monte Carlo standard error."""
        ok = ~self.exploded
        sq = np.sum(self.states[:, ok, :] ** 2, axis=2)
        n = sq.shape[1]
        return sq.mean(axis=1), sq.std(axis=1, ddof=1) / math.sqrt(n) if n > 1 else np.zeros(len(sq))


@dataclass
class _NoiseBatch:
    """Noise for a batch of paths: dense (steps, n, .) arrays plus a flat jump table."""

    brownian: np.ndarray
    gauss: np.ndarray
    step: np.ndarray
    path: np.ndarray
    offset: np.ndarray
    mark: np.ndarray
    small: np.ndarray


def _batch_from_noises(noises, n_steps, d) -> _NoiseBatch:
    steps, paths, offs, marks, small = [], [], [], [], []
    for p, nz in enumerate(noises):
        keep = nz.jump_step < n_steps
        steps.append(nz.jump_step[keep])
        paths.append(np.full(int(keep.sum()), p, dtype=np.int64))
        offs.append(nz.jump_offset[keep])
        marks.append(nz.jump_mark.reshape(len(nz.jump_step), d)[keep])
        small.append(nz.jump_small[keep])
    return _NoiseBatch(
        brownian=np.stack([nz.brownian[:n_steps] for nz in noises], axis=1),
        gauss=np.stack([nz.gauss[:n_steps] for nz in noises], axis=1),
        step=np.concatenate(steps),
        path=np.concatenate(paths),
        offset=np.concatenate(offs),
        mark=np.concatenate(marks),
        small=np.concatenate(small),
    )


def _generate_batch(coeffs: CoefficientSet, n_steps: int, dt: float, n: int, rng,
                    antithetic: bool = False) -> _NoiseBatch:
    """Vectorized draw for n paths from one stream.

    With ``antithetic`` the second half of the batch replays the first half
    with every Brownian increment, Gaussian increment and jump mark negated
    (same law when nu is symmetric).
    """
    js = coeffs.jump_space
    d = coeffs.dim
    m = coeffs.noise_dim if coeffs.diffusion is not None else 0
    g_var = js.small_gauss_variance() if js.active else 0.0
    half = (n + 1) // 2 if antithetic else n
    brownian = rng.standard_normal((n_steps, half, m)) * math.sqrt(dt)
    if g_var > 0:
        gauss = rng.standard_normal((n_steps, half, d)) * math.sqrt(g_var * dt)
    else:
        gauss = np.zeros((n_steps, half, 0))
    parts = []
    for is_small, rate, sampler in ((True, js.small_rate(), js.sample_small),
                                    (False, js.large_rate(), js.sample_large)):
        if rate <= 0:
            continue
        counts = rng.poisson(rate * dt, (n_steps, half))
        st, pa = np.nonzero(counts)
        reps = counts[st, pa]
        st, pa = np.repeat(st, reps), np.repeat(pa, reps)
        off = dt - rng.uniform(0.0, dt, len(st))
        parts.append((st, pa, off, sampler(rng, len(st)), np.full(len(st), is_small)))
    if parts:
        st, pa, off, mk, sm = (np.concatenate(z) for z in zip(*parts))
    else:
        st = pa = np.empty(0, np.int64)
        off, mk, sm = np.empty(0), np.zeros((0, d)), np.empty(0, bool)
    if antithetic:
        if not js.symmetric and js.active:
            raise ArgumentError("antithetic sampling needs a symmetric jump measure")
        brownian = np.concatenate([brownian, -brownian], axis=1)[:, :n]
        gauss = np.concatenate([gauss, -gauss], axis=1)[:, :n]
        mirror = pa + half < n
        st = np.concatenate([st, st[mirror]])
        off = np.concatenate([off, off[mirror]])
        sm = np.concatenate([sm, sm[mirror]])
        mk = np.concatenate([mk, -mk[mirror]])
        pa = np.concatenate([pa, pa[mirror] + half])
    return _NoiseBatch(brownian, gauss, st.astype(np.int64), pa.astype(np.int64), off, mk, sm)


def _record_steps(n_steps: int, record_every: int = 1, record_at=None) -> list:
    if record_at is not None:
        steps = sorted({0, *(int(k) for k in record_at)})
        if steps[-1] > n_steps:
            raise ArgumentError("recording time beyond the horizon")
        return steps
    if record_every < 1:
        raise ArgumentError("record_every must be >= 1")
    idx = list(range(0, n_steps + 1, record_every))
    if idx[-1] != n_steps:
        idx.append(n_steps)
    return idx


def _integrate(x0, coeffs: CoefficientSet, batch: _NoiseBatch, dt: float, n_steps: int,
               record_every: int = 1, log_jumps: bool = False, record_at=None):
    """Advance a batch of paths; path p is driven by the p-th slice of ``batch``."""
    x = np.array(x0, dtype=float, copy=True)
    n, d = x.shape
    brownian, gauss = batch.brownian, batch.gauss
    use_w = coeffs.diffusion is not None and brownian.shape[2] > 0
    use_g = gauss.shape[2] > 0
    order = np.lexsort((batch.offset, batch.path, batch.step))
    j_step, j_path, j_off = batch.step[order], batch.path[order], batch.offset[order]
    j_mark, j_small = batch.mark[order], batch.small[order]
    # rank of each jump inside its (step, path) group fixes the application order
    j_rank = np.zeros(len(j_step), dtype=np.int64)
    if len(j_step):
        new_group = np.ones(len(j_step), bool)
        new_group[1:] = (j_step[1:] != j_step[:-1]) | (j_path[1:] != j_path[:-1])
        first = np.maximum.accumulate(np.where(new_group, np.arange(len(j_step)), 0))
        j_rank = np.arange(len(j_step)) - first
    ptr = np.searchsorted(j_step, np.arange(n_steps + 1))
    comp = coeffs.compensator

    rec_idx = _record_steps(n_steps, record_every, record_at)
    states = np.empty((len(rec_idx), n, d))
    states[0] = x
    r_next = 1
    exploded = np.zeros(n, bool)

    for k in range(n_steps):
        dx = coeffs.drift(x) * dt
        if use_w:
            s = coeffs.diffusion(x)
            for j in range(s.shape[2]):
                dx = dx + s[:, :, j] * brownian[k, :, j][:, None]
        if comp is not None:
            dx = dx - comp(x) * dt
        if use_g:
            dx = dx + coeffs.f(x, gauss[k])
        x = x + dx
        a, b = ptr[k], ptr[k + 1]
        if b > a:
            ranks = j_rank[a:b]
            for r in range(int(ranks.max()) + 1):
                sel = np.nonzero(ranks == r)[0] + a
                p = j_path[sel]
                u = j_mark[sel]
                sm = j_small[sel]
                xp = x[p]
                inc = np.empty_like(xp)
                if sm.any():
                    inc[sm] = coeffs.f(xp[sm], u[sm])
                if not sm.all():
                    inc[~sm] = coeffs.g(xp[~sm], u[~sm])
                x[p] = xp + inc
        big = np.abs(x).max(axis=1)
        if not big.max() <= EXPLOSION_GUARD:
            bad = ~(big <= EXPLOSION_GUARD)
            exploded |= bad
            x[bad] = 0.0
        if r_next < len(rec_idx) and rec_idx[r_next] == k + 1:
            states[r_next] = x
            if exploded.any():
                states[r_next][exploded] = np.nan
            r_next += 1

    times = np.array(rec_idx, dtype=float) * dt
    log = None
    if log_jumps:
        log = {"instants": j_step * dt + j_off, "marks": j_mark, "small": j_small}
    return times, states, exploded, log


def _as_state(x0, dim):
    x = np.asarray(x0, dtype=float).reshape(-1)
    if x.shape != (dim,):
        raise ArgumentError(f"initial state must have dimension {dim}")
    return x


def simulate_path(x0, coeffs: CoefficientSet, noise: NoiseRealization, dt: float,
                  horizon: Optional[float] = None, record_every: int = 1) -> PathSample:
    """Run the Euler-with-jumps scheme from ``x0`` along ``noise``.

    Deterministic given (x0, noise, dt). ``horizon`` defaults to the horizon
    of the noise and must be grid-aligned.
    """
    if not math.isclose(noise.dt, dt, rel_tol=1e-12, abs_tol=0.0):
        raise ArgumentError(f"noise grid step {noise.dt} differs from dt {dt}")
    n_steps = noise.n_steps if horizon is None else _aligned_steps(horizon, dt, "horizon")
    if n_steps > noise.n_steps:
        raise ArgumentError("horizon exceeds the noise realization")
    x = _as_state(x0, coeffs.dim)[None, :]
    batch = _batch_from_noises([noise], n_steps, coeffs.dim)
    times, states, exploded, log = _integrate(x, coeffs, batch, noise.dt, n_steps, record_every,
                                              log_jumps=True)
    return PathSample(times, states[:, 0, :], log, bool(exploded[0]))


def _default_workers():
    try:
        return max(1, int(os.environ.get("LEVYSTAT_THREADS", "1")))
    except ValueError:
        return 1


def simulate_ensemble(x0, coeffs: CoefficientSet, n_paths: int, dt: float, horizon: float, seed=0,
                      record_every: int = 1, chunk_size: int = 4096, workers: Optional[int] = None,
                      streams: str = "path", antithetic: bool = False, record_times=None) -> Ensemble:
    """Monte Carlo driver over independent paths.

    With ``streams="path"`` path i is driven by ``seed_sequence(seed, i)``,
    the same realization :func:`ensemble_path_noise` returns. With
    ``streams="block"`` each chunk of ``chunk_size`` paths draws from
    ``seed_sequence(seed, chunk index)`` in one vectorized call; this is much
    cheaper for short horizons and huge ensembles, and allows antithetic
    pairs inside each chunk.

    ``record_times`` (grid-aligned) overrides ``record_every``; time 0 is
    always recorded.

    ``x0`` is either one state or an array of shape (n_paths, d). Chunks
    are integrated independently (optionally on a thread pool sized by
    ``LEVYSTAT_THREADS``) and merged in path order, so the result does not
    depend on the number of workers.
    """
    if n_paths < 1:
        raise ArgumentError("n_paths must be >= 1")
    if not dt > 0:
        raise ArgumentError(f"dt must be positive, got {dt}")
    if streams not in ("path", "block"):
        raise ArgumentError("streams must be 'path' or 'block'")
    if antithetic and streams != "block":
        raise ArgumentError("antithetic pairs need block streams")
    n_steps = _aligned_steps(horizon, dt, "horizon")
    record_at = None
    if record_times is not None:
        record_at = [_aligned_steps(float(t), dt, "recording time") for t in record_times]
    x0 = np.asarray(x0, dtype=float)
    if x0.ndim == 2:
        if x0.shape != (n_paths, coeffs.dim):
            raise ArgumentError("per-path initial states must have shape (n_paths, d)")
        starts = x0
    else:
        starts = np.broadcast_to(_as_state(x0, coeffs.dim), (n_paths, coeffs.dim))

    def run(lo, hi):
        if streams == "block":
            rng = np.random.default_rng(seed_sequence(seed, lo // chunk_size))
            batch = _generate_batch(coeffs, n_steps, dt, hi - lo, rng, antithetic)
        else:
            noises = []
            for i in range(lo, hi):
                brownian, gauss, _, (st, of, mk, sm) = _generate(coeffs, n_steps, dt, seed_sequence(seed, i))
                noises.append(NoiseRealization(dt, brownian, gauss, st, of, mk, sm))
            batch = _batch_from_noises(noises, n_steps, coeffs.dim)
        return _integrate(starts[lo:hi], coeffs, batch, dt, n_steps, record_every, record_at=record_at)

    bounds = [(lo, min(lo + chunk_size, n_paths)) for lo in range(0, n_paths, chunk_size)]
    workers = workers or _default_workers()
    if workers > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(lambda b: run(*b), bounds))
    else:
        parts = [run(*b) for b in bounds]
    times = parts[0][0]
    states = np.concatenate([p[1] for p in parts], axis=1)
    exploded = np.concatenate([p[2] for p in parts])
    return Ensemble(times, states, exploded, dt, seed)


def ensemble_path_noise(coeffs: CoefficientSet, horizon: float, dt: float, seed, index: int
                        ) -> NoiseRealization:
    """The realization used by path ``index`` of ``simulate_ensemble(..., seed=seed)``."""
    return sample_noise(coeffs, horizon, dt, seed_sequence(seed, index))


def cocycle_check(x0, s: float, t: float, coeffs: CoefficientSet, noise: NoiseRealization,
                  dt: float) -> float:
    """max |phi(t+s, omega) x0 - phi(t, theta_s omega)(phi(s, omega) x0)|."""
    k_s = _aligned_steps(s, dt, "s")
    k_t = _aligned_steps(t, dt, "t")
    if k_s + k_t > noise.n_steps:
        raise ArgumentError("s + t exceeds the noise horizon")
    whole = simulate_path(x0, coeffs, noise, dt, horizon=s + t).final
    first = simulate_path(x0, coeffs, noise, dt, horizon=s).final
    second = simulate_path(first, coeffs, shift_noise(noise, s), dt, horizon=t).final
    return float(np.max(np.abs(whole - second)))


def refinement_deviation(x0, coeffs: CoefficientSet, noise: NoiseRealization) -> float:
    """|X_T on the grid dt - X_T on the grid 2 dt| along the same omega (reported only)."""
    fine = simulate_path(x0, coeffs, noise, noise.dt).final
    coarse_noise = coarsen_noise(noise)
    coarse = simulate_path(x0, coeffs, coarse_noise, coarse_noise.dt).final
    return float(np.max(np.abs(fine - coarse)))


# ---------------------------------------------------------------------------
# hypotheses
# ---------------------------------------------------------------------------


@dataclass
class AssumptionConstants:
    """Constants in the regularity hypotheses on b, sigma, f.

    ``jump_lipschitz`` is L(u) (defaults to the constant ``l_bound``);
    ``c_p`` is a number or a callable p -> C_p.
    """

    c_b: float = 1.0
    c_sigma: float = 1.0
    l_bound: float = 0.5
    q: float = 5.0
    c_p: object = 1.0
    jump_lipschitz: Optional[Callable] = None

    def __post_init__(self):
        if not self.l_bound < 1:
            raise ArgumentError("the jump Lipschitz bound must be < 1")

    def side_condition(self) -> float:
        """q delta / (1 - delta)^{q+1}; must be < 1."""
        d = self.l_bound
        return self.q * d / (1.0 - d) ** (self.q + 1)

    def cp(self, p):
        return self.c_p(p) if callable(self.c_p) else float(self.c_p)


def _log_mod(r):
    with np.errstate(divide="ignore"):
        return np.log(np.where(r > 0, 1.0 / np.where(r > 0, r, 1.0), np.inf) + math.e)


def default_pairs(rng, n, dim, radius=20.0):
    """x uniform in a ball, y = x + offsets with log-uniform lengths in [1e-6, 1e2]."""
    g = rng.standard_normal((n, dim))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    x = g * radius * rng.random((n, 1)) ** (1.0 / dim)
    h = rng.standard_normal((n, dim))
    h /= np.linalg.norm(h, axis=1, keepdims=True)
    y = x + h * 10.0 ** rng.uniform(-6, 2, (n, 1))
    return x, y


def falsify_assumptions(coeffs: CoefficientSet, constants: AssumptionConstants, sampler=None,
                        n: int = 1000, seed=0, quad: Optional[QuadratureSpec] = None) -> dict:
    """Evaluate the hypothesis inequalities on sampled pairs and report worst margins.

    A negative margin is a counterexample. A nonnegative margin on finitely
    many samples proves nothing about the hypothesis.
    """
    if n < 1:
        raise ArgumentError("n must be >= 1")
    rng = np.random.default_rng(seed)
    x, y = (sampler or default_pairs)(rng, n, coeffs.dim)
    r = np.linalg.norm(x - y, axis=1)
    lg = _log_mod(r)
    report = {}

    lhs = np.linalg.norm(coeffs.drift(x) - coeffs.drift(y), axis=1)
    m = constants.c_b * r * lg - lhs
    report["H_b"] = _worst(m, x, y)

    if coeffs.diffusion is not None:
        ds = coeffs.diffusion(x) - coeffs.diffusion(y)
        lhs = np.sum(ds.reshape(n, -1) ** 2, axis=1)
        m = constants.c_sigma * r ** 2 * lg - lhs
    else:
        m = constants.c_sigma * r ** 2 * lg
    report["H_sigma"] = _worst(m, x, y)

    js = coeffs.jump_space
    side = constants.side_condition()
    report["H_f_side_condition"] = {
        "value": side,
        "margin": 1.0 - side,
        "q_exceeds_4d": constants.q > 4 * coeffs.dim,
        "falsified": not (side < 1.0 and constants.q > 4 * coeffs.dim),
    }
    if js.active:
        u = js.sample_small(rng, n) if js.small_rate() > 0 else _small_marks(js, rng, n)
        L = constants.jump_lipschitz(u) if constants.jump_lipschitz else np.full(n, constants.l_bound)
        L = np.asarray(L, float).reshape(n)
        lhs = np.linalg.norm(coeffs.f(x, u) - coeffs.f(y, u), axis=1)
        m_lip = L * r - lhs
        m_zero = L - np.linalg.norm(coeffs.f(np.zeros_like(x), u), axis=1)
        m_sup = constants.l_bound - L
        report["H_f"] = _worst(np.minimum(np.minimum(m_lip, m_zero), m_sup), x, y)

        nodes, weights = js.quadrature("small", quad or QuadratureSpec())
        worst = np.inf
        witness = None
        for p in sorted({2.0, 0.5 * (2.0 + constants.q), float(constants.q)}):
            cp = constants.cp(p)
            k = len(nodes)
            for xa, ya in zip(x[: min(n, 200)], y[: min(n, 200)]):
                fx = coeffs.f(np.repeat(xa[None], k, 0), nodes)
                fy = coeffs.f(np.repeat(ya[None], k, 0), nodes)
                ra = np.linalg.norm(xa - ya)
                diff_int = np.sum(np.linalg.norm(fx - fy, axis=1) ** p * weights)
                grow_int = np.sum(np.linalg.norm(fx, axis=1) ** p * weights)
                m1 = cp * ra ** p * float(_log_mod(np.array([ra]))[0]) - diff_int
                m2 = cp * (1 + np.linalg.norm(xa)) ** p - grow_int
                if min(m1, m2) < worst:
                    worst = min(m1, m2)
                    witness = {"p": p, "x": xa.tolist(), "y": ya.tolist()}
        report["H_prime_f"] = {"worst_margin": float(worst), "falsified": bool(worst < 0), "witness": witness}
    report["note"] = (
        "negative margins are counterexamples; nonnegative margins on samples are not a proof. "
        "The homeomorphism condition on x + g(x, u) is not checked."
    )
    report["falsified"] = sorted(
        k for k, v in report.items() if isinstance(v, dict) and v.get("falsified")
    )
    return report


def _small_marks(js, rng, n):
    nodes, weights = js.quadrature("small", QuadratureSpec())
    if len(nodes) == 0:
        return np.zeros((n, js.dim))
    p = weights / weights.sum()
    return nodes[rng.choice(len(nodes), size=n, p=p)]


def _worst(margin, x, y):
    i = int(np.argmin(margin))
    return {
        "worst_margin": float(margin[i]),
        "falsified": bool(margin[i] < 0),
        "witness": {"x": x[i].tolist(), "y": y[i].tolist()},
    }
