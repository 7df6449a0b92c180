"""Command-line front end: ``levystat <subcommand> --config FILE --out DIR [--seed N]``.

Exit status: 0 when every asserted check passed, 1 when one failed (the
report names it), 2 for usage, configuration or domain errors. A config
that fails validation never creates the output directory.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import json
import math
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .config import ExperimentConfig, NoiseSpec, load_config
from .errors import ArgumentError, DomainError, NonConvergenceError
from .fokker_planck import SpectralConfig, closed_form_ou_density, solve_stationary_fp
from .generator import default_battery, default_dts, generator_consistency_check
from .jumps import NoJumps, StableJumps, UniformJumps
from .lyapunov import (check_drift, check_sandwich, quadratic_spec, sample_points,
                       verify_ultimate_boundedness)
from .models import Model, affine_model, get_model
from .noise import BrownianParams, StableParams
from .sde import (CoefficientSet, Ensemble, MonteCarloConfig, noise_to_json, sample_noise, seed_sequence,
                  simulate_ensemble)
from .stationary import (EmpiricalMeasure, kb_occupation, stationarity_test, tightness_diagnostic,
                         weak_residual)

SUBCOMMANDS = ("simulate", "stationary", "lyapunov", "fp-solve", "consistency", "validate")
CONSTANTS_TABLE = [(d, a) for d in (1, 2, 3) for a in (0.5, 1.0, 1.5)]


# ---------------------------------------------------------------------------
# model assembly
# ---------------------------------------------------------------------------


def _noise_parts(spec: Optional[NoiseSpec], dim: int, small_jumps: Optional[str] = None):
    """(diffusion, noise_dim, jump space, fp params, fp sigma) for a noise spec."""
    if spec is None or spec.kind == "none":
        return None, 0, NoJumps(dim=dim), None, None
    if spec.kind == "brownian":
        S = np.asarray(spec.sigma, float)
        if S.ndim != 2 or S.shape[0] != dim:
            raise ArgumentError("noise.sigma must be a matrix with d rows")
        sigma = lambda x: np.broadcast_to(S, (len(x),) + S.shape).copy()  # noqa: E731
        return sigma, S.shape[1], NoJumps(dim=dim), None, sigma
    if spec.kind == "stable":
        params = StableParams(spec.alpha, dim, spec.delta, small_jumps or spec.small_jumps)
        return None, 0, StableJumps(params), params, None
    if dim != 1:
        raise ArgumentError("uniform jumps are one-dimensional")
    return None, 0, UniformJumps(spec.lo, spec.hi, spec.mass, spec.delta), None, None


def build_model(cfg: ExperimentConfig, small_jumps: Optional[str] = None) -> Model:
    if isinstance(cfg.model, str):
        base = get_model(cfg.model, small_jumps)
        if cfg.noise is None:
            return base
        diffusion, nd, js, params, sigma = _noise_parts(cfg.noise, base.dim, small_jumps)
        coeffs = CoefficientSet(base.dim, base.coeffs.drift, diffusion, nd, jump_space=js,
                                name=f"{base.name}+{cfg.noise.kind}")
        return Model(coeffs.name, coeffs, base.coeffs.drift, sigma, params)
    A = np.asarray(cfg.model.drift_matrix, float)
    diffusion, nd, js, params, sigma = _noise_parts(cfg.noise, A.shape[0], small_jumps)
    model = affine_model(A, cfg.model.drift_offset, None, js, params, cfg.model.name)
    if diffusion is not None:
        model.coeffs = CoefficientSet(model.dim, model.coeffs.drift, diffusion, nd, jump_space=js,
                                      name=cfg.model.name)
        model.fp_sigma = sigma
    return model


def _x0(cfg: ExperimentConfig, dim: int) -> np.ndarray:
    x = np.atleast_1d(np.asarray(cfg.solver.x0, float))
    if x.size == 1:
        return np.full(dim, float(x[0]))
    if x.size != dim:
        raise ArgumentError("solver.x0 has the wrong dimension")
    return x


def _mc(cfg: ExperimentConfig, **kw) -> MonteCarloConfig:
    s = cfg.solver
    base = dict(n_paths=s.paths, dt=s.dt, seed=s.seed, chunk_size=s.chunk_size, streams=s.streams)
    base.update(kw)
    return MonteCarloConfig(**base)


def _finite(x):
    """JSON-safe copy (NaN/inf become None)."""
    if isinstance(x, dict):
        return {k: _finite(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_finite(v) for v in x]
    if isinstance(x, (np.floating, float)):
        return float(x) if math.isfinite(x) else None
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, np.ndarray):
        return _finite(x.tolist())
    return x


# ---------------------------------------------------------------------------
# subcommands: each returns (results, checks)
# ---------------------------------------------------------------------------


def run_simulate(cfg: ExperimentConfig, out: Path):
    model = build_model(cfg)
    s = cfg.solver
    ens = simulate_ensemble(_x0(cfg, model.dim), model.coeffs, s.paths, s.dt, s.horizon, seed=s.seed,
                            record_every=s.record_every, chunk_size=s.chunk_size, streams=s.streams)
    n_rec, n, d = ens.states.shape
    t = np.repeat(ens.times, n)
    path = np.tile(np.arange(n), n_rec)
    table = np.column_stack([t, path, ens.states.reshape(-1, d)])
    header = ",".join(["t", "path"] + [f"state_{i + 1}" for i in range(d)])
    np.savetxt(out / "paths.csv", table, delimiter=",", header=header, comments="",
               fmt=["%.17g", "%d"] + ["%.17g"] * d)
    if s.streams == "path":
        noise = sample_noise(model.coeffs, s.horizon, s.dt, seed_sequence(s.seed, 0))
        (out / "noise_path0.json").write_text(noise_to_json(noise))
    mean, se = ens.second_moment()
    results = {
        "n_paths": n,
        "n_exploded": int(ens.exploded.sum()),
        "times": ens.times,
        "second_moment": mean,
        "second_moment_stderr": se,
    }
    return results, {}


def _sub_ensemble(ens: Ensemble, horizon: float) -> Ensemble:
    k = int(np.searchsorted(ens.times, horizon + 1e-9 * max(1.0, horizon), side="right"))
    return Ensemble(ens.times[:k], ens.states[:k], ens.exploded, ens.dt, ens.seed)


def run_stationary(cfg: ExperimentConfig, out: Path):
    model = build_model(cfg)
    s, a = cfg.solver, cfg.analysis.stationary
    ens = simulate_ensemble(_x0(cfg, model.dim), model.coeffs, s.paths, s.dt, s.horizon, seed=s.seed,
                            record_every=s.record_every, chunk_size=s.chunk_size, streams=s.streams)
    measure = kb_occupation(ens, a.burn_in_fraction * s.horizon, a.thinning)
    measure.to_csv(out / "occupation.csv")
    lo, hi = np.quantile(measure.samples, [0.005, 0.995], axis=0)
    rng_ = [(float(x), float(y) if y > x else float(x) + 1.0) for x, y in zip(lo, hi)]
    (out / "histogram.json").write_text(measure.with_histogram(200 if model.dim == 1 else 50, rng_).histogram_json())

    results = {"n_samples": measure.n, "meta": measure.meta, "ks": None, "energy": None}
    checks = {}
    if model.dim == 1 and model.stationary_cdf is not None:
        ks = measure.ks_to(model.stationary_cdf)
        results["ks"] = ks
        if "ks" in a.asserted:
            checks["ks"] = ks <= a.ks_threshold
    results["tail_mass"] = {str(r): {"mass": measure.tail_mass(r), "stderr": measure.tail_mass_stderr(r)}
                            for r in a.tail_radii}

    measures = []
    for f in a.tightness_fractions:
        sub = _sub_ensemble(ens, f * s.horizon)
        h = float(sub.times[-1])
        if h > 0:
            measures.append(kb_occupation(sub, a.burn_in_fraction * h, a.thinning))
    if len(measures) >= 2:
        tight = tightness_diagnostic(measures, a.tightness_epsilon)
        results["tightness"] = tight.to_dict()
        if "tightness" in a.asserted:
            checks["tightness"] = tight.stabilized

    push = stationarity_test(measure, model.coeffs, a.push_forward_time,
                             _mc(cfg, n_paths=a.push_forward_paths, streams="block"))
    results["push_forward"] = push.to_dict()
    if push.statistic == "energy":
        results["energy"] = push.distance
    if "push_forward" in a.asserted:
        checks["push_forward"] = push.passed

    rng = np.random.default_rng(seed_sequence(s.seed, 11))
    if measure.n > a.residual_samples:
        idx = np.sort(rng.choice(measure.n, a.residual_samples, replace=False))
        sub_m = EmpiricalMeasure.uniform(measure.samples[idx], measure.meta, measure.groups[idx])
    else:
        sub_m = measure
    wr = weak_residual(sub_m, model.coeffs, default_battery(model.dim))
    results["residuals"] = wr.to_dict()
    if "weak_residual" in a.asserted:
        checks["weak_residual"] = wr.passed
    return results, checks


def run_lyapunov(cfg: ExperimentConfig, out: Path):
    model = build_model(cfg)
    a = cfg.analysis.lyapunov
    spec = quadratic_spec(a.k1, a.k2, a.k3, a.m1, a.m2, a.m3, model.dim, a.v_scale)
    pts = sample_points(model.dim, a.radius, a.points, seed=cfg.solver.seed)
    sandwich = check_sandwich(spec, pts)
    drift = check_drift(spec, model.coeffs, None, pts)
    times = np.linspace(0.0, a.t_max, a.n_times)
    rep = verify_ultimate_boundedness(model.coeffs, spec, _x0(cfg, model.dim), times, _mc(cfg), a.n_sigma)
    checks = {"sandwich": not sandwich.falsified, "drift": not drift.falsified, "moment_bound": rep.passed}
    verdict = "pass" if all(checks.values()) else "fail"
    results = {
        "spec": spec.as_dict(),
        "sandwich_margin": sandwich.to_dict(),
        "drift_margin": drift.to_dict(),
        "times": rep.times,
        "bound_curve": rep.bound,
        "mc_curve": rep.mc_mean,
        "mc_stderr": rep.mc_stderr,
        "ultimate_constant": rep.ultimate_constant,
        "limsup_estimate": rep.limsup_estimate,
        "verdict": f"{verdict} ({sandwich.note})",
    }
    np.savetxt(out / "moments.csv", np.column_stack([rep.times, rep.mc_mean, rep.mc_stderr, rep.bound]),
               delimiter=",", header="t,mc_mean,mc_stderr,bound", comments="", fmt="%.17g")
    return results, checks


def run_fp_solve(cfg: ExperimentConfig, out: Path):
    model = build_model(cfg)
    a = cfg.analysis.fokker_planck
    if model.fp_params is None and model.fp_sigma is None:
        raise DomainError(f"model {model.name!r} has no noise the spectral solver handles "
                          "(alpha-stable, Brownian or constant diffusion)")
    scfg = SpectralConfig(domain_halfwidth=a.halfwidth, n=a.n, pseudo_dt=a.pseudo_dt, tol=a.tol,
                          max_steps=a.max_steps, scheme=a.scheme)
    rho = solve_stationary_fp(model.fp_drift, model.fp_sigma, model.fp_params, scfg, dim=model.dim)
    rho.to_csv(out / "density.csv")
    meta = {k: v for k, v in rho.meta.items() if k not in ("internal", "seconds")}
    meta["config"] = scfg.__dict__
    (out / "density.json").write_text(json.dumps(_finite({**meta, "mass": rho.mass}), indent=2, sort_keys=True))
    results = {"residual": rho.meta["residual"], "cycles": rho.meta["cycles"], "box_mass": rho.meta["box_mass"],
               "mass_clamped": rho.meta["mass_clamped"], "extension": rho.meta["extension"]}
    checks = {"residual": rho.meta["residual"] <= a.tol}
    if model.closed_form and isinstance(model.fp_params, (StableParams, BrownianParams)):
        ref = closed_form_ou_density(model.fp_params, scfg, dim=model.dim)
        ref.to_csv(out / "reference.csv")
        l1 = rho.l1(ref)
        results["l1_vs_closed_form"] = l1
        checks["l1_vs_closed_form"] = l1 <= a.l1_tolerance
    return results, checks


def run_consistency(cfg: ExperimentConfig, out: Path):
    model = build_model(cfg, small_jumps="series")
    a = cfg.analysis.consistency
    dts = a.dts or default_dts(model.coeffs)
    reports, checks = [], {}
    for h in default_battery(model.dim):
        for y in a.points:
            rep = generator_consistency_check(h, np.full(model.dim, y), model.coeffs, dts, a.paths,
                                              seed=cfg.solver.seed, n_sigma=a.n_sigma, degree=a.degree)
            d = rep.to_dict()
            d["y"] = y
            reports.append(d)
            checks[f"{h.name}@{y:g}"] = rep.passed and not rep.inconclusive
    return {"dts": dts, "paths": a.paths, "reports": reports}, checks


def run_validate(cfg: ExperimentConfig, out: Path):
    rows, checks = [], {}
    for d, alpha in CONSTANTS_TABLE:
        chk = StableParams(alpha, d).self_check()
        rows.append({"dim": d, "alpha": alpha, "C": chk["c_exponent"], "C_levy": chk["c_levy"],
                     "rel_err_C": chk["rel_err_c_exponent"], "rel_err_C_levy": chk["rel_err_c_levy"]})
        checks[f"constants d={d} alpha={alpha:g}"] = chk["ok"]
    (out / "constants.json").write_text(json.dumps(_finite(rows), indent=2))
    return {"constants": rows, "config_valid": True}, checks


RUNNERS = {
    "simulate": run_simulate,
    "stationary": run_stationary,
    "lyapunov": run_lyapunov,
    "fp-solve": run_fp_solve,
    "consistency": run_consistency,
    "validate": run_validate,
}


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="levystat", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"levystat {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="YAML or JSON experiment config (defaults when omitted)")
        p.add_argument("--out", help="output directory (overrides output.dir)")
        p.add_argument("--seed", type=int, help="overrides solver.seed")
        p.add_argument("--model", help="overrides model (registered name)")
    return parser


def _error(msg: str) -> int:
    print(f"levystat: error: {msg}", file=sys.stderr)
    return 2


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {}
    if args.seed is not None:
        overrides["solver.seed"] = args.seed
    if args.model is not None:
        overrides["model"] = args.model
    try:
        cfg = load_config(args.config, overrides, subcommand=args.command)
        out_dir = args.out or cfg.output.dir
        if out_dir is None:
            raise ArgumentError("no output directory: pass --out or set output.dir")
        if isinstance(cfg.model, str):
            get_model(cfg.model)  # unknown names fail before anything is written
    except ArgumentError as exc:
        return _error(str(exc))

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.model_dump(mode="json"), indent=2, sort_keys=True))
    status = 0
    try:
        results, checks = RUNNERS[args.command](cfg, out)
    except (ArgumentError, DomainError) as exc:
        return _error(str(exc))
    except NonConvergenceError as exc:
        results, checks = {"error": str(exc), "residual_history": exc.history}, {"converged": False}
    failed = [k for k, ok in checks.items() if not ok]
    if failed:
        status = 1
        print(f"levystat: failed checks: {', '.join(failed)}", file=sys.stderr)
    report = {
        "subcommand": args.command,
        "model": cfg.model if isinstance(cfg.model, str) else cfg.model.name,
        "config_hash": cfg.config_hash(),
        "seed": cfg.solver.seed,
        "created": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "checks": checks,
        "failed": failed,
        "passed": not failed,
        "results": results,
    }
    (out / "report.json").write_text(json.dumps(_finite(report), indent=2, sort_keys=True))
    return status


if __name__ == "__main__":
    sys.exit(main())
