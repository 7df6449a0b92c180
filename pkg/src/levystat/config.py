"""Experiment configuration: YAML (or JSON) parsed into strict pydantic models.

Every section rejects unknown keys. The canonical JSON dump of the
validated config is hashed into every report.
"""
from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import List, Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .errors import ArgumentError


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class NoiseSpec(_Strict):
    """Driver override for a registered model, or the driver of an inline model."""

    kind: Literal["none", "brownian", "stable", "uniform"]
    alpha: Optional[float] = Field(None, gt=0.0, lt=2.0)
    delta: float = Field(1.0, gt=0.0)
    small_jumps: Literal["gaussian", "series"] = "gaussian"
    lo: float = -1.0
    hi: float = 1.0
    mass: float = Field(1.0, gt=0.0)
    sigma: Optional[List[List[float]]] = None

    @model_validator(mode="after")
    def _check(self):
        if self.kind == "stable" and self.alpha is None:
            raise ValueError("stable noise needs alpha")
        if self.kind == "uniform" and not self.hi > self.lo:
            raise ValueError("uniform noise needs hi > lo")
        if self.kind == "brownian" and self.sigma is None:
            raise ValueError("brownian noise needs a sigma matrix")
        return self


class InlineModel(_Strict):
    """Affine drift b(x) = A x + c."""

    drift_matrix: List[List[float]]
    drift_offset: Optional[List[float]] = None
    name: str = "inline"


class SolverSpec(_Strict):
    dt: float = Field(1e-3, gt=0.0)
    horizon: float = Field(200.0, gt=0.0)
    paths: int = Field(50, ge=1, le=10_000_000)
    seed: int = Field(0, ge=0)
    x0: Union[float, List[float]] = 0.0
    streams: Literal["path", "block"] = "path"
    chunk_size: int = Field(4096, ge=1)
    record_every: int = Field(10, ge=1)


class StationaryAnalysis(_Strict):
    burn_in_fraction: float = Field(0.1, ge=0.0, lt=1.0)
    thinning: int = Field(1, ge=1)
    ks_threshold: float = Field(0.02, gt=0.0)
    tightness_epsilon: float = Field(0.05, gt=0.0, lt=1.0)
    tightness_fractions: List[float] = [0.125, 0.25, 0.5, 1.0]
    tail_radii: List[float] = [2.0, 5.0, 10.0]
    push_forward_time: float = Field(1.0, gt=0.0)
    push_forward_paths: int = Field(10_000, ge=1000)
    residual_samples: int = Field(5_000, ge=100)
    asserted: List[Literal["ks", "weak_residual", "push_forward", "tightness"]] = ["ks", "weak_residual"]


class LyapunovAnalysis(_Strict):
    k1: float = Field(1.0, gt=0.0)
    k2: float = Field(1.0, gt=0.0)
    k3: float = Field(1.0, gt=0.0)
    m1: float = Field(0.0, ge=0.0)
    m2: float = Field(0.0, ge=0.0)
    m3: float = Field(2.0, ge=0.0)
    v_scale: float = Field(1.0, gt=0.0)
    radius: float = Field(20.0, gt=0.0)
    points: int = Field(10_000, ge=1)
    t_max: float = Field(10.0, gt=0.0)
    n_times: int = Field(21, ge=2)
    n_sigma: float = Field(3.0, gt=0.0)


class FokkerPlanckAnalysis(_Strict):
    n: int = Field(4096, ge=8)
    halfwidth: Optional[float] = Field(None, gt=0.0)
    tol: float = Field(1e-8, gt=0.0)
    pseudo_dt: float = Field(0.1, gt=0.0)
    max_steps: int = Field(200, ge=1)
    scheme: Literal["upwind", "central"] = "central"
    l1_tolerance: float = Field(1e-3, gt=0.0)

    @model_validator(mode="after")
    def _pow2(self):
        if self.n & (self.n - 1):
            raise ValueError("n must be a power of two")
        return self


class ConsistencyAnalysis(_Strict):
    dts: Optional[List[float]] = None  # None: halving ladder chosen by the noise type
    paths: int = Field(8_000_000, ge=100)
    points: List[float] = [0.0]
    n_sigma: float = Field(3.0, gt=0.0)
    degree: int = Field(3, ge=1)

    @model_validator(mode="after")
    def _dts(self):
        if self.dts is None:
            return self
        if len(self.dts) < 2 or any(b >= a for a, b in zip(self.dts, self.dts[1:])) or min(self.dts) <= 0:
            raise ValueError("dts must be positive and strictly decreasing (at least two)")
        return self


class AnalysisSpec(_Strict):
    stationary: StationaryAnalysis = StationaryAnalysis()
    lyapunov: LyapunovAnalysis = LyapunovAnalysis()
    fokker_planck: FokkerPlanckAnalysis = FokkerPlanckAnalysis()
    consistency: ConsistencyAnalysis = ConsistencyAnalysis()


class OutputSpec(_Strict):
    dir: Optional[str] = None
    formats: List[Literal["csv", "json"]] = ["csv", "json"]


class ExperimentConfig(_Strict):
    model: Union[str, InlineModel] = "ou-cauchy"
    noise: Optional[NoiseSpec] = None
    solver: SolverSpec = SolverSpec()
    analysis: AnalysisSpec = AnalysisSpec()
    output: OutputSpec = OutputSpec()

    def canonical_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()


# solver settings each subcommand uses unless the config sets them
SUBCOMMAND_SOLVER = {
    "simulate": {"dt": 1e-2, "horizon": 10.0, "paths": 100, "record_every": 1},
    "stationary": {},
    "lyapunov": {"dt": 5e-3, "horizon": 10.0, "paths": 100_000, "streams": "block", "x0": 3.0},
    "fp-solve": {},
    "consistency": {},
    "validate": {},
}


def load_config(path: Optional[Union[str, Path]] = None, overrides: Optional[dict] = None,
                subcommand: Optional[str] = None) -> ExperimentConfig:
    """Parse a YAML/JSON file (or defaults when ``path`` is None) and apply overrides.

    ``overrides`` maps dotted keys to values, e.g. {"solver.seed": 3}.
    Solver keys missing from the file take the defaults of ``subcommand``.
    Raises ArgumentError on any parse or validation failure.
    """
    data = {}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ArgumentError(f"cannot read config: {exc}") from None
        try:
            data = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ArgumentError(f"config is not valid YAML: {exc}") from None
        if not isinstance(data, dict):
            raise ArgumentError("config must be a mapping at the top level")
    if subcommand is not None and isinstance(data.get("solver", {}), dict):
        solver = dict(data.get("solver") or {})
        for key, value in SUBCOMMAND_SOLVER.get(subcommand, {}).items():
            solver.setdefault(key, value)
        data["solver"] = solver
    for key, value in (overrides or {}).items():
        node = data
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = value
    try:
        return ExperimentConfig.model_validate(data)
    except Exception as exc:  # pydantic.ValidationError
        raise ArgumentError(f"invalid config: {exc}") from None
