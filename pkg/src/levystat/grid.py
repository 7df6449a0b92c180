"""Uniform periodic-layout grids carrying densities."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ArgumentError


@dataclass(frozen=True)
class Axis:
    """Nodes lo + j*h, j = 0..n-1, with h = (hi - lo)/n (hi itself is the periodic image of lo)."""

    lo: float
    hi: float
    n: int

    def __post_init__(self):
        if not self.hi > self.lo or self.n < 2:
            raise ArgumentError("axis needs hi > lo and n >= 2")

    @property
    def h(self) -> float:
        return (self.hi - self.lo) / self.n

    @property
    def nodes(self) -> np.ndarray:
        return self.lo + self.h * np.arange(self.n)

    @classmethod
    def symmetric(cls, halfwidth: float, n: int) -> "Axis":
        return cls(-float(halfwidth), float(halfwidth), int(n))


@dataclass
class DensityGrid:
    """Density values (probability per unit volume) on a tensor grid.

    ``meta`` carries solver diagnostics (residual, clamped mass, ...).
    """

    axes: tuple
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.axes = tuple(self.axes)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != tuple(a.n for a in self.axes):
            raise ArgumentError("values shape does not match the axes")

    @property
    def dim(self) -> int:
        return len(self.axes)

    @property
    def cell_volume(self) -> float:
        return float(np.prod([a.h for a in self.axes]))

    @property
    def mass(self) -> float:
        return float(self.values.sum() * self.cell_volume)

    def mesh(self) -> list:
        return np.meshgrid(*[a.nodes for a in self.axes], indexing="ij")

    def points(self) -> np.ndarray:
        """Grid nodes as an (N, d) array in C order."""
        return np.stack([m.ravel() for m in self.mesh()], axis=1)

    def like(self, values, **meta) -> "DensityGrid":
        return DensityGrid(self.axes, values, {**self.meta, **meta} if meta else dict(self.meta))

    def same_grid(self, other: "DensityGrid") -> bool:
        return all(
            a.n == b.n and np.isclose(a.lo, b.lo) and np.isclose(a.hi, b.hi)
            for a, b in zip(self.axes, other.axes)
        ) and self.dim == other.dim

    def normalized(self) -> "DensityGrid":
        m = self.mass
        if not m > 0:
            raise ArgumentError("cannot normalize a grid with nonpositive mass")
        return self.like(self.values / m)

    def clamped(self) -> "DensityGrid":
        """Clip negative ripple to zero and renormalize; records the clipped mass."""
        neg = -self.values[self.values < 0].sum() * self.cell_volume
        out = self.like(np.clip(self.values, 0.0, None), mass_clamped=float(neg))
        return out.normalized() if out.mass > 0 else out

    def l1(self, other) -> float:
        """L1 distance to another grid on the same nodes or to a callable density."""
        if callable(other):
            ref = np.asarray(other(*self.mesh()), dtype=float)
        else:
            if not self.same_grid(other):
                raise ArgumentError("grids differ")
            ref = other.values
        return float(np.abs(self.values - ref).sum() * self.cell_volume)

    def boundary_mass(self, fraction: float = 0.05) -> float:
        """Mass in the outer ``fraction`` of every axis."""
        mask = np.zeros(self.values.shape, bool)
        for k, a in enumerate(self.axes):
            w = max(1, int(round(fraction * a.n / 2)))
            sl = [slice(None)] * self.dim
            sl[k] = np.r_[0:w, a.n - w:a.n]
            mask[tuple(sl)] = True
        return float(np.abs(self.values[mask]).sum() * self.cell_volume)

    @classmethod
    def from_function(cls, fn, axes: Sequence[Axis], **meta) -> "DensityGrid":
        mesh = np.meshgrid(*[a.nodes for a in axes], indexing="ij")
        return cls(tuple(axes), np.asarray(fn(*mesh), dtype=float), dict(meta))

    @classmethod
    def from_points(cls, coords: Sequence[np.ndarray], values, rtol: float = 1e-9) -> "DensityGrid":
        """Build from explicit node coordinates per axis; rejects non-uniform spacing."""
        axes = []
        for c in coords:
            c = np.asarray(c, dtype=float)
            if c.ndim != 1 or len(c) < 2:
                raise ArgumentError("each axis needs at least two nodes")
            d = np.diff(c)
            if not np.all(np.abs(d - d[0]) <= rtol * abs(d[0])) or d[0] <= 0:
                raise ArgumentError("grid is not uniform")
            axes.append(Axis(float(c[0]), float(c[0] + d[0] * len(c)), len(c)))
        return cls(tuple(axes), values)

    def to_csv(self, path) -> None:
        """Rows ``y_1..y_d,rho`` (negative ripple clamped to 0 on export)."""
        pts = self.points()
        vals = np.clip(self.values.ravel(), 0.0, None)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"y_{i + 1}" for i in range(self.dim)] + ["rho"])
            for p, v in zip(pts, vals):
                w.writerow([repr(float(x)) for x in p] + [repr(float(v))])

    def meta_json(self, extra: Optional[dict] = None) -> str:
        doc = {
            "axes": [{"lo": a.lo, "hi": a.hi, "n": a.n} for a in self.axes],
            "mass": self.mass,
            **{k: v for k, v in self.meta.items() if _jsonable(v)},
            **(extra or {}),
        }
        return json.dumps(doc, indent=2, sort_keys=True)


def _jsonable(v) -> bool:
    try:
        json.dumps(v)
        return True
    except TypeError:
        return False


def grid_1d(halfwidth: float, n: int, values=None) -> DensityGrid:
    ax = Axis.symmetric(halfwidth, n)
    return DensityGrid((ax,), np.zeros(n) if values is None else values)
