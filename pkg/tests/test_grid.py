import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from levystat.errors import ArgumentError
from levystat.grid import Axis, DensityGrid, grid_1d


def test_axis_layout():
    ax = Axis.symmetric(2.0, 8)
    assert ax.h == 0.5
    assert ax.nodes[0] == -2.0 and ax.nodes[-1] == 1.5
    with pytest.raises(ArgumentError):
        Axis(1.0, 1.0, 8)


def test_mass_and_normalization():
    g = grid_1d(5.0, 100, np.full(100, 3.0))
    assert g.mass == pytest.approx(30.0)
    assert g.normalized().mass == pytest.approx(1.0, abs=1e-12)


@given(st.lists(st.floats(-1.0, 2.0), min_size=8, max_size=64))
def test_clamped_keeps_unit_mass(vals):
    vals = np.asarray(vals)
    g = DensityGrid((Axis.symmetric(1.0, len(vals)),), vals)
    if np.clip(vals, 0, None).sum() == 0:
        return
    c = g.clamped()
    assert np.all(c.values >= 0)
    assert c.mass == pytest.approx(1.0, abs=1e-12)
    assert c.meta["mass_clamped"] == pytest.approx(-vals[vals < 0].sum() * g.cell_volume)


def test_l1_against_callable_and_grid():
    ax = Axis.symmetric(10.0, 2000)
    g = DensityGrid.from_function(lambda y: np.exp(-y * y / 2) / np.sqrt(2 * np.pi), (ax,))
    assert g.l1(lambda y: np.exp(-y * y / 2) / np.sqrt(2 * np.pi)) == 0.0
    assert g.l1(g.like(np.zeros(2000))) == pytest.approx(1.0, abs=1e-9)
    with pytest.raises(ArgumentError):
        g.l1(grid_1d(10.0, 1000))


def test_from_points_rejects_nonuniform():
    with pytest.raises(ArgumentError):
        DensityGrid.from_points([np.array([0.0, 1.0, 3.0])], np.zeros(3))
    g = DensityGrid.from_points([np.linspace(0, 1, 5, endpoint=False)], np.ones(5))
    assert g.axes[0].h == pytest.approx(0.2)


def test_csv_and_json_export(tmp_path):
    g = grid_1d(1.0, 4, np.array([0.1, -0.2, 0.3, 0.4]))
    g.meta["residual"] = 1e-9
    g.meta["internal"] = object()
    g.to_csv(tmp_path / "d.csv")
    lines = (tmp_path / "d.csv").read_text().splitlines()
    assert lines[0] == "y_1,rho"
    assert lines[2].endswith(",0.0")
    doc = json.loads(g.meta_json())
    assert doc["residual"] == 1e-9 and "internal" not in doc


def test_boundary_mass():
    g = grid_1d(1.0, 100, np.ones(100))
    assert g.boundary_mass(0.1) == pytest.approx(0.2)
