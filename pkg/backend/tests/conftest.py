"""Shared fixtures: small grids and coefficient sets that keep the suite fast."""
from __future__ import annotations

import copy
import json
from pathlib import Path

import numpy as np
import pytest

from chemoreduce.numerics.model import (
    Coefficients,
    build_gaussian_coefficients,
    reduce_kernel,
    write_coefficients_csv,
)
from chemoreduce.numerics.traitgrid import make_grid

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"

SMALL_CONFIG = {
    "model": "both",
    "grid_x": {"min": -2.0, "max": 2.0, "points": 41},
    "grid_y": {"min": -2.0, "max": 2.0, "points": 41},
    "coefficients": {"kind": "gaussian", "sigma_K": 0.5, "sigma_in": 0.5, "M_in": 1.0, "m": 1.0},
    "scales": {"epsilon": 0.1, "mu": 0.005},
    "initial": {"center": -0.8, "variance": 0.05, "mass": 1.0},
    "time": {"t_end": 0.2, "dt": 0.01, "sample_every": 5},
    "experiment": {"kind": "single"},
}


@pytest.fixture
def grid41():
    return make_grid(-2.0, 2.0, 41)


@pytest.fixture
def small_coeffs(grid41):
    return build_gaussian_coefficients(0.5, 0.5, 1.0, 1.0, grid41, make_grid(-2.0, 2.0, 41))


@pytest.fixture
def small_kernel(small_coeffs):
    return reduce_kernel(small_coeffs)


@pytest.fixture
def small_config():
    """A fresh, mutable copy of the small run configuration."""
    return copy.deepcopy(SMALL_CONFIG)


@pytest.fixture
def write_config(tmp_path):
    def _write(data, name: str = "config.json") -> Path:
        path = tmp_path / name
        path.write_text(json.dumps(data), encoding="utf-8")
        return path

    return _write


@pytest.fixture
def uncoupled_tables(tmp_path, grid41):
    """CSV coefficient tables with K = 0, a = 1 - x^2, m = R_in = 1."""
    coeffs = Coefficients(
        grid_x=grid41,
        grid_y=grid41,
        a=1.0 - grid41.nodes**2,
        m=np.ones(41),
        R_in=np.ones(41),
        K=np.zeros((41, 41)),
    )
    paths = {
        "profile_x": tmp_path / "profile_x.csv",
        "profile_y": tmp_path / "profile_y.csv",
        "kernel": tmp_path / "kernel.csv",
    }
    write_coefficients_csv(coeffs, paths["profile_x"], paths["profile_y"], paths["kernel"])
    return paths
