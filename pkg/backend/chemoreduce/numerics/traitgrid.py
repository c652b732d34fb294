"""
traitgrid.py

Uniform discretization of a trait interval: nodes, trapezoidal quadrature weights and
the no-flux Laplacian. Every integral over x or y in the models is a weighted sum here.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from chemoreduce.errors import GridError

MIN_POINTS = 3


@dataclass(frozen=True)
class TraitGrid:
    """Uniform grid on [x_min, x_max] with trapezoidal weights.

    A one-node grid (see `point_grid`) is allowed for scalar systems: its single weight
    is 1 so integrals return the nodal value, and its Laplacian is zero.
    """
    x_min: float
    x_max: float
    n_points: int
    nodes: np.ndarray = field(init=False, repr=False, compare=False)
    quad_weights: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if not (math.isfinite(self.x_min) and math.isfinite(self.x_max)):
            raise GridError(f"grid bounds must be finite, got [{self.x_min}, {self.x_max}]")
        if self.n_points == 1:
            if self.x_min != self.x_max:
                raise GridError("a one-node grid needs x_min == x_max")
            nodes = np.array([float(self.x_min)])
            weights = np.array([1.0])
        else:
            if self.n_points < MIN_POINTS:
                raise GridError(f"n_points must be >= {MIN_POINTS}, got {self.n_points}")
            if not self.x_max > self.x_min:
                raise GridError(f"x_max must exceed x_min, got [{self.x_min}, {self.x_max}]")
            h = (self.x_max - self.x_min) / (self.n_points - 1)
            nodes = self.x_min + h * np.arange(self.n_points, dtype=float)
            nodes[-1] = self.x_max
            weights = np.full(self.n_points, h)
            weights[0] = weights[-1] = 0.5 * h
        nodes.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "quad_weights", weights)

    @property
    def h(self) -> float:
        if self.n_points == 1:
            return 0.0
        return (self.x_max - self.x_min) / (self.n_points - 1)

    @property
    def is_point(self) -> bool:
        return self.n_points == 1

    def check_length(self, values: np.ndarray, what: str = "values") -> np.ndarray:
        arr = np.asarray(values, dtype=float)
        if arr.ndim != 1 or arr.shape[0] != self.n_points:
            raise GridError(
                f"{what} has shape {arr.shape}, expected ({self.n_points},) for this grid"
            )
        return arr

    def same_as(self, other: "TraitGrid") -> bool:
        return (
            self.n_points == other.n_points
            and self.x_min == other.x_min
            and self.x_max == other.x_max
        )


def make_grid(x_min: float, x_max: float, n_points: int) -> TraitGrid:
    """Build a uniform trait grid with trapezoidal quadrature weights."""
    if int(n_points) != n_points or n_points < MIN_POINTS:
        raise GridError(f"n_points must be an integer >= {MIN_POINTS}, got {n_points}")
    return TraitGrid(float(x_min), float(x_max), int(n_points))


def point_grid(x0: float = 0.0) -> TraitGrid:
    """One-node grid with unit weight, for scalar (single trait) systems."""
    return TraitGrid(float(x0), float(x0), 1)


def integrate(values: np.ndarray, grid: TraitGrid) -> float:
    """Trapezoidal integral: sum of w_i * v_i."""
    arr = grid.check_length(values)
    return float(np.dot(grid.quad_weights, arr))


def laplacian(values: np.ndarray, grid: TraitGrid) -> np.ndarray:
    """Second-order central differences with mirrored ghost nodes (no-flux ends)."""
    v = grid.check_length(values)
    if grid.is_point:
        return np.zeros(1)
    inv_h2 = 1.0 / grid.h**2
    out = np.empty_like(v)
    out[1:-1] = (v[:-2] - 2.0 * v[1:-1] + v[2:]) * inv_h2
    out[0] = 2.0 * (v[1] - v[0]) * inv_h2
    out[-1] = 2.0 * (v[-2] - v[-1]) * inv_h2
    return out


def laplacian_bands(grid: TraitGrid) -> np.ndarray:
    """The `laplacian` stencil in `scipy.linalg.solve_banded` layout, shape (3, n_points).

    Row 0 holds the superdiagonal (ab[0, j] = L[j-1, j]), row 1 the diagonal and row 2 the
    subdiagonal (ab[2, j] = L[j+1, j]).
    """
    n = grid.n_points
    ab = np.zeros((3, n))
    if grid.is_point:
        return ab
    inv_h2 = 1.0 / grid.h**2
    ab[0, 1:] = inv_h2
    ab[0, 1] = 2.0 * inv_h2
    ab[1, :] = -2.0 * inv_h2
    ab[2, :-1] = inv_h2
    ab[2, -2] = 2.0 * inv_h2
    return ab


def laplacian_matrix(grid: TraitGrid) -> np.ndarray:
    """Dense matrix of `laplacian`; meant for spectral checks on small grids."""
    ab = laplacian_bands(grid)
    return np.diag(ab[1]) + np.diag(ab[0, 1:], 1) + np.diag(ab[2, :-1], -1)


def l1_norm(values: np.ndarray, grid: TraitGrid) -> float:
    return integrate(np.abs(grid.check_length(values)), grid)


def grid_from_nodes(nodes: np.ndarray, rel_tol: float = 1e-9, what: Optional[str] = None) -> TraitGrid:
    """Recover the uniform grid a tabulated node column was sampled on."""
    arr = np.asarray(nodes, dtype=float)
    label = what or "nodes"
    if arr.ndim != 1 or arr.size < MIN_POINTS:
        raise GridError(f"{label}: need at least {MIN_POINTS} nodes, got {arr.size}")
    grid = make_grid(arr[0], arr[-1], arr.size)
    if np.max(np.abs(arr - grid.nodes)) > rel_tol * max(grid.h, 1.0):
        raise GridError(f"{label}: nodes are not uniformly spaced")
    return grid
