"""
model.py

Model coefficients (a, m, R_in, K and the optional b, d_slow split), the conversion of
the uptake kernel K into the direct competition kernel

    c(x, x') = integral of K(x, y) * R_in(y) / m(y) * K(x', y) dy,

and the closed form of that reduction for unnormalized Gaussians, which serves as an
analytic oracle and shows that a Gaussian uptake kernel does not reduce to a Gaussian
(translation invariant) competition kernel.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable, Optional, Union

import numpy as np
import pandas as pd

from chemoreduce.errors import CoefficientError, GridError
from chemoreduce.numerics.traitgrid import TraitGrid, grid_from_nodes

PathLike = Union[str, Path]

SQRT_2PI = math.sqrt(2.0 * math.pi)


def _as_vector(values, grid: TraitGrid, name: str) -> np.ndarray:
    arr = np.array(values, dtype=float)
    if arr.ndim != 1 or arr.shape[0] != grid.n_points:
        raise CoefficientError(f"{name} has shape {arr.shape}, expected ({grid.n_points},)")
    if not np.all(np.isfinite(arr)):
        raise CoefficientError(f"{name} contains non-finite values")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Coefficients:
    """Tabulated coefficients of the epsilon-scaled chemostat.

    `a` lives on grid_x, `m` and `R_in` on grid_y, and `K` on grid_x x grid_y.
    When `b` and `d_slow` are given they must satisfy a = b - d_slow.
    """
    grid_x: TraitGrid
    grid_y: TraitGrid
    a: np.ndarray = field(repr=False)
    m: np.ndarray = field(repr=False)
    R_in: np.ndarray = field(repr=False)
    K: np.ndarray = field(repr=False)
    b: Optional[np.ndarray] = field(default=None, repr=False)
    d_slow: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "a", _as_vector(self.a, self.grid_x, "a"))
        object.__setattr__(self, "m", _as_vector(self.m, self.grid_y, "m"))
        object.__setattr__(self, "R_in", _as_vector(self.R_in, self.grid_y, "R_in"))

        K = np.array(self.K, dtype=float)
        if K.shape != (self.grid_x.n_points, self.grid_y.n_points):
            raise CoefficientError(
                f"K has shape {K.shape}, expected {(self.grid_x.n_points, self.grid_y.n_points)}"
            )
        if not np.all(np.isfinite(K)):
            raise CoefficientError("K contains non-finite values")
        if np.any(K < 0.0):
            raise CoefficientError(f"K must be nonnegative (min {K.min():.3g})")
        K.setflags(write=False)
        object.__setattr__(self, "K", K)

        if np.min(self.m) <= 0.0:
            raise CoefficientError(f"m must be positive (min {np.min(self.m):.3g})")
        if np.min(self.R_in) <= 0.0:
            raise CoefficientError(f"R_in must be positive (min {np.min(self.R_in):.3g})")

        if (self.b is None) != (self.d_slow is None):
            raise CoefficientError("b and d_slow must be given together")
        if self.b is not None:
            b = _as_vector(self.b, self.grid_x, "b")
            d_slow = _as_vector(self.d_slow, self.grid_x, "d_slow")
            scale = max(1.0, float(np.max(np.abs(self.a))))
            if np.max(np.abs(self.a - (b - d_slow))) > 1e-12 * scale:
                raise CoefficientError("a must equal b - d_slow")
            object.__setattr__(self, "b", b)
            object.__setattr__(self, "d_slow", d_slow)

    @classmethod
    def from_unscaled(
        cls,
        grid_x: TraitGrid,
        grid_y: TraitGrid,
        b: np.ndarray,
        d: np.ndarray,
        K: np.ndarray,
        m: np.ndarray,
        R_in: np.ndarray,
        epsilon: float = 1.0,
    ) -> "Coefficients":
        """Coefficients of the original chemostat expressed in the epsilon scaling.

        K and m are the unscaled uptake and renewal rates, of order 1/epsilon and
        1/epsilon^2; the fast part of the death rate, integral of K * R_in dy, is split
        off so that d = that integral + d_slow. With epsilon = 1 the scaled system is
        the original one.
        """
        if not epsilon > 0.0:
            raise CoefficientError("epsilon must be positive")
        K_u = np.asarray(K, dtype=float)
        R_in_arr = np.asarray(R_in, dtype=float)
        fast_death = K_u @ (grid_y.quad_weights * R_in_arr)
        d_slow = np.asarray(d, dtype=float) - fast_death
        b_arr = np.asarray(b, dtype=float)
        return cls(
            grid_x=grid_x,
            grid_y=grid_y,
            a=b_arr - d_slow,
            m=np.asarray(m, dtype=float) * epsilon**2,
            R_in=R_in_arr,
            K=K_u * epsilon,
            b=b_arr,
            d_slow=d_slow,
        )

    @property
    def K_M(self) -> float:
        return float(np.max(self.K))

    @property
    def m_min(self) -> float:
        return float(np.min(self.m))

    @cached_property
    def supply_ratio(self) -> np.ndarray:
        """R_in / m, the only combination the reduced kernel depends on."""
        return self.R_in / self.m

    @cached_property
    def uptake_weighted(self) -> np.ndarray:
        """K^T scaled by the x quadrature weights: (w_x K)^T n gives the integral over x."""
        return np.ascontiguousarray((self.K * self.grid_x.quad_weights[:, None]).T)

    @cached_property
    def growth_weighted(self) -> np.ndarray:
        """K scaled by the y quadrature weights: (K w_y) r gives the integral over y."""
        return np.ascontiguousarray(self.K * self.grid_y.quad_weights[None, :])

    def uptake(self, n: np.ndarray) -> np.ndarray:
        """Integral of K(x, y) n(x) dx, as a vector over grid_y."""
        return self.uptake_weighted @ n

    def resource_response(self, r: np.ndarray) -> np.ndarray:
        """Integral of K(x, y) r(y) dy, as a vector over grid_x."""
        return self.growth_weighted @ r


@dataclass(frozen=True)
class ReducedKernel:
    """Direct competition kernel c on grid_x x grid_x."""
    grid_x: TraitGrid
    c: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        c = np.array(self.c, dtype=float)
        n = self.grid_x.n_points
        if c.shape != (n, n):
            raise CoefficientError(f"c has shape {c.shape}, expected {(n, n)}")
        if not np.all(np.isfinite(c)):
            raise CoefficientError("c contains non-finite values")
        scale = max(float(np.max(np.abs(c))), np.finfo(float).tiny)
        if np.max(np.abs(c - c.T)) > 1e-12 * scale:
            raise CoefficientError("c must be symmetric")
        c.setflags(write=False)
        object.__setattr__(self, "c", c)

    @cached_property
    def weighted(self) -> np.ndarray:
        """c scaled by the x quadrature weights along columns: (c w) n is the integral."""
        return np.ascontiguousarray(self.c * self.grid_x.quad_weights[None, :])

    def apply(self, n: np.ndarray) -> np.ndarray:
        """Integral of c(x, x') n(x') dx'."""
        return self.weighted @ n

    def quadratic_form(self, v: np.ndarray) -> float:
        """Double integral of c(x, x') v(x) v(x')."""
        wv = self.grid_x.quad_weights * v
        return float(wv @ self.c @ wv)


@dataclass(frozen=True)
class GaussianSpec:
    """Gaussian coefficient family in one of two parameterizations.

    unnormalized: K = exp(-alpha (x - y)^2), R_in = exp(-beta y^2)
    normalized:   K = N(x - y; sigma_K^2), R_in = M_in * N(y; sigma_in^2)
    """
    form: str
    alpha: Optional[float] = None
    beta: Optional[float] = None
    sigma_K: Optional[float] = None
    sigma_in: Optional[float] = None
    M_in: Optional[float] = None

    def __post_init__(self) -> None:
        if self.form == "unnormalized":
            if self.sigma_K is not None or self.sigma_in is not None or self.M_in is not None:
                raise CoefficientError("unnormalized Gaussian takes only alpha and beta")
            if self.alpha is None or not self.alpha > 0.0:
                raise CoefficientError("alpha must be positive")
            if self.beta is None or not self.beta >= 0.0:
                raise CoefficientError("beta must be nonnegative")
        elif self.form == "normalized":
            if self.alpha is not None or self.beta is not None:
                raise CoefficientError("normalized Gaussian takes only sigma_K, sigma_in and M_in")
            for name in ("sigma_K", "sigma_in", "M_in"):
                value = getattr(self, name)
                if value is None or not value > 0.0:
                    raise CoefficientError(f"{name} must be positive")
        else:
            raise CoefficientError(f"unknown Gaussian form {self.form!r}")

    @classmethod
    def unnormalized(cls, alpha: float, beta: float) -> "GaussianSpec":
        return cls(form="unnormalized", alpha=float(alpha), beta=float(beta))

    @classmethod
    def normalized(cls, sigma_K: float, sigma_in: float, M_in: float) -> "GaussianSpec":
        return cls(form="normalized", sigma_K=float(sigma_K), sigma_in=float(sigma_in), M_in=float(M_in))


def default_growth(grid_x: TraitGrid) -> np.ndarray:
    """a(x) = 1 - x^2."""
    return 1.0 - grid_x.nodes**2


def build_gaussian_coefficients(
    sigma_K: float,
    sigma_in: float,
    M_in: float,
    m_const: float,
    grid_x: TraitGrid,
    grid_y: TraitGrid,
) -> Coefficients:
    """Mass-normalized Gaussian uptake and supply with a(x) = 1 - x^2 and constant m."""
    for name, value in (("sigma_K", sigma_K), ("sigma_in", sigma_in), ("M_in", M_in), ("m", m_const)):
        if not (math.isfinite(value) and value > 0.0):
            raise CoefficientError(f"{name} must be positive, got {value}")
    x = grid_x.nodes[:, None]
    y = grid_y.nodes[None, :]
    K = np.exp(-((x - y) ** 2) / (2.0 * sigma_K**2)) / (sigma_K * SQRT_2PI)
    R_in = M_in * np.exp(-(grid_y.nodes**2) / (2.0 * sigma_in**2)) / (sigma_in * SQRT_2PI)
    return Coefficients(
        grid_x=grid_x,
        grid_y=grid_y,
        a=default_growth(grid_x),
        m=np.full(grid_y.n_points, float(m_const)),
        R_in=R_in,
        K=K,
    )


def build_unnormalized_gaussian_coefficients(
    alpha: float,
    beta: float,
    m_const: float,
    grid_x: TraitGrid,
    grid_y: TraitGrid,
) -> Coefficients:
    """K = exp(-alpha (x-y)^2), R_in = exp(-beta y^2), constant m, a(x) = 1 - x^2."""
    spec = GaussianSpec.unnormalized(alpha, beta)
    if not m_const > 0.0:
        raise CoefficientError(f"m must be positive, got {m_const}")
    x = grid_x.nodes[:, None]
    y = grid_y.nodes[None, :]
    return Coefficients(
        grid_x=grid_x,
        grid_y=grid_y,
        a=default_growth(grid_x),
        m=np.full(grid_y.n_points, float(m_const)),
        R_in=np.exp(-spec.beta * grid_y.nodes**2),
        K=np.exp(-spec.alpha * (x - y) ** 2),
    )


def build_coefficients(spec: GaussianSpec, m_const: float, grid_x: TraitGrid, grid_y: TraitGrid) -> Coefficients:
    """Dispatch on the parameterization; the two forms are never converted into each other."""
    if spec.form == "unnormalized":
        return build_unnormalized_gaussian_coefficients(spec.alpha, spec.beta, m_const, grid_x, grid_y)
    return build_gaussian_coefficients(spec.sigma_K, spec.sigma_in, spec.M_in, m_const, grid_x, grid_y)


def reduce_kernel(coeffs: Coefficients) -> ReducedKernel:
    """Quadrature of c(x_i, x_j) = sum_k w_k K(x_i, y_k) R_in(y_k)/m(y_k) K(x_j, y_k)."""
    gx, gy = coeffs.grid_x, coeffs.grid_y
    if coeffs.K.shape != (gx.n_points, gy.n_points):
        raise CoefficientError(
            f"K has shape {coeffs.K.shape}, grids give {(gx.n_points, gy.n_points)}"
        )
    weight = gy.quad_weights * coeffs.supply_ratio
    c = (coeffs.K * weight[None, :]) @ coeffs.K.T
    # c + c.T is bitwise symmetric whatever order BLAS accumulated in
    c = 0.5 * (c + c.T)
    return ReducedKernel(grid_x=gx, c=c)


def closed_form_reduced(alpha: float, beta: float) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    """Exact reduction of K = exp(-alpha (x-y)^2), R_in = exp(-beta y^2), m = 1.

    c(x, x') = exp(-[alpha x^2 + alpha x'^2 - gamma (x + x')^2]) * sqrt(pi / (2 alpha + beta))
    with gamma (2 alpha + beta) = alpha^2.
    """
    if not alpha > 0.0:
        raise CoefficientError(f"alpha must be positive, got {alpha}")
    if not beta >= 0.0:
        raise CoefficientError(f"beta must be nonnegative, got {beta}")
    gamma = alpha**2 / (2.0 * alpha + beta)
    prefactor = math.sqrt(math.pi / (2.0 * alpha + beta))

    def c(x, x_prime):
        x = np.asarray(x, dtype=float)
        x_prime = np.asarray(x_prime, dtype=float)
        exponent = alpha * x**2 + alpha * x_prime**2 - gamma * (x + x_prime) ** 2
        return prefactor * np.exp(-exponent)

    return c


def closed_form_matrix(alpha: float, beta: float, grid_x: TraitGrid) -> np.ndarray:
    c = closed_form_reduced(alpha, beta)
    return c(grid_x.nodes[:, None], grid_x.nodes[None, :])


def translation_invariance_defect(rk: ReducedKernel) -> float:
    """Largest spread of c along any diagonal x - x' = const, relative to max |c|.

    Zero when c depends on x - x' only, up to grid resolution.
    """
    c = rk.c
    scale = float(np.max(np.abs(c)))
    if scale == 0.0:
        return 0.0
    n = c.shape[0]
    worst = 0.0
    for offset in range(-(n - 1), n):
        diag = np.diagonal(c, offset=offset)
        if diag.size > 1:
            worst = max(worst, float(diag.max() - diag.min()))
    return worst / scale


def weighted_spectrum(rk: ReducedKernel) -> np.ndarray:
    """Eigenvalues of W^1/2 c W^1/2, ascending."""
    sw = np.sqrt(rk.grid_x.quad_weights)
    mat = sw[:, None] * rk.c * sw[None, :]
    return np.linalg.eigvalsh(0.5 * (mat + mat.T))


def is_positive_semidefinite(rk: ReducedKernel, rel_tol: float = 1e-10) -> bool:
    eig = weighted_spectrum(rk)
    top = max(float(eig[-1]), 0.0)
    return bool(eig[0] >= -rel_tol * top)


# ---------------------------------------------------------------------------
# Tabulated coefficients
# ---------------------------------------------------------------------------

def _read_table(path: PathLike, required: list[str]) -> pd.DataFrame:
    try:
        frame = pd.read_csv(path, float_precision="round_trip")
    except FileNotFoundError as exc:
        raise CoefficientError(f"coefficient table not found: {path}") from exc
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise CoefficientError(f"cannot parse coefficient table {path}: {exc}") from exc
    frame.columns = [str(col).strip() for col in frame.columns]
    missing = [col for col in required if col not in frame.columns]
    if missing:
        raise CoefficientError(f"{path}: missing columns {missing}")
    return frame


def load_coefficients_csv(profile_x: PathLike, profile_y: PathLike, kernel: PathLike) -> Coefficients:
    """Load coefficients from CSV tables.

    profile_x: columns x, a (optionally b, d_slow); profile_y: columns y, m, R_in;
    kernel: dense K with a header row of y nodes and a first column of x nodes.
    """
    fx = _read_table(profile_x, ["x", "a"])
    fy = _read_table(profile_y, ["y", "m", "R_in"])
    try:
        grid_x = grid_from_nodes(fx["x"].to_numpy(dtype=float), what=f"{profile_x} x")
        grid_y = grid_from_nodes(fy["y"].to_numpy(dtype=float), what=f"{profile_y} y")
    except GridError as exc:
        raise CoefficientError(str(exc)) from exc

    try:
        kframe = pd.read_csv(kernel, index_col=0, float_precision="round_trip")
    except FileNotFoundError as exc:
        raise CoefficientError(f"kernel table not found: {kernel}") from exc
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise CoefficientError(f"cannot parse kernel table {kernel}: {exc}") from exc
    try:
        k_cols = np.array([float(col) for col in kframe.columns])
    except ValueError as exc:
        raise CoefficientError(f"{kernel}: header row must hold y nodes") from exc
    k_rows = kframe.index.to_numpy(dtype=float)
    if k_rows.shape != grid_x.nodes.shape or np.max(np.abs(k_rows - grid_x.nodes)) > 1e-9 * max(grid_x.h, 1.0):
        raise CoefficientError(f"{kernel}: row nodes do not match the x profile")
    if k_cols.shape != grid_y.nodes.shape or np.max(np.abs(k_cols - grid_y.nodes)) > 1e-9 * max(grid_y.h, 1.0):
        raise CoefficientError(f"{kernel}: column nodes do not match the y profile")

    extras = {}
    if "b" in fx.columns or "d_slow" in fx.columns:
        if not ("b" in fx.columns and "d_slow" in fx.columns):
            raise CoefficientError(f"{profile_x}: b and d_slow must appear together")
        extras = {"b": fx["b"].to_numpy(dtype=float), "d_slow": fx["d_slow"].to_numpy(dtype=float)}

    return Coefficients(
        grid_x=grid_x,
        grid_y=grid_y,
        a=fx["a"].to_numpy(dtype=float),
        m=fy["m"].to_numpy(dtype=float),
        R_in=fy["R_in"].to_numpy(dtype=float),
        K=kframe.to_numpy(dtype=float),
        **extras,
    )


def write_coefficients_csv(coeffs: Coefficients, profile_x: PathLike, profile_y: PathLike, kernel: PathLike) -> None:
    """Write coefficients in the layout `load_coefficients_csv` reads."""
    fx = {"x": coeffs.grid_x.nodes, "a": coeffs.a}
    if coeffs.b is not None:
        fx.update({"b": coeffs.b, "d_slow": coeffs.d_slow})
    pd.DataFrame(fx).to_csv(profile_x, index=False)
    pd.DataFrame({"y": coeffs.grid_y.nodes, "m": coeffs.m, "R_in": coeffs.R_in}).to_csv(profile_y, index=False)
    write_kernel_csv(coeffs.K, coeffs.grid_x.nodes, coeffs.grid_y.nodes, kernel)


def write_kernel_csv(matrix: np.ndarray, row_nodes: np.ndarray, col_nodes: np.ndarray, path: PathLike, corner: str = "x") -> None:
    """Dense matrix CSV: header row of column nodes, first column of row nodes."""
    frame = pd.DataFrame(
        np.asarray(matrix),
        index=pd.Index(np.asarray(row_nodes), name=corner),
        columns=[repr(float(v)) for v in col_nodes],
    )
    frame.to_csv(path)
