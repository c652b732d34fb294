import math

import numpy as np
import pytest

from chemoreduce.errors import CoefficientError
from chemoreduce.numerics.model import (
    Coefficients,
    GaussianSpec,
    build_coefficients,
    build_gaussian_coefficients,
    build_unnormalized_gaussian_coefficients,
    closed_form_matrix,
    closed_form_reduced,
    is_positive_semidefinite,
    load_coefficients_csv,
    reduce_kernel,
    translation_invariance_defect,
    weighted_spectrum,
    write_coefficients_csv,
)
from chemoreduce.numerics.traitgrid import integrate, make_grid


def _closed_form_error(y_points: int) -> float:
    gx = make_grid(-2.0, 2.0, 41)
    gy = make_grid(-6.0, 6.0, y_points)
    coeffs = build_unnormalized_gaussian_coefficients(1.0, 1.0, 1.0, gx, gy)
    exact = closed_form_matrix(1.0, 1.0, gx)
    return float(np.max(np.abs(reduce_kernel(coeffs).c - exact) / exact))


def test_gaussian_coefficients(small_coeffs):
    assert small_coeffs.K[20, 20] == pytest.approx(1.0 / (0.5 * math.sqrt(2.0 * math.pi)))
    assert small_coeffs.K_M == pytest.approx(0.7978845608, rel=1e-9)
    np.testing.assert_allclose(small_coeffs.a, 1.0 - small_coeffs.grid_x.nodes**2)
    assert small_coeffs.m_min == 1.0


def test_supply_mass_on_default_domain():
    grid = make_grid(-2.0, 2.0, 401)
    coeffs = build_gaussian_coefficients(0.5, 0.5, 1.0, 1.0, grid, grid)
    assert abs(integrate(coeffs.R_in, grid) - 1.0) < 1e-4


def test_reduced_kernel_at_origin_matches_gaussian_integral():
    gx = make_grid(-2.0, 2.0, 41)
    gy = make_grid(-6.0, 6.0, 801)
    coeffs = build_unnormalized_gaussian_coefficients(1.0, 1.0, 1.0, gx, gy)
    assert reduce_kernel(coeffs).c[20, 20] == pytest.approx(math.sqrt(math.pi / 3.0), rel=1e-10)


def test_reduction_matches_closed_form():
    assert _closed_form_error(801) <= 1e-6


def test_reduction_error_shrinks_under_refinement():
    coarse, fine = _closed_form_error(13), _closed_form_error(25)
    assert coarse > 0.0
    assert coarse / fine >= 4.0


def test_closed_form_is_symmetric():
    c = closed_form_reduced(1.0, 0.5)
    assert c(0.3, -1.1) == pytest.approx(c(-1.1, 0.3))


def test_closed_form_rejects_bad_parameters():
    with pytest.raises(CoefficientError):
        closed_form_reduced(0.0, 1.0)
    with pytest.raises(CoefficientError):
        closed_form_reduced(1.0, -1.0)


def test_gaussian_uptake_does_not_reduce_to_gaussian_competition():
    gx = make_grid(-2.0, 2.0, 41)
    gy = make_grid(-6.0, 6.0, 801)
    non_flat = build_unnormalized_gaussian_coefficients(1.0, 1.0, 1.0, gx, gy)
    flat = build_unnormalized_gaussian_coefficients(1.0, 0.0, 1.0, gx, gy)
    assert translation_invariance_defect(reduce_kernel(non_flat)) > 0.1
    assert translation_invariance_defect(reduce_kernel(flat)) < 1e-8


def test_reduction_depends_only_on_supply_ratio(grid41):
    base = build_gaussian_coefficients(0.5, 0.5, 1.0, 1.0, grid41, grid41)
    scaled = build_gaussian_coefficients(0.5, 0.5, 10.0, 10.0, grid41, grid41)
    c1, c10 = reduce_kernel(base).c, reduce_kernel(scaled).c
    assert np.max(np.abs(c1 - c10)) <= 1e-14 * np.max(np.abs(c1))


def test_reduced_kernel_is_bitwise_symmetric(small_kernel):
    np.testing.assert_array_equal(small_kernel.c, small_kernel.c.T)


def test_random_kernels_are_positive_semidefinite():
    rng = np.random.default_rng(2024)
    for _ in range(100):
        nx, ny = rng.integers(3, 42, size=2)
        gx, gy = make_grid(-1.0, 1.0, int(nx)), make_grid(-1.0, 1.0, int(ny))
        coeffs = Coefficients(
            grid_x=gx,
            grid_y=gy,
            a=np.zeros(nx),
            m=rng.uniform(0.1, 2.0, ny),
            R_in=rng.uniform(0.1, 2.0, ny),
            K=rng.random((nx, ny)),
        )
        rk = reduce_kernel(coeffs)
        eig = weighted_spectrum(rk)
        assert eig[0] >= -1e-10 * eig[-1]
        assert is_positive_semidefinite(rk)


def test_quadratic_form_matches_spectrum(small_kernel):
    rng = np.random.default_rng(5)
    v = rng.standard_normal(41)
    assert small_kernel.quadratic_form(v) >= -1e-12 * np.abs(v).max() ** 2


@pytest.mark.parametrize(
    "changes, message",
    [
        ({"K": -np.ones((41, 41))}, "nonnegative"),
        ({"m": np.zeros(41)}, "m must be positive"),
        ({"R_in": -np.ones(41)}, "R_in must be positive"),
        ({"a": np.ones(40)}, "shape"),
        ({"K": np.full((41, 41), np.nan)}, "non-finite"),
    ],
)
def test_coefficient_validation(small_coeffs, changes, message):
    fields = dict(
        grid_x=small_coeffs.grid_x,
        grid_y=small_coeffs.grid_y,
        a=small_coeffs.a,
        m=small_coeffs.m,
        R_in=small_coeffs.R_in,
        K=small_coeffs.K,
    )
    fields.update(changes)
    with pytest.raises(CoefficientError, match=message):
        Coefficients(**fields)


def test_growth_split_must_be_consistent(small_coeffs):
    with pytest.raises(CoefficientError, match="b - d_slow"):
        Coefficients(
            grid_x=small_coeffs.grid_x,
            grid_y=small_coeffs.grid_y,
            a=small_coeffs.a,
            m=small_coeffs.m,
            R_in=small_coeffs.R_in,
            K=small_coeffs.K,
            b=np.ones(41),
            d_slow=np.ones(41),
        )


def test_from_unscaled_splits_fast_death(grid41):
    rng = np.random.default_rng(7)
    K = rng.random((41, 41))
    R_in = rng.uniform(0.5, 1.5, 41)
    b = np.full(41, 5.0)
    d = np.full(41, 3.0)
    m = np.full(41, 2.0)
    coeffs = Coefficients.from_unscaled(grid41, grid41, b, d, K, m, R_in, epsilon=0.1)

    fast = K @ (grid41.quad_weights * R_in)
    np.testing.assert_allclose(coeffs.K, 0.1 * K)
    np.testing.assert_allclose(coeffs.m, 0.02)
    np.testing.assert_allclose(coeffs.d_slow, d - fast)
    np.testing.assert_allclose(coeffs.a, b - d + fast)


def test_from_unscaled_with_unit_epsilon_keeps_rates(grid41, small_coeffs):
    coeffs = Coefficients.from_unscaled(
        grid41, grid41, np.ones(41), np.zeros(41), small_coeffs.K, small_coeffs.m, small_coeffs.R_in
    )
    np.testing.assert_array_equal(coeffs.K, small_coeffs.K)
    np.testing.assert_array_equal(coeffs.m, small_coeffs.m)


def test_gaussian_spec_forms_are_exclusive():
    with pytest.raises(CoefficientError):
        GaussianSpec(form="normalized", alpha=1.0, sigma_K=0.5, sigma_in=0.5, M_in=1.0)
    with pytest.raises(CoefficientError):
        GaussianSpec(form="unnormalized", alpha=1.0, beta=1.0, M_in=1.0)
    with pytest.raises(CoefficientError):
        GaussianSpec(form="lognormal")


def test_build_coefficients_dispatch(grid41):
    unnorm = build_coefficients(GaussianSpec.unnormalized(1.0, 1.0), 1.0, grid41, grid41)
    norm = build_coefficients(GaussianSpec.normalized(0.5, 0.5, 1.0), 1.0, grid41, grid41)
    assert unnorm.K_M == pytest.approx(1.0)
    assert norm.K_M == pytest.approx(0.7978845608, rel=1e-9)


def test_csv_tables_round_trip(tmp_path, small_coeffs):
    paths = [tmp_path / "px.csv", tmp_path / "py.csv", tmp_path / "k.csv"]
    write_coefficients_csv(small_coeffs, *paths)
    loaded = load_coefficients_csv(*paths)
    assert loaded.grid_x.same_as(small_coeffs.grid_x)
    np.testing.assert_array_equal(loaded.a, small_coeffs.a)
    np.testing.assert_array_equal(loaded.R_in, small_coeffs.R_in)
    np.testing.assert_array_equal(loaded.K, small_coeffs.K)


def test_csv_missing_column(tmp_path, small_coeffs):
    paths = [tmp_path / "px.csv", tmp_path / "py.csv", tmp_path / "k.csv"]
    write_coefficients_csv(small_coeffs, *paths)
    paths[1].write_text("y,m\n0.0,1.0\n")
    with pytest.raises(CoefficientError, match="missing columns"):
        load_coefficients_csv(*paths)


def test_csv_missing_file(tmp_path):
    with pytest.raises(CoefficientError, match="not found"):
        load_coefficients_csv(tmp_path / "a.csv", tmp_path / "b.csv", tmp_path / "c.csv")
