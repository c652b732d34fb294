import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from chemoreduce.errors import NumericalBlowUp, StepRejected
from chemoreduce.numerics.diagnostics import find_esd
from chemoreduce.numerics.dynamics import (
    ScaleParams,
    State,
    diffusion_solve,
    initial_condition_gaussian,
    initial_state,
    run,
    step_chemostat,
    step_direct,
)
from chemoreduce.numerics.model import Coefficients, reduce_kernel
from chemoreduce.numerics.traitgrid import integrate, laplacian, make_grid, point_grid
from chemoreduce.settings import RuntimeSettings


def scalar_coeffs(a=1.0, K=1.0, m=1.0, R_in=1.0):
    grid = point_grid(0.0)
    return Coefficients(
        grid_x=grid,
        grid_y=grid,
        a=np.array([a]),
        m=np.array([m]),
        R_in=np.array([R_in]),
        K=np.array([[K]]),
    )


def test_scale_params_validation():
    with pytest.raises(ValueError, match="epsilon must be positive"):
        ScaleParams(epsilon=0.0)
    with pytest.raises(ValueError):
        ScaleParams(epsilon=0.1, mu=-1.0)
    assert ScaleParams(0.1, 0.005).effective_dt(0.01) == pytest.approx(2.0)
    assert ScaleParams(0.1).effective_dt(0.01) == 0.01


def test_empty_chemostat_at_supply_is_a_fixed_point(small_coeffs):
    state = State(n=np.zeros(41), R=small_coeffs.R_in, t=0.0)
    new = step_chemostat(state, small_coeffs, ScaleParams(0.1), 0.01)
    np.testing.assert_array_equal(new.n, 0.0)
    np.testing.assert_allclose(new.R, small_coeffs.R_in, rtol=1e-14)
    assert new.t == pytest.approx(0.01)


def test_resource_relaxes_exponentially(small_coeffs):
    scales = ScaleParams(0.1)
    state = State(n=np.zeros(41), R=2.0 * small_coeffs.R_in)
    for _ in range(5):
        state = step_chemostat(state, small_coeffs, scales, 0.01)
    gap = state.R - small_coeffs.R_in
    np.testing.assert_allclose(gap, small_coeffs.R_in * math.exp(-100.0 * 0.05), rtol=1e-10)


def test_extinction_is_invariant(small_coeffs, small_kernel):
    out = step_direct(np.zeros(41), small_kernel, small_coeffs, ScaleParams(0.1, 0.005), 0.01)
    np.testing.assert_array_equal(out, 0.0)


def test_scalar_logistic_reaches_carrying_capacity():
    coeffs = scalar_coeffs(a=1.0, K=1.0, m=1.0, R_in=1.0)
    rk = reduce_kernel(coeffs)
    assert rk.c[0, 0] == pytest.approx(1.0)
    traj = run("direct", coeffs, ScaleParams(1.0), State(n=np.array([0.1])), t_end=30.0, dt=0.01)
    assert abs(traj.final.n[0] - 1.0) < 1e-6


def _scalar_reference(coeffs, eps, n0, R0, times):
    a, K, m, R_in = coeffs.a[0], coeffs.K[0, 0], coeffs.m[0], coeffs.R_in[0]

    def rhs(_, u):
        n, R = u
        return [n * (a + K * (R - R_in) / eps), m / eps**2 * (R_in - R) - R * K * n / eps]

    sol = solve_ivp(rhs, (0.0, times[-1]), [n0, R0], method="Radau", rtol=1e-11, atol=1e-13, t_eval=times)
    return sol.y


def _scalar_error(coeffs, eps, dt, sample_every):
    traj = run(
        "chemostat",
        coeffs,
        ScaleParams(eps),
        State(n=np.array([0.5]), R=np.array([1.2])),
        t_end=1.0,
        dt=dt,
        sample_every=sample_every,
    )
    ref = _scalar_reference(coeffs, eps, 0.5, 1.2, traj.times_array())
    n = np.array([s.n[0] for s in traj.states])
    R = np.array([s.R[0] for s in traj.states])
    return max(np.max(np.abs(n - ref[0])), np.max(np.abs(R - ref[1])))


def test_scalar_chemostat_converges_to_reference_at_first_order():
    coeffs = scalar_coeffs(a=0.5, K=1.0, m=1.0, R_in=1.0)
    coarse = _scalar_error(coeffs, 1.0, 0.01, 10)
    fine = _scalar_error(coeffs, 1.0, 0.005, 20)
    assert 1.5 <= coarse / fine <= 3.0
    assert fine < 1e-2


def test_positivity_and_resource_bound(small_coeffs):
    rng = np.random.default_rng(11)
    n0 = rng.random(41)
    n0[::3] = 0.0
    R0 = small_coeffs.R_in * rng.uniform(0.2, 1.8, 41)
    traj = run(
        "chemostat",
        small_coeffs,
        ScaleParams(0.1, 0.005),
        State(n=n0, R=R0),
        t_end=0.5,
        dt=0.01,
        sample_every=1,
    )
    R_M = np.maximum(R0, small_coeffs.R_in)
    for state in traj.states:
        assert np.all(state.n >= 0.0)
        assert np.all(state.R >= 0.0)
        assert np.all(state.R <= R_M + 1e-12)


def test_diffusion_keeps_mass_and_sign(grid41):
    rng = np.random.default_rng(1)
    n = rng.random(41)
    n[10:20] = 0.0
    out = diffusion_solve(n, grid41, 0.05)
    assert np.all(out >= 0.0)
    assert integrate(out, grid41) == pytest.approx(integrate(n, grid41), rel=1e-12)


def test_diffusion_solve_inverts_the_no_flux_laplacian(grid41):
    n = np.exp(-((grid41.nodes + 1.9) ** 2) / 0.01)
    out = diffusion_solve(n, grid41, 0.05)
    np.testing.assert_allclose(out - 0.05 * laplacian(out, grid41), n, rtol=1e-10, atol=1e-12)


def test_initial_gaussian():
    grid = make_grid(-2.0, 2.0, 201)
    n0 = initial_condition_gaussian(-0.8, 0.005, 1.0, grid)
    assert integrate(n0, grid) == pytest.approx(1.0, abs=1e-12)
    assert grid.nodes[np.argmax(n0)] == pytest.approx(-0.8)

    wide = make_grid(-2.0, 2.0, 401)
    n1 = initial_condition_gaussian(0.0, 0.25, 1.0, wide)
    assert n1[200] == pytest.approx(1.0 / math.sqrt(2.0 * math.pi * 0.25), abs=1e-3)


def test_initial_gaussian_rejects_bad_variance(grid41):
    with pytest.raises(ValueError, match="variance"):
        initial_condition_gaussian(0.0, 0.0, 1.0, grid41)


def test_chemostat_without_population_returns_to_supply(small_coeffs):
    state = initial_state(np.zeros(41), small_coeffs, resource_scale=2.0)
    traj = run("chemostat", small_coeffs, ScaleParams(0.1), state, t_end=1.0, dt=0.01)
    np.testing.assert_allclose(traj.final.R, small_coeffs.R_in, atol=1e-8)


def test_direct_esd_is_stationary(small_coeffs, small_kernel):
    esd = find_esd(small_coeffs, small_kernel, tol=1e-9)
    n = esd.density
    out = step_direct(n, small_kernel, small_coeffs, ScaleParams(0.1), 0.01)
    np.testing.assert_allclose(out, n, rtol=1e-9, atol=0.0)


def test_sampling_schedule(small_coeffs):
    state = initial_state(initial_condition_gaussian(-0.8, 0.05, 1.0, small_coeffs.grid_x), small_coeffs)
    traj = run("chemostat", small_coeffs, ScaleParams(0.1, 0.005), state, t_end=0.25, dt=0.01, sample_every=10)
    np.testing.assert_allclose(traj.times, [0.0, 0.1, 0.2, 0.25])
    assert np.all(np.diff(traj.times_array()) > 0.0)
    assert traj.series("mass")[0] == pytest.approx(1.0)
    assert np.isfinite(traj.series("resource_gap")).all()
    assert traj.densities().shape == (4, 41)


def test_runs_are_deterministic(small_coeffs):
    state = initial_state(initial_condition_gaussian(-0.8, 0.05, 1.0, small_coeffs.grid_x), small_coeffs)
    first = run("chemostat", small_coeffs, ScaleParams(0.1, 0.005), state, t_end=0.2, dt=0.01)
    second = run("chemostat", small_coeffs, ScaleParams(0.1, 0.005), state, t_end=0.2, dt=0.01)
    np.testing.assert_array_equal(first.densities(), second.densities())
    np.testing.assert_array_equal(first.final.R, second.final.R)


def test_stability_guard_rejects_large_steps(small_coeffs, small_kernel):
    with pytest.raises(StepRejected):
        step_direct(np.ones(41), small_kernel, small_coeffs, ScaleParams(0.1), 10.0, stability_limit=5.0)


def test_run_halves_rejected_steps():
    coeffs = scalar_coeffs(a=50.0, K=0.0)
    traj = run("direct", coeffs, ScaleParams(1.0), State(n=np.array([1e-3])), t_end=1.0, dt=1.0)
    assert traj.halvings > 0
    assert traj.final.n[0] == pytest.approx(1e-3 * math.exp(50.0), rel=1e-12)


def test_run_reports_blow_up_time():
    coeffs = scalar_coeffs(a=1000.0, K=0.0)
    settings = RuntimeSettings(max_halvings=1)
    with pytest.raises(NumericalBlowUp) as info:
        run("direct", coeffs, ScaleParams(1.0), State(n=np.array([1.0])), t_end=1.0, dt=1.0, settings=settings)
    assert info.value.t == 0.0


def test_run_rejects_unknown_model(small_coeffs):
    with pytest.raises(ValueError, match="unknown model"):
        run("logistic", small_coeffs, ScaleParams(0.1), State(n=np.zeros(41)), t_end=1.0)
