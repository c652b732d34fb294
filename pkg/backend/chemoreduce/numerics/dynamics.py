"""
dynamics.py

Time integration of the epsilon-scaled chemostat (with or without mutations) and of
the direct competition model.

One step is an operator splitting, always in the same order:
  1. resource relaxation, exact for an uptake load frozen over the step;
  2. exponential Euler on n' = n G, which keeps n nonnegative;
  3. with mutations, an implicit no-flux diffusion solve.

With mutation intensity mu > 0 time is measured in units of 1/mu: reaction terms run
over dt/mu and the diffusion term is mu * Laplacian over dt.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Mapping, Optional

import numpy as np
from scipy.linalg import solve_banded
from tqdm import tqdm

from chemoreduce.errors import CoefficientError, GridError, NumericalBlowUp, StepRejected
from chemoreduce.logging_config import get_logger
from chemoreduce.numerics.model import Coefficients, ReducedKernel, reduce_kernel
from chemoreduce.numerics.traitgrid import TraitGrid, integrate, laplacian_bands
from chemoreduce.settings import RuntimeSettings

logger = get_logger("dynamics")

MODELS = ("chemostat", "direct")

# Smallest density kept on nodes that were positive, so ln n stays finite.
N_FLOOR = 1e-300

DEFAULT_DT = 0.01
DEFAULT_SAMPLE_EVERY = 100

Monitor = Callable[["State"], float]


@dataclass(frozen=True)
class ScaleParams:
    epsilon: float
    mu: float = 0.0

    def __post_init__(self) -> None:
        if not (math.isfinite(self.epsilon) and self.epsilon > 0.0):
            raise CoefficientError("epsilon must be positive")
        if not (math.isfinite(self.mu) and self.mu >= 0.0):
            raise CoefficientError("mu must be nonnegative")

    def effective_dt(self, dt: float) -> float:
        """Reaction time step: dt in units of 1/mu when mutations are on."""
        return dt / self.mu if self.mu > 0.0 else dt

    def diffusion_weight(self, dt: float) -> float:
        """Coefficient in front of the Laplacian in the implicit solve over dt."""
        return dt * self.mu


@dataclass(frozen=True)
class State:
    """Population density n on grid_x, resource R on grid_y (None for the direct model)."""
    n: np.ndarray = field(repr=False)
    R: Optional[np.ndarray] = field(default=None, repr=False)
    t: float = 0.0

    def __post_init__(self) -> None:
        n = np.array(self.n, dtype=float)
        n.setflags(write=False)
        object.__setattr__(self, "n", n)
        if self.R is not None:
            R = np.array(self.R, dtype=float)
            R.setflags(write=False)
            object.__setattr__(self, "R", R)

    def is_finite(self) -> bool:
        if not np.all(np.isfinite(self.n)):
            return False
        return self.R is None or bool(np.all(np.isfinite(self.R)))


@dataclass
class Trajectory:
    """Sampled states of one run plus a diagnostics record per sample."""
    model: str
    grid_x: TraitGrid
    grid_y: Optional[TraitGrid] = None
    times: List[float] = field(default_factory=list)
    states: List[State] = field(default_factory=list)
    records: List[Dict[str, float]] = field(default_factory=list)
    halvings: int = 0

    def append(self, state: State, record: Dict[str, float]) -> None:
        if self.times and not state.t > self.times[-1]:
            raise ValueError(f"sample time {state.t} does not increase past {self.times[-1]}")
        self.times.append(float(state.t))
        self.states.append(state)
        self.records.append(record)

    @property
    def final(self) -> State:
        return self.states[-1]

    def times_array(self) -> np.ndarray:
        return np.array(self.times, dtype=float)

    def densities(self) -> np.ndarray:
        """Sampled n as a (samples, nodes) array."""
        return np.vstack([s.n for s in self.states])

    def series(self, name: str) -> np.ndarray:
        """One diagnostic over the samples; NaN where it was not recorded."""
        return np.array([rec.get(name, np.nan) for rec in self.records], dtype=float)


def initial_condition_gaussian(center: float, variance: float, mass: float, grid: TraitGrid) -> np.ndarray:
    """Gaussian density around `center`, rescaled so its quadrature mass is `mass`."""
    if not (math.isfinite(variance) and variance > 0.0):
        raise GridError(f"variance must be positive, got {variance}")
    if not (math.isfinite(mass) and mass >= 0.0):
        raise GridError(f"mass must be nonnegative, got {mass}")
    profile = np.exp(-((grid.nodes - center) ** 2) / (2.0 * variance)) / math.sqrt(
        2.0 * math.pi * variance
    )
    total = integrate(profile, grid)
    if total <= 0.0:
        raise GridError(f"Gaussian at {center} with variance {variance} vanishes on the grid")
    return profile * (mass / total)


def initial_state(n0: np.ndarray, coeffs: Coefficients, resource_scale: float = 1.0) -> State:
    """Chemostat start: R0 = resource_scale * R_in."""
    return State(
        n=coeffs.grid_x.check_length(n0, "n0"),
        R=coeffs.R_in * float(resource_scale),
        t=0.0,
    )


def chemostat_growth(state: State, coeffs: Coefficients, scales: ScaleParams) -> np.ndarray:
    """G(x) = a(x) + (1/eps) * integral of K(x, y) (R - R_in)(y) dy."""
    return coeffs.a + coeffs.resource_response(state.R - coeffs.R_in) / scales.epsilon


def direct_growth(n: np.ndarray, rk: ReducedKernel, coeffs: Coefficients) -> np.ndarray:
    """G(x) = a(x) - integral of c(x, x') n(x') dx'."""
    return coeffs.a - rk.apply(n)


def relax_resource(n: np.ndarray, R: np.ndarray, coeffs: Coefficients, scales: ScaleParams, dt_eff: float) -> np.ndarray:
    """Exact solution of the resource equation over dt_eff with n frozen."""
    eps = scales.epsilon
    renewal = coeffs.m / eps**2
    rate = renewal + coeffs.uptake(n) / eps
    R_star = renewal * coeffs.R_in / rate
    return R_star + (R - R_star) * np.exp(-rate * dt_eff)


def diffusion_solve(n: np.ndarray, grid: TraitGrid, coeff: float) -> np.ndarray:
    """Solve (I - coeff * Laplacian) u = n with no-flux ends.

    The matrix is an M-matrix whose weighted column sums are one, so the solve keeps
    u nonnegative and preserves the quadrature mass.
    """
    if coeff <= 0.0 or grid.is_point:
        return np.array(n, dtype=float)
    ab = -coeff * laplacian_bands(grid)
    ab[1] += 1.0
    return solve_banded((1, 1), ab, n, check_finite=False)


def _exp_update(n: np.ndarray, G: np.ndarray, dt_eff: float, stability_limit: Optional[float]) -> np.ndarray:
    if stability_limit is not None:
        ratio = dt_eff * float(np.max(np.abs(G)))
        if ratio > stability_limit:
            raise StepRejected(ratio)
    return n * np.exp(dt_eff * G)


def _floor(n_new: np.ndarray) -> np.ndarray:
    return np.where(n_new > 0.0, np.maximum(n_new, N_FLOOR), 0.0)


def step_chemostat(
    state: State,
    coeffs: Coefficients,
    scales: ScaleParams,
    dt: float,
    stability_limit: Optional[float] = None,
) -> State:
    """Advance the chemostat by one split step of length dt."""
    if not dt > 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    if state.R is None:
        raise ValueError("chemostat state needs a resource profile")
    dt_eff = scales.effective_dt(dt)
    R = relax_resource(state.n, state.R, coeffs, scales, dt_eff)
    G = chemostat_growth(replace(state, R=R), coeffs, scales)
    n = _exp_update(state.n, G, dt_eff, stability_limit)
    if scales.mu > 0.0:
        n = diffusion_solve(n, coeffs.grid_x, scales.diffusion_weight(dt))
    new = State(n=_floor(n), R=np.maximum(R, 0.0), t=state.t + dt)
    if not new.is_finite():
        raise NumericalBlowUp("non-finite chemostat state", t=new.t)
    return new


def step_direct(
    n: np.ndarray,
    rk: ReducedKernel,
    coeffs: Coefficients,
    scales: ScaleParams,
    dt: float,
    stability_limit: Optional[float] = None,
) -> np.ndarray:
    """Advance the direct competition model by one step of length dt."""
    if not dt > 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    dt_eff = scales.effective_dt(dt)
    G = direct_growth(n, rk, coeffs)
    out = _exp_update(np.asarray(n, dtype=float), G, dt_eff, stability_limit)
    if scales.mu > 0.0:
        out = diffusion_solve(out, coeffs.grid_x, scales.diffusion_weight(dt))
    out = _floor(out)
    if not np.all(np.isfinite(out)):
        raise NumericalBlowUp("non-finite density")
    return out


def _default_record(model: str, state: State, coeffs: Coefficients) -> Dict[str, float]:
    record = {"mass": integrate(state.n, coeffs.grid_x)}
    if model == "chemostat":
        record["resource_gap"] = integrate(np.abs(state.R - coeffs.R_in), coeffs.grid_y)
    return record


class _Stepper:
    """Step with recursive halving when the stability guard trips."""

    def __init__(self, step: Callable[[State, float], State], max_halvings: int):
        self.step = step
        self.max_halvings = max_halvings
        self.halvings = 0

    def advance(self, state: State, dt: float, depth: int = 0) -> State:
        try:
            return self.step(state, dt)
        except (StepRejected, NumericalBlowUp) as exc:
            if depth >= self.max_halvings:
                raise NumericalBlowUp(
                    f"step rejected after {self.max_halvings} halvings ({exc})", t=state.t
                ) from exc
            self.halvings += 1
            logger.debug(f"halving dt={dt:.3g} at t={state.t:.6g}: {exc}")
            half = self.advance(state, 0.5 * dt, depth + 1)
            return self.advance(half, 0.5 * dt, depth + 1)


def run(
    model: str,
    coeffs: Coefficients,
    scales: ScaleParams,
    initial: State,
    t_end: float,
    dt: float = DEFAULT_DT,
    sample_every: int = DEFAULT_SAMPLE_EVERY,
    rk: Optional[ReducedKernel] = None,
    settings: Optional[RuntimeSettings] = None,
    monitors: Optional[Mapping[str, Monitor]] = None,
    label: Optional[str] = None,
) -> Trajectory:
    """
    Integrate one model from `initial` over [t0, t0 + t_end].

    Args:
        model: "chemostat" or "direct"
        rk: reduced kernel for the direct model; computed from coeffs when omitted
        settings: halving budget, stability limit and progress bar switch
        monitors: extra per-sample diagnostics, name -> function of the state
        label: progress bar description

    Returns:
        Trajectory sampled at t0, every `sample_every` steps and at the end
    """
    if model not in MODELS:
        raise ValueError(f"unknown model {model!r}, expected one of {MODELS}")
    if not (math.isfinite(t_end) and t_end > 0.0):
        raise ValueError(f"t_end must be positive, got {t_end}")
    if not (math.isfinite(dt) and dt > 0.0):
        raise ValueError(f"dt must be positive, got {dt}")
    if sample_every < 1:
        raise ValueError(f"sample_every must be >= 1, got {sample_every}")
    settings = settings or RuntimeSettings()
    coeffs.grid_x.check_length(initial.n, "initial n")

    if model == "chemostat":
        if initial.R is None:
            raise ValueError("chemostat run needs an initial resource profile")
        coeffs.grid_y.check_length(initial.R, "initial R")

        def raw_step(state: State, h: float) -> State:
            return step_chemostat(state, coeffs, scales, h, settings.stability_limit)

        current = initial
        grid_y: Optional[TraitGrid] = coeffs.grid_y
    else:
        kernel = rk if rk is not None else reduce_kernel(coeffs)

        def raw_step(state: State, h: float) -> State:
            n = step_direct(state.n, kernel, coeffs, scales, h, settings.stability_limit)
            return State(n=n, t=state.t + h)

        current = State(n=initial.n, t=initial.t)
        grid_y = None

    def observe(state: State) -> Dict[str, float]:
        record = _default_record(model, state, coeffs)
        for name, fn in (monitors or {}).items():
            record[name] = float(fn(state))
        return record

    stepper = _Stepper(raw_step, settings.max_halvings)
    trajectory = Trajectory(model=model, grid_x=coeffs.grid_x, grid_y=grid_y)
    trajectory.append(current, observe(current))

    t0 = float(initial.t)
    n_steps = max(1, int(math.ceil(t_end / dt - 1e-9)))
    logger.info(
        f"{model} run: eps={scales.epsilon:g} mu={scales.mu:g} t_end={t_end:g} "
        f"dt={dt:g} steps={n_steps}"
    )
    with tqdm(total=n_steps, desc=label or model, disable=not settings.progress, leave=False) as bar:
        for k in range(1, n_steps + 1):
            t_target = t0 + t_end if k == n_steps else t0 + k * dt
            h = t_target - current.t
            current = replace(stepper.advance(current, h), t=t_target)
            if k % sample_every == 0 or k == n_steps:
                trajectory.append(current, observe(current))
            bar.update(1)

    trajectory.halvings = stepper.halvings
    if stepper.halvings:
        logger.info(f"{model} run needed {stepper.halvings} step halvings")
    return trajectory
