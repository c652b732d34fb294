"""
diagnostics.py

Measured quantities of the two models: total mass and resource gap, the resource-gap
bound, Lyapunov functionals and their dissipations, evolutionarily stable distributions
(ESD) on the grid, branching detection and model comparison norms.

An ESD candidate is a grid density n_bar. For the direct model it is an ESD when
    a - c * n_bar = 0 on its support and <= 0 elsewhere;
for the chemostat the fitness uses the steady resource R_bar computed from n_bar.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import root

from chemoreduce.errors import DiagnosticError, InfeasibleSupport, SingularSupport
from chemoreduce.logging_config import get_logger
from chemoreduce.numerics.dynamics import N_FLOOR, ScaleParams, State, direct_growth
from chemoreduce.numerics.model import Coefficients, ReducedKernel
from chemoreduce.numerics.traitgrid import TraitGrid, integrate

logger = get_logger("diagnostics")

SUPPORT_THRESHOLD = 1e-12
DEFAULT_PEAK_THRESHOLD = 0.1
# Condition number beyond which a restricted competition matrix counts as singular.
MAX_CONDITION = 1e13


def mass(n: np.ndarray, grid: TraitGrid) -> float:
    """M = integral of n dx."""
    return integrate(n, grid)


def resource_gap(R: np.ndarray, coeffs: Coefficients) -> float:
    """N = integral of |R - R_in| dy."""
    R = coeffs.grid_y.check_length(R, "R")
    return integrate(np.abs(R - coeffs.R_in), coeffs.grid_y)


def uptake_constant(coeffs: Coefficients) -> float:
    """Bound on the uptake of a unit mass: K_M, or the largest row integral of K if larger."""
    row_integrals = coeffs.K @ coeffs.grid_y.quad_weights
    return max(coeffs.K_M, float(np.max(row_integrals)))


def nee_bound(
    N0: float,
    t: float,
    coeffs: Coefficients,
    scales: ScaleParams,
    R_M_sup: float,
    M_sup: float,
) -> float:
    """Right-hand side of the bound on N(t)/eps.

    N0/eps * exp(-m_min t / eps^2) + ||R_M||_inf / m_min * K * sup M, with t in units
    of 1/mu when mutations are on.
    """
    eps = scales.epsilon
    t_eff = scales.effective_dt(t)
    decay = (N0 / eps) * np.exp(-coeffs.m_min * t_eff / eps**2)
    return float(decay + R_M_sup / coeffs.m_min * uptake_constant(coeffs) * M_sup)


# ---------------------------------------------------------------------------
# ESD candidates
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ESDCandidate:
    """Grid density n_bar given by its support nodes and the values there."""
    grid_x: TraitGrid
    support: Tuple[int, ...]
    weights: np.ndarray = field(repr=False)
    R_bar: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self) -> None:
        support = tuple(int(i) for i in self.support)
        if len(set(support)) != len(support):
            raise DiagnosticError("support nodes must be distinct")
        if any(i < 0 or i >= self.grid_x.n_points for i in support):
            raise DiagnosticError("support node outside the grid")
        weights = np.array(self.weights, dtype=float).reshape(-1)
        if weights.shape[0] != len(support):
            raise DiagnosticError(
                f"{weights.shape[0]} weights for {len(support)} support nodes"
            )
        if np.any(weights <= 0.0) or not np.all(np.isfinite(weights)):
            raise DiagnosticError("ESD weights must be positive and finite")
        order = np.argsort(support, kind="stable")
        object.__setattr__(self, "support", tuple(support[i] for i in order))
        weights = weights[order]
        weights.setflags(write=False)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def empty(cls, grid_x: TraitGrid) -> "ESDCandidate":
        return cls(grid_x=grid_x, support=(), weights=np.zeros(0))

    @classmethod
    def from_density(
        cls,
        n: np.ndarray,
        grid_x: TraitGrid,
        threshold: float = SUPPORT_THRESHOLD,
        R_bar: Optional[np.ndarray] = None,
    ) -> "ESDCandidate":
        """Support = nodes where n exceeds threshold * max n."""
        n = grid_x.check_length(n, "n_bar")
        top = float(np.max(n)) if n.size else 0.0
        if top <= 0.0:
            return cls.empty(grid_x)
        idx = np.flatnonzero(n > threshold * top)
        return cls(grid_x=grid_x, support=tuple(idx), weights=n[idx], R_bar=R_bar)

    @property
    def density(self) -> np.ndarray:
        out = np.zeros(self.grid_x.n_points)
        out[list(self.support)] = self.weights
        return out

    @property
    def off_support(self) -> np.ndarray:
        mask = np.ones(self.grid_x.n_points, dtype=bool)
        mask[list(self.support)] = False
        return np.flatnonzero(mask)

    def support_traits(self) -> np.ndarray:
        return self.grid_x.nodes[list(self.support)]


@dataclass(frozen=True)
class ESDReport:
    model: str
    tolerance: float
    max_support_residual: float
    max_offsupport_violation: float
    passed: bool
    support_traits: Tuple[float, ...]
    h: float

    def to_csv_row(self) -> Dict[str, object]:
        return {
            "model": self.model,
            "tolerance": self.tolerance,
            "max_support_residual": self.max_support_residual,
            "max_offsupport_violation": self.max_offsupport_violation,
            "passed": self.passed,
            "support_nodes": ";".join(repr(float(x)) for x in self.support_traits),
            "h": self.h,
        }


def chemostat_resource_steady(n_bar: np.ndarray, coeffs: Coefficients, scales: ScaleParams) -> np.ndarray:
    """Steady resource for a frozen population: R_bar = R_in / (1 + (eps/m) * integral K n_bar dx)."""
    load = coeffs.uptake(coeffs.grid_x.check_length(n_bar, "n_bar"))
    return coeffs.R_in / (1.0 + scales.epsilon * load / coeffs.m)


def fitness_direct(n_bar: np.ndarray, rk: ReducedKernel, coeffs: Coefficients) -> np.ndarray:
    return direct_growth(n_bar, rk, coeffs)


def fitness_chemostat(n_bar: np.ndarray, coeffs: Coefficients, scales: ScaleParams) -> np.ndarray:
    """a + (1/eps) * integral of K (R_bar - R_in) dy with R_bar the steady resource of n_bar.

    Evaluated as a - integral K R_in L / (1 + eps L) dy with L = (integral K n_bar dx) / m,
    which carries no eps-sized difference of resources.
    """
    load = coeffs.uptake(coeffs.grid_x.check_length(n_bar, "n_bar")) / coeffs.m
    deficit = coeffs.R_in * load / (1.0 + scales.epsilon * load)
    return coeffs.a - coeffs.resource_response(deficit)


def _fitness(
    model: str,
    n_bar: np.ndarray,
    coeffs: Coefficients,
    rk: Optional[ReducedKernel],
    scales: Optional[ScaleParams],
) -> np.ndarray:
    if model == "direct":
        if rk is None:
            raise ValueError("direct model fitness needs the reduced kernel")
        return fitness_direct(n_bar, rk, coeffs)
    if model == "chemostat":
        if scales is None:
            raise ValueError("chemostat fitness needs the scale parameters")
        return fitness_chemostat(n_bar, coeffs, scales)
    raise ValueError(f"unknown model {model!r}")


def _direct_support_solve(support: Sequence[int], coeffs: Coefficients, rk: ReducedKernel) -> np.ndarray:
    idx = np.asarray(support, dtype=int)
    w = coeffs.grid_x.quad_weights[idx]
    A = rk.c[np.ix_(idx, idx)] * w[None, :]
    try:
        cond = np.linalg.cond(A)
        if not np.isfinite(cond) or cond > MAX_CONDITION:
            raise SingularSupport(f"restricted competition matrix is singular (cond {cond:.3g})")
        return np.linalg.solve(A, coeffs.a[idx])
    except np.linalg.LinAlgError as exc:
        raise SingularSupport(f"restricted competition matrix is singular: {exc}") from exc


def _chemostat_support_solve(
    support: Sequence[int],
    coeffs: Coefficients,
    scales: ScaleParams,
    seed: np.ndarray,
    tol: float = 1e-13,
) -> np.ndarray:
    idx = np.asarray(support, dtype=int)
    n_bar = np.zeros(coeffs.grid_x.n_points)

    def residual(q: np.ndarray) -> np.ndarray:
        n_bar[:] = 0.0
        n_bar[idx] = q
        return fitness_chemostat(n_bar, coeffs, scales)[idx]

    sol = root(residual, seed, method="hybr", tol=tol)
    if not sol.success:
        raise SingularSupport(f"chemostat ESD solve did not converge: {sol.message}")
    return np.asarray(sol.x, dtype=float)


def _support_solve(
    support: Sequence[int],
    coeffs: Coefficients,
    rk: ReducedKernel,
    model: str,
    scales: Optional[ScaleParams],
) -> np.ndarray:
    q = _direct_support_solve(support, coeffs, rk)
    if model == "chemostat":
        if scales is None:
            raise ValueError("chemostat ESD needs the scale parameters")
        q = _chemostat_support_solve(support, coeffs, scales, seed=q)
    return q


def esd_solve_on_support(
    support: Iterable[int],
    coeffs: Coefficients,
    rk: ReducedKernel,
    model: str = "direct",
    scales: Optional[ScaleParams] = None,
) -> ESDCandidate:
    """
    Densities on a fixed support that zero the fitness there.

    Args:
        support: grid_x node indices
        model: "direct" (linear solve) or "chemostat" (nonlinear solve seeded by the
            direct solution)

    Returns:
        ESDCandidate, with R_bar for the chemostat; verification is left to esd_verify
    """
    support = sorted(set(int(i) for i in support))
    if not support:
        raise DiagnosticError("ESD support must be nonempty")
    q = _support_solve(support, coeffs, rk, model, scales)
    bad = [support[k] for k in np.flatnonzero(q <= 0.0)]
    if bad:
        raise InfeasibleSupport("support cannot carry a positive ESD", bad)
    candidate = ESDCandidate(grid_x=coeffs.grid_x, support=tuple(support), weights=q)
    if model == "chemostat":
        R_bar = chemostat_resource_steady(candidate.density, coeffs, scales)
        candidate = ESDCandidate(coeffs.grid_x, candidate.support, candidate.weights, R_bar)
    return candidate


def esd_verify(
    candidate: ESDCandidate,
    coeffs: Coefficients,
    rk: Optional[ReducedKernel] = None,
    scales: Optional[ScaleParams] = None,
    model: str = "direct",
    tol: float = 1e-6,
) -> ESDReport:
    """Residual of the fitness on the support and its positive part off the support."""
    fitness = _fitness(model, candidate.density, coeffs, rk, scales)
    on = list(candidate.support)
    off = candidate.off_support
    support_residual = float(np.max(np.abs(fitness[on]))) if on else 0.0
    violation = float(max(0.0, np.max(fitness[off]))) if off.size else 0.0
    report = ESDReport(
        model=model,
        tolerance=float(tol),
        max_support_residual=support_residual,
        max_offsupport_violation=violation,
        passed=bool(support_residual <= tol and violation <= tol),
        support_traits=tuple(float(x) for x in candidate.support_traits()),
        h=coeffs.grid_x.h,
    )
    logger.debug(
        f"ESD check ({model}): support residual {support_residual:.3g}, "
        f"off-support violation {violation:.3g}, passed={report.passed}"
    )
    return report


def find_esd(
    coeffs: Coefficients,
    rk: ReducedKernel,
    seed_support: Iterable[int] = (),
    tol: float = 1e-9,
    max_iter: int = 200,
    model: str = "direct",
    scales: Optional[ScaleParams] = None,
) -> ESDCandidate:
    """Active-set search for a grid ESD.

    Drops the most negative weight while the support solve is infeasible, otherwise
    adds the off-support node with the largest positive fitness, until both ESD
    conditions hold within tol.
    """
    support: List[int] = sorted(set(int(i) for i in seed_support))
    for _ in range(max_iter):
        if support:
            q = _support_solve(support, coeffs, rk, model, scales)
            if np.any(q <= 0.0):
                dropped = support.pop(int(np.argmin(q)))
                logger.debug(f"find_esd: dropping node {dropped}")
                continue
            candidate = ESDCandidate(coeffs.grid_x, tuple(support), q)
        else:
            candidate = ESDCandidate.empty(coeffs.grid_x)
        fitness = _fitness(model, candidate.density, coeffs, rk, scales)
        off = candidate.off_support
        if off.size == 0:
            break
        worst = int(off[np.argmax(fitness[off])])
        if fitness[worst] <= tol:
            break
        support = sorted(support + [worst])
    else:
        raise DiagnosticError(f"ESD search did not settle after {max_iter} iterations")

    if model == "chemostat":
        R_bar = chemostat_resource_steady(candidate.density, coeffs, scales)
        candidate = ESDCandidate(coeffs.grid_x, candidate.support, candidate.weights, R_bar)
    return candidate


# ---------------------------------------------------------------------------
# Lyapunov functionals
# ---------------------------------------------------------------------------

def _log_where(values: np.ndarray, weight: np.ndarray, grid: TraitGrid, what: str) -> np.ndarray:
    """ln(values) on nodes where weight > 0, zero elsewhere."""
    active = weight > 0.0
    bad = np.flatnonzero(active & ~(values > 0.0))
    if bad.size:
        node = int(bad[0])
        raise DiagnosticError(f"log of nonpositive {what}", node=node, trait=float(grid.nodes[node]))
    out = np.zeros_like(values, dtype=float)
    out[active] = np.log(values[active])
    return out


def _require_R_bar(esd: ESDCandidate) -> np.ndarray:
    if esd.R_bar is None:
        raise DiagnosticError("chemostat Lyapunov functional needs an ESD with R_bar")
    return esd.R_bar


def lyapunov_cr(state: State, esd: ESDCandidate, coeffs: Coefficients) -> float:
    """S_cr = -int n_bar ln n - int R_bar ln R + int n + int R."""
    R_bar = _require_R_bar(esd)
    gx, gy = coeffs.grid_x, coeffs.grid_y
    n_bar = esd.density
    ln_n = _log_where(state.n, n_bar, gx, "n")
    ln_R = _log_where(state.R, R_bar, gy, "R")
    return (
        -integrate(n_bar * ln_n, gx)
        - integrate(R_bar * ln_R, gy)
        + integrate(state.n, gx)
        + integrate(state.R, gy)
    )


def dissipation_cr(state: State, esd: ESDCandidate, coeffs: Coefficients, scales: ScaleParams) -> float:
    """Time derivative of S_cr along the unmutated chemostat.

    D_cr = -int m R_in / (eps^2 R_bar R) (R_bar - R)^2 dy
           + int n (a + (1/eps) int K (R_bar - R_in) dy) dx

    The growth term is the fitness of the ESD density, so R_bar must be its steady resource.
    """
    R_bar = _require_R_bar(esd)
    eps = scales.epsilon
    gy = coeffs.grid_y
    zero = np.flatnonzero(~(state.R > 0.0) | ~(R_bar > 0.0))
    if zero.size:
        node = int(zero[0])
        raise DiagnosticError("division by zero resource", node=node, trait=float(gy.nodes[node]))
    quadratic = coeffs.m * coeffs.R_in / (eps**2 * R_bar * state.R) * (R_bar - state.R) ** 2
    growth_bar = fitness_chemostat(esd.density, coeffs, scales)
    return -integrate(quadratic, gy) + integrate(state.n * growth_bar, coeffs.grid_x)


def lyapunov_dc(n: np.ndarray, esd: ESDCandidate, grid: TraitGrid) -> float:
    """S_dc = -int n_bar ln n + int n."""
    n = grid.check_length(n, "n")
    n_bar = esd.density
    return -integrate(n_bar * _log_where(n, n_bar, grid, "n"), grid) + integrate(n, grid)


def dissipation_dc(
    n: np.ndarray,
    esd: ESDCandidate,
    rk: ReducedKernel,
    coeffs: Coefficients,
    form: str = "kernel",
) -> float:
    """Time derivative of S_dc along the unmutated direct model.

    form="kernel":   -double int c (n - n_bar)(n - n_bar) + int n (a - c * n_bar)
    form="resource": the quadratic term written as -int R_in/m (int K (n - n_bar) dx)^2 dy
    """
    n = coeffs.grid_x.check_length(n, "n")
    n_bar = esd.density
    v = n - n_bar
    if form == "kernel":
        quadratic = rk.quadratic_form(v)
    elif form == "resource":
        quadratic = integrate(coeffs.supply_ratio * coeffs.uptake(v) ** 2, coeffs.grid_y)
    else:
        raise ValueError(f"unknown dissipation form {form!r}")
    return -quadratic + integrate(n * fitness_direct(n_bar, rk, coeffs), coeffs.grid_x)


def lyapunov_monitors(model: str, esd: ESDCandidate, coeffs: Coefficients) -> Dict[str, Callable[[State], float]]:
    """Per-sample Lyapunov monitor for `dynamics.run`."""
    if model == "chemostat":
        return {"S_cr": lambda state: lyapunov_cr(state, esd, coeffs)}
    return {"S_dc": lambda state: lyapunov_dc(state.n, esd, coeffs.grid_x)}


# ---------------------------------------------------------------------------
# Branching and comparison
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PeakReport:
    count: int
    indices: Tuple[int, ...]
    locations: Tuple[float, ...]


def peak_count(n: np.ndarray, grid: TraitGrid, rel_threshold: float = DEFAULT_PEAK_THRESHOLD) -> PeakReport:
    """
    Strict local maxima of n at least rel_threshold * max(n) high.

    Boundary nodes count when they exceed their single neighbour; a flat top counts
    once, at its leftmost node.
    """
    if not 0.0 < rel_threshold < 1.0:
        raise ValueError(f"rel_threshold must lie in (0, 1), got {rel_threshold}")
    n = grid.check_length(n, "n")
    top = float(np.max(n))
    if top <= 0.0:
        return PeakReport(0, (), ())
    cutoff = rel_threshold * top
    size = n.size
    peaks: List[int] = []
    i = 0
    while i < size:
        j = i
        while j + 1 < size and n[j + 1] == n[i]:
            j += 1
        rises = i == 0 or n[i - 1] < n[i]
        falls = j == size - 1 or n[j + 1] < n[i]
        if rises and falls and n[i] >= cutoff and n[i] > 0.0:
            peaks.append(i)
        i = j + 1
    return PeakReport(len(peaks), tuple(peaks), tuple(float(grid.nodes[k]) for k in peaks))


def rel_error_R(R: np.ndarray, R_in: np.ndarray) -> float:
    """max over y of |R - R_in| / R_in."""
    R = np.asarray(R, dtype=float)
    R_in = np.asarray(R_in, dtype=float)
    bad = np.flatnonzero(~(R_in > 0.0))
    if bad.size:
        raise DiagnosticError("R_in must be positive for a relative error", node=int(bad[0]))
    return float(np.max(np.abs(R - R_in) / R_in))


def l1_distance(n1: np.ndarray, n2: np.ndarray, grid: TraitGrid) -> float:
    return integrate(np.abs(grid.check_length(n1, "n1") - grid.check_length(n2, "n2")), grid)


def hopf_cole(n: np.ndarray, mu: float, grid: Optional[TraitGrid] = None) -> np.ndarray:
    """u = mu * ln n. Floored densities are accepted but reported."""
    if not mu > 0.0:
        raise ValueError(f"mu must be positive, got {mu}")
    n = np.asarray(n, dtype=float)
    bad = np.flatnonzero(~(n > 0.0))
    if bad.size:
        node = int(bad[0])
        trait = float(grid.nodes[node]) if grid is not None else None
        raise DiagnosticError("log of nonpositive density", node=node, trait=trait)
    floored = int(np.count_nonzero(n <= N_FLOOR))
    if floored:
        logger.warning(f"hopf_cole: {floored} floored densities, u is clipped there")
    return mu * np.log(n)


def max_hopf_cole(n: np.ndarray, mu: float) -> float:
    """max over x of u = mu * ln n, i.e. mu * ln(max n)."""
    top = float(np.max(np.asarray(n, dtype=float)))
    return float(hopf_cole(np.array([top]), mu)[0])


def hopf_cole_band(mu: float) -> float:
    """Half-width 5 mu |ln mu| of the band max u is expected to settle in for small mu."""
    if not mu > 0.0:
        raise ValueError(f"mu must be positive, got {mu}")
    return 5.0 * mu * abs(math.log(mu))


def hopf_cole_monitors(mu: float) -> Dict[str, Callable[[State], float]]:
    """Per-sample max u for `dynamics.run`; empty without mutations."""
    if not mu > 0.0:
        return {}
    return {"max_u": lambda state: max_hopf_cole(state.n, mu)}
