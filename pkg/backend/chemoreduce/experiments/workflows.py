"""
workflows.py

Experiment drivers built on the numerical core:

- run_single: one run per configured model
- run_model_comparison: chemostat against direct competition at one epsilon
- run_epsilon_sweep: the comparison repeated over a decreasing list of epsilons
- run_ratio_study: chemostat runs for several (m, M_in) supplies
- run_branching: peak counts over time

Independent runs are dispatched to a process pool when more than one worker is allowed.
"""
from __future__ import annotations

import concurrent.futures as cf
import math
import multiprocessing as mp
import time
from dataclasses import dataclass, field, replace
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import psutil

from chemoreduce.errors import ChemoreduceError, DiagnosticError
from chemoreduce.experiments.config import RunConfig, SupplyArm, config_hash
from chemoreduce.logging_config import get_logger
from chemoreduce.numerics.diagnostics import (
    ESDCandidate,
    ESDReport,
    esd_solve_on_support,
    esd_verify,
    find_esd,
    hopf_cole_band,
    hopf_cole_monitors,
    l1_distance,
    lyapunov_monitors,
    mass,
    peak_count,
    rel_error_R,
)
from chemoreduce.numerics.dynamics import Monitor, ScaleParams, State, Trajectory, run
from chemoreduce.numerics.model import Coefficients, ReducedKernel, reduce_kernel
from chemoreduce.settings import RuntimeSettings

logger = get_logger("workflows")


@dataclass(frozen=True)
class SimulationJob:
    """Everything one run needs; picklable so it can cross a process boundary."""
    label: str
    model: str
    coeffs: Coefficients
    scales: ScaleParams
    initial: State
    t_end: float
    dt: float
    sample_every: int
    settings: RuntimeSettings


@dataclass
class JobOutcome:
    label: str
    trajectory: Optional[Trajectory]
    seconds: float
    error: str = ""

    @property
    def ok(self) -> bool:
        return self.trajectory is not None


def _run_job(job: SimulationJob) -> JobOutcome:
    start = time.perf_counter()
    try:
        trajectory = run(
            job.model,
            job.coeffs,
            job.scales,
            job.initial,
            job.t_end,
            dt=job.dt,
            sample_every=job.sample_every,
            settings=job.settings,
            label=job.label,
        )
    except ChemoreduceError as exc:
        logger.warning(f"{job.label} failed: {exc}")
        return JobOutcome(job.label, None, time.perf_counter() - start, str(exc))
    rss_mb = psutil.Process().memory_info().rss / 2**20
    logger.debug(f"{job.label}: done, rss {rss_mb:.0f} MiB")
    return JobOutcome(job.label, trajectory, time.perf_counter() - start)


def execute_jobs(jobs: Sequence[SimulationJob], threads: int) -> List[JobOutcome]:
    """Run jobs, concurrently when threads > 1; outcomes keep the job order."""
    if threads <= 1 or len(jobs) <= 1:
        return [_run_job(job) for job in jobs]
    workers = min(threads, len(jobs))
    logger.info(f"dispatching {len(jobs)} runs to {workers} worker processes")
    quiet = [replace(job, settings=replace(job.settings, progress=False)) for job in jobs]
    with cf.ProcessPoolExecutor(max_workers=workers, mp_context=mp.get_context("spawn")) as ex:
        futures = [ex.submit(_run_job, job) for job in quiet]
        return [fut.result() for fut in futures]


def _job(config: RunConfig, label: str, model: str, coeffs: Coefficients, scales: ScaleParams, settings: RuntimeSettings) -> SimulationJob:
    return SimulationJob(
        label=label,
        model=model,
        coeffs=coeffs,
        scales=scales,
        initial=config.build_initial(coeffs),
        t_end=config.time.t_end,
        dt=config.time.dt,
        sample_every=config.time.sample_every,
        settings=settings,
    )


# ---------------------------------------------------------------------------
# Result records
# ---------------------------------------------------------------------------

@dataclass
class SweepRow:
    epsilon: float
    rel_error_R: float = math.nan
    l1_distance: float = math.nan
    peaks_chemostat: int = 0
    peaks_direct: int = 0
    mass_chemostat: float = math.nan
    mass_direct: float = math.nan
    seconds: float = math.nan
    error: str = ""

    FIELDS = (
        "epsilon",
        "rel_error_R",
        "l1_distance",
        "peaks_chemostat",
        "peaks_direct",
        "mass_chemostat",
        "mass_direct",
        "seconds",
        "error",
    )

    def as_dict(self) -> Dict[str, object]:
        return {name: getattr(self, name) for name in self.FIELDS}


@dataclass
class ComparisonSummary:
    """Chemostat against direct competition at one epsilon."""
    epsilon: float
    times: np.ndarray
    mass_chemostat: np.ndarray
    mass_direct: np.ndarray
    final_chemostat: np.ndarray
    final_direct: np.ndarray
    relative_mass_gap: float
    l1_distance: float
    rel_error_R: float
    peaks_chemostat: int
    peaks_direct: int

    def as_row(self) -> Dict[str, object]:
        return {
            "epsilon": self.epsilon,
            "mass_chemostat": float(self.mass_chemostat[-1]),
            "mass_direct": float(self.mass_direct[-1]),
            "relative_mass_gap": self.relative_mass_gap,
            "l1_distance": self.l1_distance,
            "rel_error_R": self.rel_error_R,
            "peaks_chemostat": self.peaks_chemostat,
            "peaks_direct": self.peaks_direct,
        }


@dataclass
class RatioPairResult:
    arm_a: SupplyArm
    arm_b: SupplyArm
    ratio_preserved: bool
    l1_distance: float
    relative_distance: float
    kernel_gap: float
    error: str = ""

    def as_row(self) -> Dict[str, object]:
        return {
            "m_a": self.arm_a.m,
            "M_in_a": self.arm_a.M_in,
            "m_b": self.arm_b.m,
            "M_in_b": self.arm_b.M_in,
            "ratio_preserved": self.ratio_preserved,
            "l1_distance": self.l1_distance,
            "relative_distance": self.relative_distance,
            "kernel_gap": self.kernel_gap,
            "error": self.error,
        }


@dataclass
class BranchingResult:
    model: str
    times: np.ndarray
    peak_counts: np.ndarray
    first_dimorphic_time: Optional[float]
    final_peak_locations: Tuple[float, ...]

    @property
    def final_count(self) -> int:
        return int(self.peak_counts[-1])


@dataclass
class ExperimentResult:
    config: RunConfig
    config_hash: str
    kind: str
    coefficients: Coefficients
    trajectories: Dict[str, Trajectory] = field(default_factory=dict)
    sweep_rows: List[SweepRow] = field(default_factory=list)
    comparison: Optional[ComparisonSummary] = None
    ratio_pairs: List[RatioPairResult] = field(default_factory=list)
    branching: List[BranchingResult] = field(default_factory=list)
    esd_reports: List[ESDReport] = field(default_factory=list)


# ---------------------------------------------------------------------------
# Workflows
# ---------------------------------------------------------------------------

def _attach_esd(
    model: str,
    coeffs: Coefficients,
    rk: ReducedKernel,
    scales: ScaleParams,
) -> Optional[ESDCandidate]:
    try:
        return find_esd(coeffs, rk, model=model, scales=ScaleParams(scales.epsilon))
    except DiagnosticError as exc:
        logger.warning(f"no {model} ESD to track Lyapunov functionals against: {exc}")
        return None


def _guarded(monitors: Mapping[str, Monitor]) -> Dict[str, Monitor]:
    """Monitors that record NaN where the functional is undefined (zero density)."""

    def wrap(fn: Monitor) -> Monitor:
        def guarded(state: State) -> float:
            try:
                return fn(state)
            except DiagnosticError:
                return math.nan

        return guarded

    return {name: wrap(fn) for name, fn in monitors.items()}


def run_single(config: RunConfig, settings: Optional[RuntimeSettings] = None, coeffs: Optional[Coefficients] = None) -> Dict[str, Trajectory]:
    """One trajectory per configured model, in process.

    Lyapunov functionals are tracked when the config asks for them; with mutations the
    maximum of the Hopf-Cole transform u = mu ln n is recorded as `max_u`.
    """
    settings = settings or RuntimeSettings()
    coeffs = coeffs or config.build_coefficients()
    scales = config.scales.build()
    rk = reduce_kernel(coeffs)
    trajectories: Dict[str, Trajectory] = {}
    for model in config.models:
        monitors: Dict[str, Monitor] = {}
        if config.lyapunov:
            esd = _attach_esd(model, coeffs, rk, scales)
            if esd is not None:
                monitors = _guarded(lyapunov_monitors(model, esd, coeffs))
        monitors.update(_guarded(hopf_cole_monitors(scales.mu)))
        start = time.perf_counter()
        trajectories[model] = run(
            model,
            coeffs,
            scales,
            config.build_initial(coeffs),
            config.time.t_end,
            dt=config.time.dt,
            sample_every=config.time.sample_every,
            rk=rk,
            settings=settings,
            monitors=monitors,
        )
        logger.info(f"{model} run finished in {time.perf_counter() - start:.2f}s")
        if scales.mu > 0.0:
            logger.info(
                f"{model}: final max u = {trajectories[model].series('max_u')[-1]:.4g} "
                f"(band +-{hopf_cole_band(scales.mu):.4g})"
            )
    return trajectories


def compare_trajectories(epsilon: float, chemostat: Trajectory, direct: Trajectory, coeffs: Coefficients, peak_threshold: float) -> ComparisonSummary:
    gx = coeffs.grid_x
    n_c = chemostat.final.n
    n_d = direct.final.n
    m_c = mass(n_c, gx)
    m_d = mass(n_d, gx)
    return ComparisonSummary(
        epsilon=epsilon,
        times=chemostat.times_array(),
        mass_chemostat=chemostat.series("mass"),
        mass_direct=direct.series("mass"),
        final_chemostat=np.array(n_c),
        final_direct=np.array(n_d),
        relative_mass_gap=(m_c - m_d) / m_c if m_c > 0.0 else math.nan,
        l1_distance=l1_distance(n_c, n_d, gx),
        rel_error_R=rel_error_R(chemostat.final.R, coeffs.R_in),
        peaks_chemostat=peak_count(n_c, gx, peak_threshold).count,
        peaks_direct=peak_count(n_d, gx, peak_threshold).count,
    )


def run_model_comparison(
    config: RunConfig,
    settings: Optional[RuntimeSettings] = None,
    trajectories: Optional[Dict[str, Trajectory]] = None,
    coeffs: Optional[Coefficients] = None,
) -> ComparisonSummary:
    """Total mass series and final densities of both models at the configured epsilon."""
    if config.model != "both":
        raise ValueError("model comparison needs model 'both'")
    coeffs = coeffs or config.build_coefficients()
    trajectories = trajectories or run_single(config, settings, coeffs)
    summary = compare_trajectories(
        config.scales.epsilon,
        trajectories["chemostat"],
        trajectories["direct"],
        coeffs,
        config.peak_threshold,
    )
    logger.info(
        f"comparison eps={summary.epsilon:g}: mass gap {summary.relative_mass_gap:.3f}, "
        f"L1 distance {summary.l1_distance:.3g}, rel error R {summary.rel_error_R:.3g}"
    )
    return summary


def run_epsilon_sweep(config: RunConfig, settings: Optional[RuntimeSettings] = None) -> List[SweepRow]:
    """One SweepRow per epsilon, ordered by decreasing epsilon; failed rows carry the error."""
    if config.experiment.kind != "epsilon_sweep":
        raise ValueError("epsilon sweep needs an epsilon_sweep experiment")
    settings = settings or RuntimeSettings()
    coeffs = config.build_coefficients()
    epsilons = list(config.experiment.epsilons)

    # The direct model does not depend on epsilon: one run serves every row.
    jobs = [_job(config, "direct", "direct", coeffs, config.scales.build(epsilons[0]), settings)]
    jobs += [
        _job(config, f"chemostat eps={eps:g}", "chemostat", coeffs, config.scales.build(eps), settings)
        for eps in epsilons
    ]
    outcomes = execute_jobs(jobs, settings.threads)
    direct = outcomes[0]

    gx = coeffs.grid_x
    rows: List[SweepRow] = []
    for eps, outcome in zip(epsilons, outcomes[1:]):
        row = SweepRow(epsilon=eps, seconds=outcome.seconds)
        if direct.ok:
            row.peaks_direct = peak_count(direct.trajectory.final.n, gx, config.peak_threshold).count
            row.mass_direct = mass(direct.trajectory.final.n, gx)
        if outcome.ok:
            final = outcome.trajectory.final
            row.rel_error_R = rel_error_R(final.R, coeffs.R_in)
            row.peaks_chemostat = peak_count(final.n, gx, config.peak_threshold).count
            row.mass_chemostat = mass(final.n, gx)
            if direct.ok:
                row.l1_distance = l1_distance(final.n, direct.trajectory.final.n, gx)
        errors = [o.error for o in (outcome, direct) if o.error]
        row.error = "; ".join(errors)
        logger.info(
            f"sweep eps={eps:g}: rel error R {row.rel_error_R:.3g}, "
            f"L1 {row.l1_distance:.3g}, {row.seconds:.1f}s"
        )
        rows.append(row)
    return rows


def _arm_label(arm: SupplyArm) -> str:
    return f"chemostat m={arm.m:g} M_in={arm.M_in:g}"


def run_ratio_study(config: RunConfig, settings: Optional[RuntimeSettings] = None) -> Tuple[List[RatioPairResult], Dict[str, Trajectory]]:
    """Chemostat final densities compared across supplies, flagged by whether M_in/m is kept."""
    if config.experiment.kind != "ratio_study":
        raise ValueError("ratio study needs a ratio_study experiment")
    settings = settings or RuntimeSettings()
    scales = config.scales.build()

    arms: Dict[str, SupplyArm] = {}
    for a, b in config.experiment.pairs:
        arms.setdefault(_arm_label(a), a)
        arms.setdefault(_arm_label(b), b)
    coeffs = {label: config.build_coefficients(m=arm.m, M_in=arm.M_in) for label, arm in arms.items()}
    jobs = [_job(config, label, "chemostat", coeffs[label], scales, settings) for label in arms]
    outcomes = {o.label: o for o in execute_jobs(jobs, settings.threads)}

    kernels: Dict[str, ReducedKernel] = {}
    pairs: List[RatioPairResult] = []
    for a, b in config.experiment.pairs:
        la, lb = _arm_label(a), _arm_label(b)
        for label in (la, lb):
            if label not in kernels:
                kernels[label] = reduce_kernel(coeffs[label])
        ca, cb = kernels[la].c, kernels[lb].c
        kernel_gap = float(np.max(np.abs(ca - cb)) / max(np.max(np.abs(ca)), np.finfo(float).tiny))
        preserved = math.isclose(a.ratio, b.ratio, rel_tol=1e-12)
        oa, ob = outcomes[la], outcomes[lb]
        if oa.ok and ob.ok:
            gx = coeffs[la].grid_x
            na, nb = oa.trajectory.final.n, ob.trajectory.final.n
            dist = l1_distance(na, nb, gx)
            ref = mass(na, gx)
            result = RatioPairResult(a, b, preserved, dist, dist / ref if ref > 0 else math.nan, kernel_gap)
        else:
            err = "; ".join(o.error for o in (oa, ob) if o.error)
            result = RatioPairResult(a, b, preserved, math.nan, math.nan, kernel_gap, err)
        logger.info(
            f"ratio pair {la} vs {lb}: preserved={preserved}, "
            f"relative L1 {result.relative_distance:.3g}, kernel gap {kernel_gap:.3g}"
        )
        pairs.append(result)
    trajectories = {label: o.trajectory for label, o in outcomes.items() if o.ok}
    return pairs, trajectories


def branching_from_trajectory(trajectory: Trajectory, peak_threshold: float) -> BranchingResult:
    counts = np.array(
        [peak_count(s.n, trajectory.grid_x, peak_threshold).count for s in trajectory.states],
        dtype=int,
    )
    times = trajectory.times_array()
    hits = np.flatnonzero(counts >= 2)
    first = float(times[hits[0]]) if hits.size else None
    final = peak_count(trajectory.final.n, trajectory.grid_x, peak_threshold)
    return BranchingResult(trajectory.model, times, counts, first, final.locations)


def run_branching(config: RunConfig, settings: Optional[RuntimeSettings] = None, trajectories: Optional[Dict[str, Trajectory]] = None) -> Tuple[List[BranchingResult], Dict[str, Trajectory]]:
    """Peak count at every sample of each configured model."""
    trajectories = trajectories or run_single(config, settings)
    results = []
    for model, trajectory in trajectories.items():
        result = branching_from_trajectory(trajectory, config.peak_threshold)
        logger.info(
            f"{model}: {result.final_count} peaks at t_end, "
            f"first dimorphic sample at t={result.first_dimorphic_time}"
        )
        results.append(result)
    return results, trajectories


def final_esd_reports(
    config: RunConfig,
    trajectories: Mapping[str, Trajectory],
    coeffs: Coefficients,
    rk: ReducedKernel,
) -> List[ESDReport]:
    """Solve for an ESD on the final peaks of each run and verify it."""
    reports = []
    scales = ScaleParams(config.scales.epsilon)
    for model, trajectory in trajectories.items():
        peaks = peak_count(trajectory.final.n, coeffs.grid_x, config.peak_threshold)
        if not peaks.count:
            continue
        try:
            candidate = esd_solve_on_support(peaks.indices, coeffs, rk, model=model, scales=scales)
        except DiagnosticError as exc:
            logger.warning(f"{model}: final peaks do not carry an ESD: {exc}")
            continue
        reports.append(
            esd_verify(candidate, coeffs, rk=rk, scales=scales, model=model, tol=config.esd_tolerance)
        )
    return reports


def orchestrate_experiment(config: RunConfig, settings: Optional[RuntimeSettings] = None) -> ExperimentResult:
    """Dispatch on the experiment kind and collect everything emit_outputs writes."""
    settings = settings or RuntimeSettings()
    kind = config.experiment.kind
    coeffs = config.build_coefficients()
    result = ExperimentResult(
        config=config, config_hash=config_hash(config), kind=kind, coefficients=coeffs
    )
    logger.info(f"experiment {kind} (config {result.config_hash[:12]})")

    if kind == "epsilon_sweep":
        result.sweep_rows = run_epsilon_sweep(config, settings)
    elif kind == "ratio_study":
        result.ratio_pairs, result.trajectories = run_ratio_study(config, settings)
    else:
        result.trajectories = run_single(config, settings, coeffs)
        if kind == "branching":
            result.branching, _ = run_branching(config, settings, result.trajectories)
        if config.model == "both":
            result.comparison = run_model_comparison(
                config, settings, result.trajectories, coeffs
            )
        result.esd_reports = final_esd_reports(config, result.trajectories, coeffs, reduce_kernel(coeffs))
    return result
