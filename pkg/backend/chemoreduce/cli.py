#!/usr/bin/env python3
"""Command-line entry point for experiments, kernel reduction and ESD checks.

Usage:
    chemoreduce run --config configs/epsilon_comparison.json --threads 4
    chemoreduce reduce --config configs/epsilon_comparison.json --out kernel.csv
    chemoreduce verify-esd --config configs/epsilon_comparison.json --candidate final_density.csv

Exit codes: 0 success, 1 other failure (including a failed ESD check), 2 config error,
3 numerical blow-up, 4 I/O error.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np
from dotenv import find_dotenv, load_dotenv

from chemoreduce.errors import EXIT_FAILURE, EXIT_OK, ChemoreduceError, ConfigError
from chemoreduce.experiments.config import load_config
from chemoreduce.experiments.outputs import emit_kernel, emit_outputs, read_table
from chemoreduce.experiments.workflows import orchestrate_experiment
from chemoreduce.logging_config import configure_logging, get_logger
from chemoreduce.numerics.diagnostics import ESDCandidate, esd_verify
from chemoreduce.numerics.dynamics import ScaleParams
from chemoreduce.numerics.model import (
    is_positive_semidefinite,
    reduce_kernel,
    translation_invariance_defect,
)
from chemoreduce.settings import RuntimeSettings

logger = get_logger("cli")


def cyan(text: str) -> str:
    return f"\033[36m{text}\033[0m"


def bold(text: str) -> str:
    return f"\033[1m{text}\033[0m"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="chemoreduce",
        description="Chemostat competition for resources and its direct competition reduction.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute the configured experiment")
    run_p.add_argument("--config", required=True, type=Path)
    run_p.add_argument("--threads", type=int, default=None, help="worker processes for sweeps")
    run_p.add_argument("--progress", action="store_true", default=None, help="show progress bars")
    run_p.add_argument("--out", type=Path, default=None, help="override output_dir")

    red_p = sub.add_parser("reduce", help="write the direct competition kernel c as CSV")
    red_p.add_argument("--config", required=True, type=Path)
    red_p.add_argument("--out", required=True, type=Path)

    esd_p = sub.add_parser("verify-esd", help="check a candidate density against the ESD conditions")
    esd_p.add_argument("--config", required=True, type=Path)
    esd_p.add_argument("--candidate", required=True, type=Path, help="CSV with columns x, n")
    esd_p.add_argument("--tol", type=float, default=None, help="defaults to esd_tolerance")
    return parser


def cmd_run(args: argparse.Namespace, settings: RuntimeSettings) -> int:
    config = load_config(args.config)
    settings = settings.with_overrides(threads=args.threads, progress=args.progress)
    logger.info(f"settings: {settings.as_dict()}")
    result = orchestrate_experiment(config, settings)
    paths = emit_outputs(result, args.out)

    print(bold(f"\n{result.kind} finished, config {result.config_hash[:12]}"))
    if result.comparison is not None:
        c = result.comparison
        print(
            f"  eps={c.epsilon:g}  mass gap {c.relative_mass_gap:.3f}  "
            f"L1 {c.l1_distance:.3g}  max|R-R_in|/R_in {c.rel_error_R:.3g}"
        )
    for row in result.sweep_rows:
        status = row.error or "ok"
        print(
            f"  eps={row.epsilon:g}  rel err R {row.rel_error_R:.3g}  "
            f"L1 {row.l1_distance:.3g}  peaks {row.peaks_chemostat}/{row.peaks_direct}  {status}"
        )
    for b in result.branching:
        print(f"  {b.model}: {b.final_count} peaks, first dimorphic at t={b.first_dimorphic_time}")
    print(cyan(f"  {len(paths)} files in {paths[-1].parent}"))
    return EXIT_OK


def cmd_reduce(args: argparse.Namespace, settings: RuntimeSettings) -> int:
    config = load_config(args.config)
    rk = reduce_kernel(config.build_coefficients())
    emit_kernel(rk, args.out)
    print(
        f"c on {rk.grid_x.n_points} nodes: translation defect "
        f"{translation_invariance_defect(rk):.3g}, PSD {is_positive_semidefinite(rk)}"
    )
    return EXIT_OK


def _load_candidate(path: Path, nodes: np.ndarray) -> np.ndarray:
    try:
        frame = read_table(path)
    except FileNotFoundError as exc:
        raise ConfigError(f"candidate file not found: {path}") from exc
    if "x" not in frame.columns or "n" not in frame.columns:
        raise ConfigError(f"{path}: candidate needs columns x and n")
    x = frame["x"].to_numpy(dtype=float)
    if x.shape != nodes.shape or np.max(np.abs(x - nodes)) > 1e-9:
        raise ConfigError(f"{path}: x column does not match the configured grid")
    return frame["n"].to_numpy(dtype=float)


def cmd_verify_esd(args: argparse.Namespace, settings: RuntimeSettings) -> int:
    config = load_config(args.config)
    coeffs = config.build_coefficients()
    rk = reduce_kernel(coeffs)
    density = _load_candidate(args.candidate, coeffs.grid_x.nodes)
    candidate = ESDCandidate.from_density(density, coeffs.grid_x)
    tol = args.tol if args.tol is not None else config.esd_tolerance
    scales = ScaleParams(config.scales.epsilon)

    all_passed = True
    for model in config.models:
        report = esd_verify(candidate, coeffs, rk=rk, scales=scales, model=model, tol=tol)
        verdict = cyan("pass") if report.passed else bold("FAIL")
        print(
            f"{model}: {verdict}  support residual {report.max_support_residual:.3g}  "
            f"off-support violation {report.max_offsupport_violation:.3g}  "
            f"tol {tol:g}  h {report.h:.3g}"
        )
        all_passed = all_passed and report.passed
    return EXIT_OK if all_passed else EXIT_FAILURE


COMMANDS = {"run": cmd_run, "reduce": cmd_reduce, "verify-esd": cmd_verify_esd}


def main(argv: Optional[List[str]] = None) -> int:
    # Ensure environment variables from .env are loaded
    load_dotenv(find_dotenv(usecwd=True))
    settings = RuntimeSettings.from_env()
    configure_logging(settings.log_level)

    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args, settings)
    except ChemoreduceError as exc:
        logger.error(str(exc))
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
