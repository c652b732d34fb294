"""
outputs.py

CSV and manifest emission for experiment results. Files are overwritten in place and
floats are written at full precision, so re-reading a CSV gives back the same numbers.

With both models in one run, chemostat tables use the plain names and direct model
tables carry a `_direct` suffix.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np
import pandas as pd

from chemoreduce.errors import OutputError
from chemoreduce.experiments.workflows import ExperimentResult, SweepRow
from chemoreduce.logging_config import get_logger
from chemoreduce.numerics.dynamics import Trajectory
from chemoreduce.numerics.diagnostics import ESDReport
from chemoreduce.numerics.model import ReducedKernel, write_kernel_csv

logger = get_logger("outputs")

PathLike = Union[str, Path]

MANIFEST = "manifest.json"
TIMESERIES_COLUMNS = ["t", "mass", "resource_gap", "S_cr", "S_dc", "max_u"]


def _prepare_dir(out_dir: PathLike) -> Path:
    path = Path(out_dir)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OutputError(f"cannot create output directory ({exc.strerror})", str(path)) from exc
    return path


def _write_frame(frame: pd.DataFrame, path: Path) -> Path:
    try:
        frame.to_csv(path, index=False, lineterminator="\n")
    except OSError as exc:
        raise OutputError(f"cannot write ({exc.strerror})", str(path)) from exc
    logger.debug(f"wrote {path}")
    return path


def read_table(path: PathLike) -> pd.DataFrame:
    """Read back a CSV written here with exact float round trip."""
    return pd.read_csv(path, float_precision="round_trip")


def _suffix(model: str, models: List[str]) -> str:
    return "_direct" if model == "direct" and len(models) > 1 else ""


def timeseries_frame(trajectory: Trajectory) -> pd.DataFrame:
    columns = {name: trajectory.series(name) for name in TIMESERIES_COLUMNS[1:]}
    return pd.DataFrame({"t": trajectory.times_array(), **columns}, columns=TIMESERIES_COLUMNS)


def heatmap_frame(trajectory: Trajectory) -> pd.DataFrame:
    """Header row: "t" then the x nodes; one row per sample: t then n."""
    header = ["t"] + [repr(float(x)) for x in trajectory.grid_x.nodes]
    data = np.column_stack([trajectory.times_array(), trajectory.densities()])
    return pd.DataFrame(data, columns=header)


def final_density_frame(trajectories: Dict[str, Trajectory]) -> pd.DataFrame:
    first = next(iter(trajectories.values()))
    columns: Dict[str, np.ndarray] = {"x": first.grid_x.nodes}
    for label, trajectory in trajectories.items():
        columns[f"n_{label}".replace(" ", "_")] = trajectory.final.n
    return pd.DataFrame(columns)


def sweep_frame(rows: List[SweepRow]) -> pd.DataFrame:
    return pd.DataFrame([row.as_dict() for row in rows], columns=list(SweepRow.FIELDS))


def esd_frame(reports: List[ESDReport]) -> pd.DataFrame:
    return pd.DataFrame([r.to_csv_row() for r in reports])


def emit_outputs(result: ExperimentResult, out_dir: Optional[PathLike] = None) -> List[Path]:
    """Write every table the experiment produced, then the manifest. Returns all paths."""
    root = _prepare_dir(out_dir if out_dir is not None else result.config.output_dir)
    written: List[Path] = []
    models = [m for m in ("chemostat", "direct") if m in result.trajectories]

    if result.kind == "epsilon_sweep":
        written.append(_write_frame(sweep_frame(result.sweep_rows), root / "sweep.csv"))

    for model in models:
        trajectory = result.trajectories[model]
        sfx = _suffix(model, models)
        written.append(_write_frame(timeseries_frame(trajectory), root / f"timeseries{sfx}.csv"))
        written.append(_write_frame(heatmap_frame(trajectory), root / f"density_heatmap{sfx}.csv"))

    if result.trajectories:
        written.append(
            _write_frame(final_density_frame(result.trajectories), root / "final_density.csv")
        )

    if result.comparison is not None:
        written.append(
            _write_frame(pd.DataFrame([result.comparison.as_row()]), root / "comparison.csv")
        )

    if result.esd_reports:
        written.append(_write_frame(esd_frame(result.esd_reports), root / "esd_report.csv"))

    if result.ratio_pairs:
        frame = pd.DataFrame([p.as_row() for p in result.ratio_pairs])
        written.append(_write_frame(frame, root / "ratio_study.csv"))

    if result.branching:
        frame = pd.concat(
            [
                pd.DataFrame({"model": b.model, "t": b.times, "peak_count": b.peak_counts})
                for b in result.branching
            ],
            ignore_index=True,
        )
        written.append(_write_frame(frame, root / "branching.csv"))

    written.append(write_manifest(result, root, written))
    logger.info(f"wrote {len(written)} files to {root}")
    return written


def _summary(result: ExperimentResult) -> Dict[str, object]:
    summary: Dict[str, object] = {}
    if result.comparison is not None:
        row = result.comparison.as_row()
        summary["comparison"] = {k: row[k] for k in sorted(row)}
    if result.branching:
        summary["branching"] = {
            b.model: {
                "final_peak_count": b.final_count,
                "first_dimorphic_time": b.first_dimorphic_time,
                "final_peak_locations": list(b.final_peak_locations),
            }
            for b in result.branching
        }
    if result.esd_reports:
        summary["esd_passed"] = {r.model: r.passed for r in result.esd_reports}
    return summary


def write_manifest(result: ExperimentResult, root: Path, artifacts: List[Path]) -> Path:
    """Artifact names, config hash and deterministic summary numbers; no timings."""
    manifest = {
        "config_hash": result.config_hash,
        "experiment": result.kind,
        "artifacts": sorted(p.name for p in artifacts),
        "summary": _summary(result),
    }
    path = root / MANIFEST
    try:
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as exc:
        raise OutputError(f"cannot write manifest ({exc.strerror})", str(path)) from exc
    return path


def emit_kernel(rk: ReducedKernel, path: PathLike) -> Path:
    """c matrix with x nodes on both axes."""
    path = Path(path)
    if path.parent != Path(""):
        _prepare_dir(path.parent)
    try:
        write_kernel_csv(rk.c, rk.grid_x.nodes, rk.grid_x.nodes, path)
    except OSError as exc:
        raise OutputError(f"cannot write kernel ({exc.strerror})", str(path)) from exc
    logger.info(f"wrote reduced kernel {rk.c.shape} to {path}")
    return path
