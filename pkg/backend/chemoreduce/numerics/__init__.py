"""Numerical core: trait grids, model coefficients, time stepping and diagnostics."""

from chemoreduce.numerics.traitgrid import TraitGrid, integrate, make_grid, point_grid
from chemoreduce.numerics.model import (
    Coefficients,
    GaussianSpec,
    ReducedKernel,
    build_coefficients,
    build_gaussian_coefficients,
    closed_form_reduced,
    reduce_kernel,
    translation_invariance_defect,
)
from chemoreduce.numerics.dynamics import (
    ScaleParams,
    State,
    Trajectory,
    initial_condition_gaussian,
    run,
    step_chemostat,
    step_direct,
)

__all__ = [
    "TraitGrid",
    "integrate",
    "make_grid",
    "point_grid",
    "Coefficients",
    "GaussianSpec",
    "ReducedKernel",
    "build_coefficients",
    "build_gaussian_coefficients",
    "closed_form_reduced",
    "reduce_kernel",
    "translation_invariance_defect",
    "ScaleParams",
    "State",
    "Trajectory",
    "initial_condition_gaussian",
    "run",
    "step_chemostat",
    "step_direct",
]
