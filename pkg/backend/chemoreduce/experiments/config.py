"""
config.py

Experiment configuration: a strict pydantic schema for the JSON run files, the loader
that turns parse and validation failures into ConfigError, and the config hash stamped
on every output manifest.
"""
from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Annotated, List, Literal, Optional, Tuple, Union

from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    PositiveFloat,
    PositiveInt,
    ValidationError,
    ValidationInfo,
    field_validator,
    model_validator,
)

from chemoreduce.errors import ConfigError
from chemoreduce.numerics.dynamics import ScaleParams, initial_condition_gaussian, initial_state
from chemoreduce.numerics.model import (
    Coefficients,
    GaussianSpec,
    build_coefficients,
    load_coefficients_csv,
)
from chemoreduce.numerics.traitgrid import TraitGrid, make_grid

Fraction = Annotated[float, Field(gt=0.0, lt=1.0)]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", allow_inf_nan=False, frozen=True)


class GridSpec(_Strict):
    min: float = -2.0
    max: float = 2.0
    points: int = Field(201, ge=3)

    @model_validator(mode="after")
    def _ordered(self) -> "GridSpec":
        if not self.max > self.min:
            raise ValueError("max must exceed min")
        return self

    def build(self) -> TraitGrid:
        return make_grid(self.min, self.max, self.points)


class GaussianCoefficients(_Strict):
    """Mass-normalized Gaussian uptake kernel and supply, a(x) = 1 - x^2."""
    kind: Literal["gaussian"] = "gaussian"
    sigma_K: PositiveFloat = 0.5
    sigma_in: PositiveFloat = 0.5
    M_in: PositiveFloat = 1.0
    m: PositiveFloat = 1.0

    def spec(self) -> GaussianSpec:
        return GaussianSpec.normalized(self.sigma_K, self.sigma_in, self.M_in)


class UnnormalizedGaussianCoefficients(_Strict):
    """K = exp(-alpha (x-y)^2), R_in = exp(-beta y^2), a(x) = 1 - x^2."""
    kind: Literal["gaussian_unnormalized"]
    alpha: PositiveFloat = 1.0
    beta: float = Field(1.0, ge=0.0)
    m: PositiveFloat = 1.0

    def spec(self) -> GaussianSpec:
        return GaussianSpec.unnormalized(self.alpha, self.beta)


class CsvCoefficients(_Strict):
    """Tabulated coefficients; relative paths resolve against the config file."""
    kind: Literal["csv"]
    profile_x: Path
    profile_y: Path
    kernel: Path

    @field_validator("profile_x", "profile_y", "kernel")
    @classmethod
    def _existing(cls, value: Path, info: ValidationInfo) -> Path:
        base = (info.context or {}).get("base_dir")
        path = Path(value)
        if not path.is_absolute() and base is not None:
            path = Path(base) / path
        if not path.is_file():
            raise ValueError(f"file not found: {path}")
        return path


CoefficientSpec = Annotated[
    Union[GaussianCoefficients, UnnormalizedGaussianCoefficients, CsvCoefficients],
    Field(discriminator="kind"),
]


class ScalesSpec(_Strict):
    epsilon: float
    mu: float = 0.005

    @field_validator("epsilon")
    @classmethod
    def _positive_epsilon(cls, value: float) -> float:
        if not value > 0.0:
            raise ValueError("epsilon must be positive")
        return value

    @field_validator("mu")
    @classmethod
    def _nonnegative_mu(cls, value: float) -> float:
        if value < 0.0:
            raise ValueError("mu must be nonnegative")
        return value

    def build(self, epsilon: Optional[float] = None) -> ScaleParams:
        return ScaleParams(epsilon=self.epsilon if epsilon is None else epsilon, mu=self.mu)


class InitialSpec(_Strict):
    """Gaussian n0; R0 = resource_scale * R_in."""
    center: float = -0.8
    variance: PositiveFloat = 0.005
    mass: PositiveFloat = 1.0
    resource_scale: PositiveFloat = 1.0


class TimeSpec(_Strict):
    t_end: PositiveFloat
    dt: PositiveFloat = 0.01
    sample_every: PositiveInt = 100

    @model_validator(mode="after")
    def _dt_fits(self) -> "TimeSpec":
        if self.dt > self.t_end:
            raise ValueError("dt must not exceed t_end")
        return self


class SingleExperiment(_Strict):
    kind: Literal["single"] = "single"


class EpsilonSweep(_Strict):
    """Runs both models for each epsilon; scales.epsilon is not used."""
    kind: Literal["epsilon_sweep"]
    epsilons: List[PositiveFloat] = Field(min_length=1)

    @field_validator("epsilons")
    @classmethod
    def _strictly_decreasing(cls, values: List[float]) -> List[float]:
        if any(b >= a for a, b in zip(values, values[1:])):
            raise ValueError("epsilons must be strictly decreasing")
        return values


class SupplyArm(_Strict):
    m: PositiveFloat
    M_in: PositiveFloat

    @property
    def ratio(self) -> float:
        return self.M_in / self.m


class RatioStudy(_Strict):
    kind: Literal["ratio_study"]
    pairs: List[Tuple[SupplyArm, SupplyArm]] = Field(min_length=1)


class Branching(_Strict):
    kind: Literal["branching"]


ExperimentSpec = Annotated[
    Union[SingleExperiment, EpsilonSweep, RatioStudy, Branching],
    Field(discriminator="kind"),
]


class RunConfig(_Strict):
    """One experiment, reproducible from this file alone."""
    model: Literal["chemostat", "direct", "both"] = "both"
    grid_x: GridSpec = GridSpec()
    grid_y: GridSpec = GridSpec()
    coefficients: CoefficientSpec = GaussianCoefficients()
    scales: ScalesSpec
    initial: InitialSpec = InitialSpec()
    time: TimeSpec
    output_dir: str = "runs/default"
    experiment: ExperimentSpec = SingleExperiment()
    peak_threshold: Fraction = 0.1
    esd_tolerance: PositiveFloat = 1e-3
    lyapunov: bool = False
    notes: str = ""

    @model_validator(mode="after")
    def _experiment_fits(self) -> "RunConfig":
        kind = self.experiment.kind
        if kind == "epsilon_sweep" and self.model != "both":
            raise ValueError("epsilon_sweep compares the two models and needs model 'both'")
        if kind == "ratio_study" and self.coefficients.kind != "gaussian":
            raise ValueError("ratio_study varies m and M_in and needs gaussian coefficients")
        return self

    @property
    def models(self) -> Tuple[str, ...]:
        return ("chemostat", "direct") if self.model == "both" else (self.model,)

    def build_coefficients(self, m: Optional[float] = None, M_in: Optional[float] = None) -> Coefficients:
        """Coefficients on the configured grids; m and M_in override the gaussian supply."""
        spec = self.coefficients
        if isinstance(spec, CsvCoefficients):
            return load_coefficients_csv(spec.profile_x, spec.profile_y, spec.kernel)
        if isinstance(spec, GaussianCoefficients) and M_in is not None:
            spec = spec.model_copy(update={"M_in": M_in})
        m_const = spec.m if m is None else m
        return build_coefficients(spec.spec(), m_const, self.grid_x.build(), self.grid_y.build())

    def build_initial(self, coeffs: Coefficients):
        n0 = initial_condition_gaussian(
            self.initial.center, self.initial.variance, self.initial.mass, coeffs.grid_x
        )
        return initial_state(n0, coeffs, self.initial.resource_scale)


def _format_loc(loc: Tuple[Union[str, int], ...]) -> str:
    return ".".join(str(part) for part in loc) or "<root>"


def load_config(path: Union[str, Path]) -> RunConfig:
    """Read and validate a JSON run configuration."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    return parse_config(data, base_dir=path.resolve().parent, source=str(path))


def parse_config(data: object, base_dir: Optional[Path] = None, source: str = "<config>") -> RunConfig:
    try:
        return RunConfig.model_validate(data, context={"base_dir": base_dir})
    except ValidationError as exc:
        problems = [f"{_format_loc(err['loc'])}: {err['msg']}" for err in exc.errors()]
        raise ConfigError(f"invalid config {source}", problems) from exc


def config_hash(config: RunConfig) -> str:
    """SHA-256 of the canonical JSON dump."""
    payload = json.dumps(config.model_dump(mode="json"), sort_keys=True)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()
