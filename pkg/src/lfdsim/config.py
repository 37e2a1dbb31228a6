"""Run configuration: YAML schema, validation and initial conditions."""
from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Annotated, Literal, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .equilibrium import evaluate_equilibrium, fit_fermi_dirac
from .grid import VelocityGrid, make_grid
from .stepper import StepConfig

Vec3 = tuple[float, float, float]


class ConfigError(ValueError):
    """Invalid configuration; ``path`` is the dotted location of the bad field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class GridSpec(_Strict):
    L: float = Field(8.0, gt=0)
    N: int = Field(32, ge=8)
    eps: float = Field(1.0, ge=0)

    @field_validator("N")
    @classmethod
    def _even(cls, v):
        if v % 2:
            raise ValueError("N must be even")
        return v


class BumpSpec(_Strict):
    center: Vec3 = (1.0, 0.0, 0.0)
    width: float = Field(1.0, gt=0)


class EquilibriumIC(_Strict):
    kind: Literal["equilibrium"]
    rho: float = Field(1.0, gt=0)
    p: Vec3 = (0.0, 0.0, 0.0)
    E: float = Field(1.5, gt=0)


class PerturbedIC(_Strict):
    kind: Literal["perturbed_equilibrium"]
    rho: float = Field(1.0, gt=0)
    p: Vec3 = (0.0, 0.0, 0.0)
    E: float = Field(1.5, gt=0)
    amplitude: float = 0.05
    bump: BumpSpec = BumpSpec()
    noise: float = Field(0.0, ge=0)  # relative seeded noise on M


class BallIC(_Strict):
    kind: Literal["ball"]
    R: float = Field(1.0, gt=0)
    center: Vec3 = (0.0, 0.0, 0.0)
    height: float = Field(0.5, gt=0)


class GaussianComponent(_Strict):
    weight: float = Field(gt=0)
    center: Vec3 = (0.0, 0.0, 0.0)
    temperature: float = Field(1.0, gt=0)


class MixtureIC(_Strict):
    kind: Literal["gaussian_mixture"]
    components: list[GaussianComponent] = Field(min_length=1)


InitialSpec = Annotated[
    Union[EquilibriumIC, PerturbedIC, BallIC, MixtureIC], Field(discriminator="kind")
]


class StepperSpec(_Strict):
    tau: float | None = Field(None, gt=0)
    delta1: float = Field(0.0, ge=0)
    delta2: float = Field(0.0, ge=0)
    m_loc: float = Field(0.5, gt=0, lt=1)
    picard_tol: float = Field(1e-11, gt=0)
    picard_max: int = Field(50, ge=1)
    lin_tol: float = Field(1e-11, gt=0)
    lin_max: int = Field(5000, ge=1)
    bound_limiter: bool = True

    def to_step_config(self) -> StepConfig:
        return StepConfig(**self.model_dump())


class OutputSpec(_Strict):
    dir: str = "out"
    csv: str = "diagnostics.csv"
    summary: str = "summary.json"
    checkpoint_every: int = Field(0, ge=0)


class CheckSpec(_Strict):
    """Tolerances of the invariant suites printed after a run."""

    entropy_slack: float = Field(1e-10, ge=0)
    entropy_slack_tau_h2: float = Field(0.0, ge=0)
    stationarity: float = Field(1e-2, gt=0)
    bound_factor: float = Field(10.0, gt=0)
    decay_t0: float = Field(1.0, ge=0)


class RunConfig(_Strict):
    grid: GridSpec = GridSpec()
    initial: InitialSpec
    stepper: StepperSpec = StepperSpec()
    T_final: float = Field(gt=0)
    cadence: int = Field(0, ge=0)
    seed: int = 0
    output: OutputSpec = OutputSpec()
    checks: CheckSpec = CheckSpec()

    def make_grid(self) -> VelocityGrid:
        return make_grid(self.grid.L, self.grid.N, self.grid.eps)

    def canonical_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        """sha256 of the canonical JSON form; output paths are excluded."""
        data = self.model_dump(mode="json")
        data.pop("output")
        text = json.dumps(data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.model_dump(mode="json"), sort_keys=False)


def _dotted(loc) -> str:
    # drop the discriminator tag pydantic inserts for tagged unions
    parts = [str(p) for p in loc]
    if len(parts) > 1 and parts[0] == "initial" and parts[1] in {
        "equilibrium",
        "perturbed_equilibrium",
        "ball",
        "gaussian_mixture",
    }:
        parts.pop(1)
    return ".".join(parts)


def parse_config(data) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("", "configuration must be a mapping")
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        err = exc.errors()[0]
        raise ConfigError(_dotted(err["loc"]), err["msg"]) from None


def load_config(path: str | Path) -> RunConfig:
    try:
        data = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise ConfigError("", f"cannot parse YAML: {exc}") from None
    return parse_config(data)


# --- initial conditions -------------------------------------------------------


def _shifted(grid: VelocityGrid, center) -> np.ndarray:
    c = np.asarray(center, dtype=float)
    v = grid.nodes - c[:, None, None, None]
    return v[0] ** 2 + v[1] ** 2 + v[2] ** 2


def initial_field(cfg: RunConfig, grid: VelocityGrid | None = None) -> np.ndarray:
    grid = grid or cfg.make_grid()
    ic = cfg.initial
    bound = grid.pauli_bound
    if isinstance(ic, (EquilibriumIC, PerturbedIC)):
        M = evaluate_equilibrium(fit_fermi_dirac(ic.rho, ic.p, ic.E, grid.eps), grid)
        if isinstance(ic, EquilibriumIC):
            return M
        bump = np.exp(-_shifted(grid, ic.bump.center) / (2.0 * ic.bump.width**2))
        f = M + ic.amplitude * bump
        if ic.noise > 0:
            rng = np.random.default_rng(cfg.seed)
            f = f + ic.noise * M * rng.uniform(-1.0, 1.0, grid.shape)
        return np.clip(f, 0.0, bound)
    if isinstance(ic, BallIC):
        if ic.height > bound:
            raise ConfigError("initial.height", f"exceeds the Pauli bound 1/eps = {bound}")
        return np.where(_shifted(grid, ic.center) <= ic.R**2, ic.height, 0.0)
    f = np.zeros(grid.shape)
    for comp in ic.components:
        T = comp.temperature
        f += comp.weight * (2 * np.pi * T) ** -1.5 * np.exp(-_shifted(grid, comp.center) / (2 * T))
    if np.max(f) > bound:
        raise ConfigError(
            "initial.components", f"mixture peak {np.max(f):.4g} exceeds the Pauli bound {bound}"
        )
    return f
