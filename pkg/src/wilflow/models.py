from __future__ import annotations

from dataclasses import asdict, dataclass
from enum import Enum
from typing import Dict

from pydantic import BaseModel, Field, model_validator


class BoundaryCondition(str, Enum):
    NAVIER = "navier"
    CLAMPED = "clamped"


class TangentialMode(str, Enum):
    BGN = "bgn"
    MDR = "mdr"


class WMode(str, Enum):
    VERTEX_NORMAL = "vertex_normal"
    KAPPA_SQUARED = "kappa_squared"


class SolverConfig(BaseModel):
    """Parameters of one flow run."""

    kappa_bar: float = 0.0
    dt: float = Field(1e-3, gt=0.0)
    t_end: float = Field(0.0, ge=0.0)
    tangential_mode: TangentialMode = TangentialMode.BGN
    w_mode: WMode = WMode.VERTEX_NORMAL
    boundary_conditions: Dict[int, BoundaryCondition] = Field(default_factory=dict)
    analytic_sphere_radius: float | None = Field(None, gt=0.0)
    solver_tol: float = Field(1e-10, gt=0.0)
    frame_every: int = Field(0, ge=0)
    check_stability: bool = True
    stability_factor: float = Field(1e-9, gt=0.0)

    model_config = {"extra": "forbid", "frozen": True}

    @model_validator(mode="after")
    def _check_horizon(self) -> "SolverConfig":
        if self.t_end != 0.0 and self.t_end < self.dt:
            raise ValueError(f"t_end={self.t_end} must be 0 or at least dt={self.dt}")
        return self

    def num_steps(self) -> int:
        steps = round(self.t_end / self.dt)
        if abs(steps * self.dt - self.t_end) > 1e-9 * max(1.0, self.t_end):
            raise ValueError(f"t_end={self.t_end} is not a multiple of dt={self.dt}")
        return steps


@dataclass(frozen=True)
class StepDiagnostics:
    step: int
    time: float
    energy: float
    dissipation: float
    mesh_ratio: float
    min_element: float
    stability_slack: float

    def as_row(self) -> dict[str, float | int]:
        return asdict(self)
