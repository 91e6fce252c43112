from __future__ import annotations

import logging
import os
from pathlib import Path
from typing import Dict

from pydantic import BaseModel, Field, ValidationError, model_validator

from wilflow.errors import ConfigError
from wilflow.generators import GeometrySpec
from wilflow.models import BoundaryCondition, SolverConfig, TangentialMode, WMode
from wilflow.paths import getenv_path, resolve_relative


class Settings(BaseModel):
    threads: int = Field(1, ge=1)
    dump_matrices_dir: Path | None = None
    md_resolution: int = Field(2048, ge=16)

    model_config = {"extra": "ignore"}

    @classmethod
    def from_env(cls) -> "Settings":
        env = os.environ
        try:
            return cls(
                threads=max(1, _parse_int(env.get("WILFLOW_THREADS"), default=1)),
                dump_matrices_dir=getenv_path("WILFLOW_DUMP_MATRICES"),
                md_resolution=_parse_int(env.get("WILFLOW_MD_RESOLUTION"), default=2048),
            )
        except ValidationError as exc:
            raise RuntimeError(f"Invalid wilflow settings: {exc}") from exc


def _parse_int(value: str | None, default: int) -> int:
    if value is None or value == "":
        return default
    try:
        return int(value)
    except ValueError:
        return default


def log_level_from_env(default: int = logging.INFO) -> int:
    level_name = os.environ.get("WILFLOW_LOG_LEVEL")
    if level_name is None or level_name.strip() == "":
        return default

    level_value = level_name.strip()
    if level_value.isdigit():
        return int(level_value)

    resolved = logging.getLevelName(level_value.upper())
    return resolved if isinstance(resolved, int) else default


class MeshFileSpec(BaseModel):
    path: Path
    format: str | None = None
    boundary: Path | None = None

    model_config = {"extra": "forbid"}


class RunConfig(BaseModel):
    """A parsed run configuration file."""

    geometry: GeometrySpec | None = None
    mesh_file: MeshFileSpec | None = None
    kappa_bar: float = 0.0
    dt: float = Field(gt=0.0)
    t_end: float = Field(ge=0.0)
    tangential_mode: TangentialMode = TangentialMode.BGN
    w_mode: WMode = WMode.VERTEX_NORMAL
    boundary_assignment: Dict[int, BoundaryCondition] = Field(default_factory=dict)
    boundary_split: bool = False
    analytic_sphere_radius: float | None = Field(None, gt=0.0)
    output_dir: Path = Path("output")
    frame_every: int = Field(0, ge=0)
    solver_tol: float = Field(1e-10, gt=0.0)
    md_resolution: int | None = Field(None, ge=16)
    check_stability: bool = True

    model_config = {"extra": "forbid"}

    @model_validator(mode="after")
    def _check_geometry(self) -> "RunConfig":
        if (self.geometry is None) == (self.mesh_file is None):
            raise ValueError("exactly one of a generator or geometry = file is required")
        if self.t_end != 0.0 and self.t_end < self.dt:
            raise ValueError(f"t_end={self.t_end} must be 0 or at least dt={self.dt}")
        return self

    def apply_to(self, settings: Settings) -> Settings:
        """Settings with the file's overrides (md_resolution) applied."""
        if self.md_resolution is None:
            return settings
        return settings.model_copy(update={"md_resolution": self.md_resolution})

    def solver_config(self) -> SolverConfig:
        return SolverConfig(
            kappa_bar=self.kappa_bar,
            dt=self.dt,
            t_end=self.t_end,
            tangential_mode=self.tangential_mode,
            w_mode=self.w_mode,
            boundary_conditions=self.boundary_assignment,
            analytic_sphere_radius=self.analytic_sphere_radius,
            solver_tol=self.solver_tol,
            frame_every=self.frame_every,
            check_stability=self.check_stability,
        )


def parse_key_values(text: str) -> dict[str, str]:
    """Parse `key = value` lines; `#` starts a comment."""
    entries: dict[str, str] = {}
    problems: list[str] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            problems.append(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
            continue
        key, value = (part.strip() for part in line.split("=", 1))
        if not key or not value:
            problems.append(f"line {lineno}: empty key or value")
            continue
        if key in entries:
            problems.append(f"line {lineno}: duplicate key {key!r}")
            continue
        entries[key] = value
    if problems:
        raise ConfigError(problems)
    return entries


def _nest(entries: dict[str, str]) -> tuple[dict[str, object], list[str]]:
    raw: dict[str, object] = {}
    problems: list[str] = []
    kind = entries.get("geometry")
    params: dict[str, str] = {}
    mesh_file: dict[str, str] = {}
    assignment: dict[str, str] = {}
    for key, value in entries.items():
        if key == "geometry":
            continue
        parts = key.split(".")
        if parts[0] == "geometry":
            if len(parts) != 3:
                problems.append(f"malformed geometry key {key!r}")
            elif parts[1] == "file":
                mesh_file[parts[2]] = value
            elif parts[1] != kind:
                problems.append(f"key {key!r} does not belong to geometry {kind!r}")
            else:
                params[parts[2]] = value
        elif parts[0] == "boundary":
            if len(parts) != 2:
                problems.append(f"malformed boundary key {key!r}")
            elif parts[1] == "split":
                raw["boundary_split"] = value
            else:
                assignment[parts[1]] = value
        else:
            raw[key] = value
    if kind is None:
        problems.append("missing required key 'geometry'")
    elif kind == "file":
        raw["mesh_file"] = mesh_file
    else:
        if mesh_file:
            problems.append("geometry.file.* keys require geometry = file")
        raw["geometry"] = {"kind": kind, "params": params}
    if assignment:
        raw["boundary_assignment"] = assignment
    return raw, problems


def load_run_config(path: Path) -> RunConfig:
    """Read, validate and path-resolve a run configuration file."""
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    entries = parse_key_values(path.read_text(encoding="utf-8"))
    raw, problems = _nest(entries)
    try:
        config = RunConfig.model_validate(raw)
    except ValidationError as exc:
        for error in exc.errors():
            location = ".".join(str(item) for item in error["loc"]) or "config"
            problems.append(f"{location}: {error['msg']}")
        raise ConfigError(problems) from exc
    if problems:
        raise ConfigError(problems)

    base = path.parent
    update: dict[str, object] = {"output_dir": resolve_relative(config.output_dir, base)}
    if config.mesh_file is not None:
        mesh_path = resolve_relative(config.mesh_file.path, base)
        boundary = (
            resolve_relative(config.mesh_file.boundary, base)
            if config.mesh_file.boundary is not None
            else None
        )
        missing = [p for p in (mesh_path, boundary) if p is not None and not p.exists()]
        if missing:
            raise ConfigError([f"file not found: {p}" for p in missing])
        update["mesh_file"] = config.mesh_file.model_copy(
            update={"path": mesh_path, "boundary": boundary}
        )
    return config.model_copy(update=update)
