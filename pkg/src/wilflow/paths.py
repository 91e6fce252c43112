from __future__ import annotations

import os
from pathlib import Path

DIAGNOSTICS_NAME = "diagnostics.csv"
LOG_NAME = "wilflow.log"


def diagnostics_path(output_dir: Path) -> Path:
    return output_dir / DIAGNOSTICS_NAME


def frame_path(output_dir: Path, step: int) -> Path:
    return output_dir / f"frame_{step}.vtk"


def log_path(output_dir: Path) -> Path:
    return output_dir / LOG_NAME


def sidecar_path(mesh_path: Path) -> Path:
    """Boundary-label file stored next to a mesh file."""
    return mesh_path.with_suffix(".bnd")


def ensure_dir(path: Path) -> Path:
    path.mkdir(parents=True, exist_ok=True)
    return path


def resolve_relative(path: Path, base: Path) -> Path:
    path = path.expanduser()
    if path.is_absolute():
        return path
    return base / path


def getenv_path(key: str) -> Path | None:
    value = os.environ.get(key)
    if value:
        return Path(value).expanduser()
    return None
