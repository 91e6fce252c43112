from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np
import pandas as pd

from wilflow.mesh_io import save_mesh
from wilflow.models import StepDiagnostics
from wilflow.paths import diagnostics_path, ensure_dir, frame_path

if TYPE_CHECKING:
    from wilflow.flow import FlowState

logger = logging.getLogger("wilflow.sinks")

DIAGNOSTICS_COLUMNS = [f.name for f in fields(StepDiagnostics)]


def _cell(value: float | int) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return format(float(value), ".17g")


class DiagnosticsCsvSink:
    """Streams one CSV row per step; full precision so the slack is auditable."""

    def __init__(self, output_dir: Path):
        self.path = diagnostics_path(ensure_dir(output_dir))
        self._fp = self.path.open("w", encoding="utf-8", newline="")
        self._writer = csv.writer(self._fp, lineterminator="\n")
        self._writer.writerow(DIAGNOSTICS_COLUMNS)

    def on_step(self, state: "FlowState", diagnostics: StepDiagnostics) -> None:
        row = diagnostics.as_row()
        self._writer.writerow([_cell(row[name]) for name in DIAGNOSTICS_COLUMNS])
        self._fp.flush()

    def close(self) -> None:
        if not self._fp.closed:
            self._fp.close()


def read_diagnostics(path: Path) -> pd.DataFrame:
    return pd.read_csv(path, dtype={"step": np.int64}, float_precision="round_trip")


class FrameSink:
    """Writes `frame_{step}.vtk` every `every` steps, carrying ϰ as point data."""

    def __init__(self, output_dir: Path, every: int):
        self.output_dir = ensure_dir(output_dir)
        self.every = every
        self.written: list[Path] = []

    def on_step(self, state: "FlowState", diagnostics: StepDiagnostics) -> None:
        if self.every <= 0 or state.step % self.every:
            return
        path = frame_path(self.output_dir, state.step)
        save_mesh(state.mesh, path, "vtk", point_data={"curvature": state.curvature})
        self.written.append(path)
        logger.debug("wrote frame %s", path)

    def close(self) -> None:
        pass


@dataclass
class HistorySink:
    """Keeps every state's positions and curvature fields in memory."""

    times: list[float] = field(default_factory=list)
    positions: list[np.ndarray] = field(default_factory=list)
    curvature: list[np.ndarray] = field(default_factory=list)
    kappa: list[np.ndarray] = field(default_factory=list)
    diagnostics: list[StepDiagnostics] = field(default_factory=list)

    def on_step(self, state: "FlowState", diagnostics: StepDiagnostics) -> None:
        self.times.append(state.time)
        self.positions.append(np.array(state.mesh.vertices))
        self.curvature.append(np.array(state.curvature))
        self.kappa.append(np.array(state.kappa))
        self.diagnostics.append(diagnostics)

    def close(self) -> None:
        pass
