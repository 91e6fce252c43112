from __future__ import annotations

import json
from pathlib import Path
from typing import NoReturn, Optional

import typer
from pydantic import ValidationError

from wilflow.bench import CASES, CaseSpec, convergence_study
from wilflow.config import RunConfig, Settings, load_run_config
from wilflow.errors import ConfigError, WilflowError
from wilflow.flow import run
from wilflow.generators import generate
from wilflow.logs import setup_logging
from wilflow.mesh import SimplicialSurface, assumption_a1
from wilflow.mesh_io import load_mesh
from wilflow.models import SolverConfig, WMode
from wilflow.paths import ensure_dir, log_path
from wilflow.sinks import DiagnosticsCsvSink, FrameSink

app = typer.Typer(help="wilflow: Willmore flow of curves and surfaces")

EXIT_RUNTIME = 1
EXIT_CONFIG = 2


def _fail(exc: Exception, code: int) -> NoReturn:
    if isinstance(exc, WilflowError):
        record = exc.as_record()
    else:
        record = {"error": type(exc).__name__, "message": str(exc), "step": None, "time": None}
    typer.echo(json.dumps(record), err=True)
    raise typer.Exit(code=code)


def _load_geometry(config: RunConfig) -> SimplicialSurface:
    if config.geometry is not None:
        mesh = generate(config.geometry)
    else:
        spec = config.mesh_file
        mesh = load_mesh(spec.path, spec.format, spec.boundary)
    if config.boundary_split:
        mesh = mesh.split_boundary_components()
    return mesh


def _unknown_parts(mesh: SimplicialSurface, solver: SolverConfig) -> str | None:
    parts = sorted({int(p) for p in mesh.boundary_parts if p >= 0})
    unknown = sorted(set(solver.boundary_conditions) - set(parts))
    if unknown:
        return f"boundary parts {unknown} do not exist; mesh has {parts}"
    return None


def _prepare(config_path: Path) -> tuple[RunConfig, SimplicialSurface, SolverConfig]:
    """Parse the config and build the mesh; every failure here exits with code 2."""
    try:
        config = load_run_config(config_path)
        solver = config.solver_config()
        solver.num_steps()
        mesh = _load_geometry(config)
    except (WilflowError, ValidationError, ValueError, OSError) as exc:
        _fail(exc, EXIT_CONFIG)
    return config, mesh, solver


@app.command("run")
def run_command(config_path: Path = typer.Argument(..., help="Run configuration file")) -> None:
    """Initialize, evolve and write diagnostics.csv plus optional VTK frames."""
    settings = Settings.from_env()
    config, mesh, solver = _prepare(config_path)
    unknown = _unknown_parts(mesh, solver)
    if unknown:
        _fail(ConfigError(unknown), EXIT_CONFIG)
    settings = config.apply_to(settings)
    output_dir = ensure_dir(config.output_dir)
    setup_logging(log_path(output_dir))
    sinks = [DiagnosticsCsvSink(output_dir)]
    if config.frame_every > 0:
        sinks.append(FrameSink(output_dir, config.frame_every))
    try:
        state, history = run(mesh, solver, sinks, settings)
    except WilflowError as exc:
        _fail(exc, EXIT_RUNTIME)
    last = history[-1]
    typer.echo(
        f"{state.step} steps to t={state.time:.6g}: energy {last.energy:.10g}, "
        f"mesh ratio {last.mesh_ratio:.4f}"
    )


@app.command()
def converge(
    case: str = typer.Argument(..., help=f"One of {', '.join(CASES)}"),
    kappa_bar: float = typer.Option(-0.5, "--kappa-bar", help="Spontaneous curvature"),
    levels: int = typer.Option(4, help="Number of refinement levels"),
    t_end: float = typer.Option(2.0, "--t-end", help="Final time"),
    base_elements: int = typer.Option(32, "--base-elements", help="Elements at level 0"),
    output: Path = typer.Option(Path("convergence.csv"), help="CSV report path"),
    md_resolution: Optional[int] = typer.Option(
        None, "--md-resolution", help="Scanlines for manifold distance"
    ),
    md_time: float = typer.Option(0.5, "--md-time", help="Time at which segment errors are taken"),
) -> None:
    """Run a refinement study and write its error/EOC table."""
    setup_logging()
    settings = Settings.from_env()
    try:
        if levels < 2:
            raise ConfigError("need ≥ 2 levels for EOC")
        spec = CaseSpec(case, kappa_bar, t_end, base_elements, md_time=md_time)
    except WilflowError as exc:
        _fail(exc, EXIT_CONFIG)
    try:
        report = convergence_study(spec, levels, settings, md_resolution)
    except WilflowError as exc:
        _fail(exc, EXIT_RUNTIME)
    report.to_csv(ensure_dir(output.parent) / output.name)
    typer.echo(report.table.to_string(index=False))


@app.command()
def validate(config_path: Path = typer.Argument(..., help="Run configuration file")) -> None:
    """Check a configuration and its mesh without running."""
    config, mesh, solver = _prepare(config_path)
    settings = config.apply_to(Settings.from_env())
    problems: list[str] = []
    if solver.w_mode == WMode.KAPPA_SQUARED and mesh.ambient_dim != 2:
        problems.append("w_mode=kappa_squared requires a curve (d = 2)")
    parts = sorted({int(p) for p in mesh.boundary_parts if p >= 0})
    unknown = _unknown_parts(mesh, solver)
    if unknown:
        problems.append(unknown)
    a1 = assumption_a1(mesh)
    if not a1:
        problems.append("assumption A1 fails: closed mesh whose vertex normals do not span space")
    if problems:
        _fail(ConfigError(problems), EXIT_CONFIG)
    assigned = mesh.with_conditions(solver.boundary_conditions)
    conditions = {p: assigned.condition(p).value for p in parts}
    typer.echo("OK")
    typer.echo(f"d={mesh.ambient_dim} J={mesh.num_simplices} K={mesh.num_vertices}")
    typer.echo(f"boundary vertices={int(mesh.boundary_mask.sum())} parts={conditions or 'empty'}")
    typer.echo(f"A1 {'satisfied' if a1 else 'violated'}; steps={solver.num_steps()}")
    typer.echo(f"md_resolution={settings.md_resolution}")


if __name__ == "__main__":  # pragma: no cover
    app()
