"""Two-stage energy-stable stepping for Willmore flow.

Stage 1 solves for the normal velocity V and the transported curvature ϰ,
stage 2 moves the vertices (BGN or minimal-deformation-rate tangential
motion) and returns the curvature multiplier κ.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Iterable, Protocol, Sequence

import numpy as np
from scipy import sparse

from wilflow.config import Settings
from wilflow.errors import InvalidSpec, SingularMatrix, StabilityViolation, WilflowError
from wilflow.fem import (
    DofMap,
    Field,
    SparseLinearSystem,
    assemble_antisym,
    assemble_mass,
    assemble_normal_coupling_lumped,
    assemble_stiffness,
    assemble_weighted_mass,
    eliminate_dirichlet,
    solve_sparse,
)
from wilflow.mesh import (
    ElementField,
    FloatArray,
    NodalField,
    SimplicialSurface,
    assumption_a1,
    mesh_ratio,
    min_element,
    normalized_vertex_normals,
    w_field,
)
from wilflow.models import BoundaryCondition, SolverConfig, StepDiagnostics, TangentialMode, WMode

logger = logging.getLogger("wilflow.flow")


@dataclass(frozen=True)
class FlowState:
    """Γ^m, Γ^{m-1}, ϰ^m carried to Γ^m, the multiplier κ^m and the step counter."""

    mesh: SimplicialSurface
    previous: SimplicialSurface
    curvature: FloatArray
    kappa: FloatArray
    step: int = 0
    time: float = 0.0
    initial_energy: float = 0.0


class FlowSink(Protocol):
    def on_step(self, state: FlowState, diagnostics: StepDiagnostics) -> None: ...

    def close(self) -> None: ...


def _navier_vertices(mesh: SimplicialSurface) -> np.ndarray:
    return mesh.vertices_with_condition(BoundaryCondition.NAVIER)


def _boundary_vertices(mesh: SimplicialSurface) -> np.ndarray:
    return np.flatnonzero(mesh.boundary_mask)


def _dump_dir(settings: Settings | None):
    return settings.dump_matrices_dir if settings is not None else None


def energy(mesh: SimplicialSurface, curvature: np.ndarray, kappa_bar: float) -> float:
    """½‖ϰ - κ̄‖² on `mesh` with the exact inner product."""
    psi = np.asarray(curvature) - kappa_bar
    return 0.5 * float(psi @ (assemble_mass(mesh) @ psi))


def discrete_velocity(state: FlowState, dt: float) -> FloatArray:
    """(id_{Γ^m} - id_{Γ^{m-1}}) / Δt at the vertices; zero at step 0."""
    return (state.mesh.vertices - state.previous.vertices) / dt


def sqrt_jacobian(state: FlowState) -> ElementField:
    return ElementField(np.sqrt(state.previous.measures / state.mesh.measures))


def w_coefficients(state: FlowState, config: SolverConfig) -> tuple[Field, ...]:
    """Coefficient fields whose product is 𝒲^m."""
    if config.w_mode == WMode.KAPPA_SQUARED:
        if state.mesh.ambient_dim != 2:
            raise InvalidSpec("w_mode=kappa_squared is only available for curves")
        return (NodalField(state.curvature), NodalField(state.curvature))
    return (w_field(state.mesh, normalized_vertex_normals(state.mesh)),)


def stage1_solve(
    state: FlowState,
    w: Sequence[Field],
    sqrt_j: ElementField,
    config: SolverConfig,
    settings: Settings | None = None,
) -> tuple[FloatArray, FloatArray]:
    """Solve for (V^{m+1}, ϰ^{m+1}); V vanishes on the boundary, ϰ = κ̄ on Navier parts."""
    mesh = state.mesh
    k = mesh.num_vertices
    dt = config.dt
    kappa_bar = config.kappa_bar
    psi_m = state.curvature - kappa_bar

    mass = assemble_mass(mesh)
    stiff = assemble_stiffness(mesh)
    m_w = assemble_weighted_mass(mesh, w)
    m_q = assemble_weighted_mass(mesh, (NodalField(psi_m), NodalField(state.curvature)))
    antisym = assemble_antisym(mesh, discrete_velocity(state, dt))
    m_j = assemble_weighted_mass(mesh, (sqrt_j,))

    bending = -stiff + m_w - 0.5 * m_q
    matrix = sparse.bmat(
        [[mass, bending], [-dt * bending, mass - 0.5 * dt * antisym]], format="csr"
    )
    rhs = np.concatenate([np.zeros(k), m_j @ psi_m])
    dofs = DofMap.of(("velocity", k, 1), ("curvature", k, 1))
    constraints = [("velocity", q, 0.0) for q in _boundary_vertices(mesh)]
    constraints += [("curvature", q, 0.0) for q in _navier_vertices(mesh)]
    system = eliminate_dirichlet(SparseLinearSystem.full(matrix, rhs, dofs), constraints)
    solution = system.expand(
        solve_sparse(system, config.solver_tol, _dump_dir(settings), f"stage1_{state.step:06d}")
    )
    return solution[:k], solution[k:] + kappa_bar


def _stage2(
    mesh: SimplicialSurface,
    velocity: np.ndarray,
    dt: float,
    mode: TangentialMode,
    kappa_bar: float,
    tol: float,
    settings: Settings | None,
    label: str,
) -> tuple[FloatArray, FloatArray]:
    k = mesh.num_vertices
    d = mesh.ambient_dim
    stiff = sparse.kron(assemble_stiffness(mesh), sparse.identity(d), format="csr")
    coupling = assemble_normal_coupling_lumped(mesh)
    identity = mesh.vertices.ravel()
    if mode == TangentialMode.BGN:
        top_left = stiff
        top_rhs = -(stiff @ identity)
    else:
        top_left = stiff / dt
        top_rhs = np.zeros(k * d)
    matrix = sparse.bmat([[top_left, coupling.T], [coupling, None]], format="csr")
    rhs = np.concatenate([top_rhs, dt * (assemble_mass(mesh) @ velocity)])
    dofs = DofMap.of(("position", k, d), ("kappa", k, 1))
    boundary = _boundary_vertices(mesh)
    constraints = [("position", q, np.zeros(d)) for q in boundary]
    constraints += [("kappa", q, kappa_bar) for q in boundary]
    system = eliminate_dirichlet(SparseLinearSystem.full(matrix, rhs, dofs), constraints)
    try:
        reduced = solve_sparse(system, tol, _dump_dir(settings), label)
    except SingularMatrix as exc:
        verdict = "holds" if assumption_a1(mesh) else "fails"
        raise SingularMatrix(f"{exc.message}; assumption A1 {verdict}") from exc
    solution = system.expand(reduced)
    displacement = solution[: k * d].reshape(k, d)
    return mesh.vertices + displacement, solution[k * d :]


def stage2_solve(
    state: FlowState,
    velocity: np.ndarray,
    config: SolverConfig,
    settings: Settings | None = None,
) -> tuple[FloatArray, FloatArray]:
    """Solve for (X^{m+1}, κ^{m+1}); X fixes the boundary and κ = κ̄ there."""
    return _stage2(
        state.mesh,
        velocity,
        config.dt,
        config.tangential_mode,
        config.kappa_bar,
        config.solver_tol,
        settings,
        f"stage2_{state.step:06d}",
    )


def initialize(
    mesh: SimplicialSurface, config: SolverConfig, settings: Settings | None = None
) -> FlowState:
    """Build Γ⁰ and ϰ⁰, analytically for spheres or by the zero-velocity BGN solve."""
    mesh = mesh.with_conditions(config.boundary_conditions)
    if config.w_mode == WMode.KAPPA_SQUARED and mesh.ambient_dim != 2:
        raise InvalidSpec("w_mode=kappa_squared is only available for curves")
    kappa_bar = config.kappa_bar
    if config.analytic_sphere_radius is not None:
        radius = config.analytic_sphere_radius
        curvature = np.full(mesh.num_vertices, -(mesh.ambient_dim - 1) / radius)
        curvature[_navier_vertices(mesh)] = kappa_bar
        kappa = curvature.copy()
        kappa[_boundary_vertices(mesh)] = kappa_bar
        start = mesh
    else:
        positions, kappa = _stage2(
            mesh,
            np.zeros(mesh.num_vertices),
            1.0,
            TangentialMode.BGN,
            kappa_bar,
            config.solver_tol,
            settings,
            "initial",
        )
        start = mesh.with_vertices(positions)
        curvature = kappa.copy()
    e0 = energy(start, curvature, kappa_bar)
    logger.info(
        "initialized %s start: %d vertices, %d simplices, energy %.6g",
        "analytic" if config.analytic_sphere_radius is not None else "discrete",
        start.num_vertices,
        start.num_simplices,
        e0,
    )
    return FlowState(start, start, curvature, kappa, 0, 0.0, e0)


def initial_diagnostics(state: FlowState) -> StepDiagnostics:
    return StepDiagnostics(
        step=state.step,
        time=state.time,
        energy=state.initial_energy,
        dissipation=0.0,
        mesh_ratio=mesh_ratio(state.mesh),
        min_element=min_element(state.mesh),
        stability_slack=0.0,
    )


def stability_tolerance(state: FlowState, config: SolverConfig) -> float:
    return config.stability_factor * max(1.0, state.initial_energy)


def step(
    state: FlowState, config: SolverConfig, settings: Settings | None = None
) -> tuple[FlowState, StepDiagnostics]:
    """Advance one time step and check the discrete energy inequality."""
    next_step = state.step + 1
    next_time = next_step * config.dt
    try:
        kappa_bar = config.kappa_bar
        w = w_coefficients(state, config)
        velocity, curvature = stage1_solve(state, w, sqrt_jacobian(state), config, settings)
        positions, kappa = stage2_solve(state, velocity, config, settings)
        new_mesh = state.mesh.with_vertices(positions)

        mass = assemble_mass(state.mesh)
        psi = curvature - kappa_bar
        new_energy = 0.5 * float(psi @ (mass @ psi))
        old_energy = energy(state.previous, state.curvature, kappa_bar)
        dissipation = config.dt * float(velocity @ (mass @ velocity))
        slack = old_energy - new_energy - dissipation
        diagnostics = StepDiagnostics(
            step=next_step,
            time=next_time,
            energy=new_energy,
            dissipation=dissipation,
            mesh_ratio=mesh_ratio(new_mesh),
            min_element=min_element(new_mesh),
            stability_slack=slack,
        )
        tolerance = stability_tolerance(state, config)
        if config.check_stability and slack < -tolerance:
            raise StabilityViolation(slack, tolerance)
    except WilflowError as exc:
        exc.with_context(next_step, next_time)
        raise

    logger.debug(
        "step %d t=%.6g energy=%.12g slack=%.3e ratio=%.4f",
        next_step,
        next_time,
        new_energy,
        slack,
        diagnostics.mesh_ratio,
    )
    new_state = replace(
        state,
        mesh=new_mesh,
        previous=state.mesh,
        curvature=curvature,
        kappa=kappa,
        step=next_step,
        time=next_time,
    )
    return new_state, diagnostics


def run(
    initial_mesh: SimplicialSurface,
    config: SolverConfig,
    sinks: Iterable[FlowSink] = (),
    settings: Settings | None = None,
) -> tuple[FlowState, list[StepDiagnostics]]:
    """Initialize, take round(T/Δt) steps and stream every state to the sinks."""
    sinks = list(sinks)
    steps = config.num_steps()
    state = initialize(initial_mesh, config, settings)
    history = [initial_diagnostics(state)]
    try:
        for sink in sinks:
            sink.on_step(state, history[0])
        for _ in range(steps):
            state, diagnostics = step(state, config, settings)
            history.append(diagnostics)
            for sink in sinks:
                sink.on_step(state, diagnostics)
    finally:
        for sink in sinks:
            sink.close()
    logger.info(
        "finished %d steps at t=%.6g: energy %.12g, mesh ratio %.4f",
        steps,
        state.time,
        history[-1].energy,
        history[-1].mesh_ratio,
    )
    return state, history
