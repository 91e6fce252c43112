"""P1 finite elements on simplicial curves and surfaces."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.io
from scipy import sparse
from scipy.sparse.linalg import splu

from wilflow.errors import ConflictingConstraint, SingularMatrix, UnsupportedDegree
from wilflow.mesh import ElementField, FloatArray, NodalField, SimplicialSurface

logger = logging.getLogger("wilflow.fem")

Field = ElementField | NodalField
REFINEMENT_STEPS = 3


@dataclass(frozen=True)
class QuadratureRule:
    """Barycentric points and weights on the reference simplex.

    Weights sum to one and are scaled by the element measure.
    """

    points: FloatArray
    weights: FloatArray
    degree: int


def _segment_rule(xi: Sequence[float], weights: Sequence[float], degree: int) -> QuadratureRule:
    xi_arr = np.asarray(xi, dtype=np.float64)
    points = np.column_stack([1.0 - xi_arr, xi_arr])
    return QuadratureRule(points, np.asarray(weights, dtype=np.float64), degree)


def _symmetric_orbit(a: float) -> list[tuple[float, float, float]]:
    b = 1.0 - 2.0 * a
    return [(b, a, a), (a, b, a), (a, a, b)]


_G3 = 0.5 * math.sqrt(3.0 / 5.0)
_A1 = 0.44594849091596488631832925388305
_W1 = 0.22338158967801146569500700843312
_A2 = 0.091576213509770743459571463402202
_W2 = 0.10995174365532186763832632490021

_RULES: dict[int, list[QuadratureRule]] = {
    2: [
        _segment_rule([0.5], [1.0], 1),
        _segment_rule([0.5 - 0.5 / math.sqrt(3.0), 0.5 + 0.5 / math.sqrt(3.0)], [0.5, 0.5], 3),
        _segment_rule([0.5 - _G3, 0.5, 0.5 + _G3], [5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0], 5),
    ],
    3: [
        QuadratureRule(np.full((1, 3), 1.0 / 3.0), np.ones(1), 1),
        QuadratureRule(np.array(_symmetric_orbit(1.0 / 6.0)), np.full(3, 1.0 / 3.0), 2),
        QuadratureRule(
            np.array(_symmetric_orbit(_A1) + _symmetric_orbit(_A2)),
            np.array([_W1] * 3 + [_W2] * 3),
            4,
        ),
    ],
}


def quadrature_rule(dim: int, degree: int) -> QuadratureRule:
    """Cheapest rule on a simplex with `dim` vertices exact to `degree`."""
    if dim not in _RULES:
        raise UnsupportedDegree(f"no quadrature for simplices with {dim} vertices")
    for rule in _RULES[dim]:
        if rule.degree >= max(degree, 0):
            return rule
    raise UnsupportedDegree(
        f"degree {degree} exceeds the highest available ({_RULES[dim][-1].degree}) for dim {dim}"
    )


@dataclass(frozen=True)
class SurfaceGradientTable:
    """∇_s φ_i per simplex, shape (J, d local, d components)."""

    gradients: FloatArray

    @classmethod
    def build(cls, mesh: SimplicialSurface) -> "SurfaceGradientTable":
        return cls(mesh.basis_gradients)

    def tangency_error(self, normals: FloatArray) -> float:
        return float(np.abs(np.einsum("jia,ja->ji", self.gradients, normals)).max())

    def sum_error(self) -> float:
        return float(np.abs(self.gradients.sum(axis=1)).max())


def lumped_masses(mesh: SimplicialSurface) -> FloatArray:
    masses = np.zeros(mesh.num_vertices)
    share = mesh.measures / mesh.ambient_dim
    for k in range(mesh.ambient_dim):
        np.add.at(masses, mesh.simplices[:, k], share)
    return masses


def _vertex_limits(mesh: SimplicialSurface, values: Field | np.ndarray) -> np.ndarray:
    """Values at each (simplex, local vertex) pair; element data is constant per simplex."""
    if isinstance(values, ElementField):
        data = np.asarray(values.values)
        return np.repeat(data[:, None], mesh.ambient_dim, axis=1)
    data = np.asarray(values.values if isinstance(values, NodalField) else values)
    return data[mesh.simplices]


def lumped_inner_product(
    mesh: SimplicialSurface, u: Field | np.ndarray, v: Field | np.ndarray
) -> float:
    """(u, v)^h: vertex quadrature with one-sided limits per simplex."""
    uu = _vertex_limits(mesh, u)
    vv = _vertex_limits(mesh, v)
    products = uu * vv
    if products.ndim == 3:
        products = products.sum(axis=2)
    return float((mesh.measures * products.sum(axis=1)).sum() / mesh.ambient_dim)


def interpolate(
    mesh: SimplicialSurface, values: Field | np.ndarray, point: np.ndarray
) -> np.ndarray:
    """Evaluate a field at one barycentric point on every simplex."""
    if isinstance(values, ElementField):
        return np.asarray(values.values)
    data = np.asarray(values.values if isinstance(values, NodalField) else values)
    local = data[mesh.simplices]
    return np.tensordot(point, local, axes=([0], [1]))


def exact_inner_product(
    mesh: SimplicialSurface, integrand: Callable[[np.ndarray], np.ndarray], degree: int
) -> float:
    """∫ integrand over the mesh, exact for per-simplex polynomials up to `degree`.

    `integrand` maps a barycentric point to one value per simplex.
    """
    rule = quadrature_rule(mesh.ambient_dim, degree)
    total = np.zeros(mesh.num_simplices)
    for point, weight in zip(rule.points, rule.weights):
        total += weight * np.asarray(integrand(point), dtype=np.float64)
    return float((mesh.measures * total).sum())


def _scatter(mesh: SimplicialSurface, local: np.ndarray) -> sparse.csr_matrix:
    """Sum per-simplex (d x d) blocks into a K x K matrix."""
    simp = mesh.simplices
    d = mesh.ambient_dim
    rows = np.repeat(simp, d, axis=1).ravel()
    cols = np.tile(simp, (1, d)).ravel()
    n = mesh.num_vertices
    return sparse.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def assemble_stiffness(mesh: SimplicialSurface) -> sparse.csr_matrix:
    grads = mesh.basis_gradients
    local = mesh.measures[:, None, None] * np.einsum("jia,jka->jik", grads, grads)
    return _scatter(mesh, local)


def assemble_weighted_mass(
    mesh: SimplicialSurface, coefficients: Sequence[Field] = (), degree: int | None = None
) -> sparse.csr_matrix:
    """M_c[i, j] = ∫ c φ_j φ_i, c the product of the coefficient fields."""
    for coeff in coefficients:
        if not isinstance(coeff, (ElementField, NodalField)):
            raise TypeError("coefficients must be ElementField or NodalField instances")
    if degree is None:
        degree = 2 + sum(isinstance(c, NodalField) for c in coefficients)
    rule = quadrature_rule(mesh.ambient_dim, degree)
    local = np.zeros((mesh.num_simplices, mesh.ambient_dim, mesh.ambient_dim))
    for point, weight in zip(rule.points, rule.weights):
        c = np.ones(mesh.num_simplices)
        for coeff in coefficients:
            c = c * interpolate(mesh, coeff, point)
        local += (weight * c)[:, None, None] * np.outer(point, point)[None]
    return _scatter(mesh, mesh.measures[:, None, None] * local)


def assemble_mass(mesh: SimplicialSurface) -> sparse.csr_matrix:
    return assemble_weighted_mass(mesh)


def assemble_antisym(mesh: SimplicialSurface, eta: np.ndarray) -> sparse.csr_matrix:
    """A = B - Bᵀ with B[i, j] = (η·∇_s φ_j, φ_i)."""
    eta = np.asarray(eta, dtype=np.float64)
    rule = quadrature_rule(mesh.ambient_dim, 2)
    grads = mesh.basis_gradients
    local = np.zeros((mesh.num_simplices, mesh.ambient_dim, mesh.ambient_dim))
    for point, weight in zip(rule.points, rule.weights):
        eta_q = interpolate(mesh, eta, point)  # (J, d)
        directional = np.einsum("ja,jka->jk", eta_q, grads)  # η·∇φ_k
        local += weight * point[None, :, None] * directional[:, None, :]
    b = _scatter(mesh, mesh.measures[:, None, None] * local)
    return (b - b.T).tocsr()


def assemble_normal_coupling_lumped(mesh: SimplicialSurface) -> sparse.csr_matrix:
    """Rows: scalar vertex basis; columns: vertex-major vector basis q*d + c.

    Entry (q, q*d+c) = (1/d) Σ_{σ∋q} H(σ) ν_σ,c, i.e. the lumped mass times ω.
    """
    d = mesh.ambient_dim
    k = mesh.num_vertices
    block = np.zeros((k, d))
    scaled = mesh.orientation_vectors / (math.factorial(d - 1) * d)
    for corner in range(d):
        np.add.at(block, mesh.simplices[:, corner], scaled)
    rows = np.repeat(np.arange(k), d)
    cols = np.arange(k * d)
    return sparse.csr_matrix((block.ravel(), (rows, cols)), shape=(k, k * d))


@dataclass(frozen=True)
class DofMap:
    """Global unknown layout: consecutive fields, each vertex-major."""

    fields: tuple[tuple[str, int, int], ...]

    @classmethod
    def of(cls, *fields: tuple[str, int, int]) -> "DofMap":
        """Fields given as (name, num_vertices, components)."""
        return cls(tuple(fields))

    def _field(self, name: str) -> tuple[int, int, int]:
        offset = 0
        for field_name, vertices, components in self.fields:
            if field_name == name:
                return offset, vertices, components
            offset += vertices * components
        raise KeyError(f"unknown field {name!r}")

    @property
    def size(self) -> int:
        return sum(v * c for _, v, c in self.fields)

    def index(self, name: str, vertex: int, component: int = 0) -> int:
        offset, vertices, components = self._field(name)
        if not 0 <= vertex < vertices or not 0 <= component < components:
            raise IndexError(f"({name}, {vertex}, {component}) outside the dof map")
        return offset + vertex * components + component


Constraint = tuple[str, int, float | Sequence[float]]


@dataclass(frozen=True)
class SparseLinearSystem:
    """Square system over free unknowns; constrained unknowns keep their values."""

    matrix: sparse.csr_matrix
    rhs: FloatArray
    dof_map: DofMap
    free: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    fixed_values: FloatArray = field(default_factory=lambda: np.empty(0))

    @classmethod
    def full(
        cls, matrix: sparse.spmatrix, rhs: np.ndarray, dof_map: DofMap
    ) -> "SparseLinearSystem":
        n = dof_map.size
        if matrix.shape != (n, n) or rhs.shape != (n,):
            raise ValueError(f"system shape {matrix.shape}/{rhs.shape} does not match {n} unknowns")
        return cls(sparse.csr_matrix(matrix), np.asarray(rhs, dtype=np.float64), dof_map,
                   np.arange(n), np.full(n, np.nan))

    @property
    def num_free(self) -> int:
        return int(self.matrix.shape[0])

    def expand(self, solution: np.ndarray) -> FloatArray:
        """Full unknown vector: free values from `solution`, the rest from constraints."""
        full = self.fixed_values.copy()
        full[self.free] = solution
        return full


def eliminate_dirichlet(
    system: SparseLinearSystem, constraints: Iterable[Constraint]
) -> SparseLinearSystem:
    """Remove constrained rows and columns, moving known columns to the right-hand side."""
    dof_map = system.dof_map
    values: dict[int, float] = {}
    for name, vertex, value in constraints:
        components = dof_map._field(name)[2]
        per_component = np.broadcast_to(np.asarray(value, dtype=np.float64), (components,))
        for component, v in enumerate(per_component):
            idx = dof_map.index(name, int(vertex), component)
            previous = values.setdefault(idx, float(v))
            if previous != float(v):
                raise ConflictingConstraint(
                    f"{name}[{vertex}] constrained to both {previous} and {float(v)}"
                )
    n = dof_map.size
    full_index = np.full(n, -1, dtype=np.int64)
    full_index[system.free] = np.arange(system.num_free)
    fixed_mask = full_index < 0
    fixed_values = system.fixed_values.copy()
    for idx, v in values.items():
        fixed_mask[idx] = True
        fixed_values[idx] = v

    keep = np.flatnonzero(~fixed_mask)
    newly_fixed = np.flatnonzero(fixed_mask & (full_index >= 0))
    local_keep = full_index[keep]
    local_fixed = full_index[newly_fixed]
    matrix = system.matrix
    rhs = system.rhs[local_keep] - matrix[local_keep][:, local_fixed] @ fixed_values[newly_fixed]
    reduced = matrix[local_keep][:, local_keep].tocsr()
    rhs = np.asarray(rhs, dtype=np.float64)
    return SparseLinearSystem(reduced, rhs, dof_map, keep, fixed_values)


def solve_sparse(
    system: SparseLinearSystem,
    tol: float = 1e-10,
    dump_dir: Path | None = None,
    label: str = "system",
) -> FloatArray:
    """Direct LU solve with iterative refinement; raises SingularMatrix on failure."""
    n = system.num_free
    if n == 0:
        return np.empty(0)
    a = system.matrix.tocsc()
    b = system.rhs
    if dump_dir is not None:
        dump_dir.mkdir(parents=True, exist_ok=True)
        scipy.io.mmwrite(str(dump_dir / f"{label}.mtx"), a)
        logger.debug("dumped %s (%d unknowns) to %s", label, n, dump_dir)
    if not np.all(np.isfinite(a.data)) or not np.all(np.isfinite(b)):
        raise SingularMatrix(f"{label}: non-finite entries in the assembled system")
    try:
        lu = splu(a)
    except RuntimeError as exc:
        raise SingularMatrix(f"{label}: factorization failed ({exc})") from exc
    x = lu.solve(b)
    scale = float(np.linalg.norm(b)) or 1.0
    residual = float(np.linalg.norm(a @ x - b)) / scale
    for _ in range(REFINEMENT_STEPS):
        if residual <= tol or not np.isfinite(residual):
            break
        x = x + lu.solve(b - a @ x)
        residual = float(np.linalg.norm(a @ x - b)) / scale
    if not np.isfinite(residual) or residual > tol:
        raise SingularMatrix(f"{label}: relative residual {residual:.3e} exceeds {tol:.1e}")
    return x
