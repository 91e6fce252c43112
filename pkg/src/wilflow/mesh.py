"""Simplicial curves (d=2) and surfaces (d=3) and their P1 geometry."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping

import numpy as np
import numpy.typing as npt
from scipy import sparse
from scipy.sparse.csgraph import connected_components

from wilflow.errors import DegenerateElement, DegenerateVertexNormal, InvalidSpec
from wilflow.models import BoundaryCondition

INTERIOR = -1
EPS_NORMAL = 1e-12
EPS_GEOM_FACTOR = 1e-14

FloatArray = npt.NDArray[np.float64]
IntArray = npt.NDArray[np.int64]


@dataclass(frozen=True)
class ElementField:
    """Piecewise constant data, one entry (scalar or vector) per simplex."""

    values: FloatArray


@dataclass(frozen=True)
class NodalField:
    """Piecewise linear data given by vertex values."""

    values: FloatArray


def _readonly(array: np.ndarray, dtype) -> np.ndarray:
    out = np.array(array, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class SimplicialSurface:
    """Oriented simplicial mesh with per-vertex boundary part labels.

    `boundary_parts[q]` is -1 for interior vertices and the boundary
    component index otherwise. Instances are immutable; geometric
    quantities are cached on first use.
    """

    vertices: FloatArray
    simplices: IntArray
    boundary_parts: IntArray
    part_conditions: Mapping[int, BoundaryCondition] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "vertices", _readonly(self.vertices, np.float64))
        object.__setattr__(self, "simplices", _readonly(self.simplices, np.int64))
        object.__setattr__(self, "boundary_parts", _readonly(self.boundary_parts, np.int64))
        object.__setattr__(
            self,
            "part_conditions",
            {int(k): BoundaryCondition(v) for k, v in dict(self.part_conditions).items()},
        )
        self._validate()

    @classmethod
    def from_arrays(
        cls,
        vertices: npt.ArrayLike,
        simplices: npt.ArrayLike,
        boundary_parts: npt.ArrayLike | None = None,
        part_conditions: Mapping[int, BoundaryCondition] | None = None,
    ) -> "SimplicialSurface":
        """Build a mesh; without explicit labels every boundary vertex is part 0."""
        vertices = np.asarray(vertices, dtype=np.float64)
        simplices = np.asarray(simplices, dtype=np.int64)
        if boundary_parts is None:
            boundary_parts = np.full(len(vertices), INTERIOR, dtype=np.int64)
            if simplices.ndim == 2 and simplices.size and simplices.max() < len(vertices):
                facets = _boundary_facets(simplices)
                boundary_parts[np.unique(facets)] = 0
        return cls(
            vertices=vertices,
            simplices=simplices,
            boundary_parts=np.asarray(boundary_parts, dtype=np.int64),
            part_conditions=dict(part_conditions or {}),
        )

    def _validate(self) -> None:
        verts, simp = self.vertices, self.simplices
        if verts.ndim != 2 or verts.shape[1] not in (2, 3):
            raise InvalidSpec(f"vertices must have shape (K, 2) or (K, 3), got {verts.shape}")
        d = verts.shape[1]
        if simp.ndim != 2 or simp.shape[1] != d or len(simp) == 0:
            raise InvalidSpec(f"simplices must have shape (J, {d}), got {simp.shape}")
        if not np.all(np.isfinite(verts)):
            raise InvalidSpec("vertex coordinates must be finite")
        if simp.min() < 0 or simp.max() >= len(verts):
            raise InvalidSpec("simplex vertex index out of range")
        if np.any(np.diff(np.sort(simp, axis=1), axis=1) == 0):
            raise InvalidSpec("simplex with repeated vertex")
        if len(np.unique(np.sort(simp, axis=1), axis=0)) != len(simp):
            raise InvalidSpec("duplicate simplices")
        used = np.zeros(len(verts), dtype=bool)
        used[simp.ravel()] = True
        if not used.all():
            raise InvalidSpec(f"vertex {int(np.argmin(used))} belongs to no simplex")
        if self.boundary_parts.shape != (len(verts),):
            raise InvalidSpec("boundary_parts must have one label per vertex")
        on_boundary = np.zeros(len(verts), dtype=bool)
        on_boundary[self.boundary_facets.ravel()] = True
        labelled = self.boundary_parts >= 0
        if np.any(labelled != on_boundary):
            q = int(np.argmax(labelled != on_boundary))
            raise InvalidSpec(f"boundary label of vertex {q} disagrees with the mesh boundary")
        if not self.is_consistently_oriented():
            raise InvalidSpec("simplex orientation is inconsistent")
        measures = self.measures
        bad = measures <= self.eps_geom
        if bad.any():
            j = int(np.argmax(bad))
            raise DegenerateElement(j, float(measures[j]))

    @property
    def ambient_dim(self) -> int:
        return int(self.vertices.shape[1])

    @property
    def num_vertices(self) -> int:
        return int(self.vertices.shape[0])

    @property
    def num_simplices(self) -> int:
        return int(self.simplices.shape[0])

    @cached_property
    def eps_geom(self) -> float:
        extent = self.vertices.max(axis=0) - self.vertices.min(axis=0)
        diam = float(np.linalg.norm(extent))
        return EPS_GEOM_FACTOR * diam ** (self.ambient_dim - 1)

    @cached_property
    def orientation_vectors(self) -> FloatArray:
        """N{σ}: rotated edge (d=2) or edge cross product (d=3)."""
        x = self.vertices[self.simplices]
        if self.ambient_dim == 2:
            e = x[:, 1] - x[:, 0]
            return np.column_stack([e[:, 1], -e[:, 0]])
        return np.cross(x[:, 1] - x[:, 0], x[:, 2] - x[:, 0])

    @cached_property
    def measures(self) -> FloatArray:
        norms = np.linalg.norm(self.orientation_vectors, axis=1)
        return norms / math.factorial(self.ambient_dim - 1)

    @cached_property
    def element_normals(self) -> FloatArray:
        return self.orientation_vectors / np.linalg.norm(self.orientation_vectors, axis=1)[:, None]

    @cached_property
    def boundary_facets(self) -> IntArray:
        return _boundary_facets(self.simplices)

    @property
    def boundary_mask(self) -> npt.NDArray[np.bool_]:
        return self.boundary_parts >= 0

    @property
    def is_closed(self) -> bool:
        return not self.boundary_mask.any()

    @cached_property
    def basis_gradients(self) -> FloatArray:
        """Surface gradients of the local hat functions, shape (J, d, d).

        Row i of entry j is ∇_s φ_i on simplex j, from the pseudo-inverse
        of the edge matrix.
        """
        x = self.vertices[self.simplices]
        edges = np.transpose(x[:, 1:] - x[:, :1], (0, 2, 1))  # (J, d, d-1)
        et = np.transpose(edges, (0, 2, 1))
        pinv = np.linalg.solve(et @ edges, et)  # (J, d-1, d)
        first = -pinv.sum(axis=1, keepdims=True)
        return np.concatenate([first, pinv], axis=1)

    def condition(self, part: int) -> BoundaryCondition:
        return self.part_conditions.get(part, BoundaryCondition.NAVIER)

    def vertices_with_condition(self, condition: BoundaryCondition) -> IntArray:
        labels = self.boundary_parts
        parts = [p for p in np.unique(labels[labels >= 0]) if self.condition(int(p)) == condition]
        return np.flatnonzero(np.isin(labels, parts))

    def is_consistently_oriented(self) -> bool:
        simp = self.simplices
        if self.ambient_dim == 2:
            n = len(simp)
            return len(np.unique(simp[:, 0])) == n and len(np.unique(simp[:, 1])) == n
        directed = np.concatenate([simp[:, [0, 1]], simp[:, [1, 2]], simp[:, [2, 0]]])
        return len(np.unique(directed, axis=0)) == len(directed)

    def with_vertices(self, vertices: npt.ArrayLike) -> "SimplicialSurface":
        """Same connectivity and labels, new positions."""
        return SimplicialSurface(
            vertices=np.asarray(vertices, dtype=np.float64),
            simplices=self.simplices,
            boundary_parts=self.boundary_parts,
            part_conditions=self.part_conditions,
        )

    def with_conditions(self, conditions: Mapping[int, BoundaryCondition]) -> "SimplicialSurface":
        merged = {**self.part_conditions, **conditions}
        return SimplicialSurface(
            vertices=self.vertices,
            simplices=self.simplices,
            boundary_parts=self.boundary_parts,
            part_conditions=merged,
        )

    def split_boundary_components(self) -> "SimplicialSurface":
        """Give every connected boundary component its own part index.

        Parts are numbered by their smallest vertex index; a new part
        inherits the condition of the part it was split from.
        """
        facets = self.boundary_facets
        if facets.size == 0:
            return self
        n = self.num_vertices
        if facets.shape[1] == 1:
            adjacency = sparse.coo_matrix((n, n))
        else:
            rows = np.concatenate([facets[:, 0], facets[:, 1]])
            cols = np.concatenate([facets[:, 1], facets[:, 0]])
            adjacency = sparse.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
        _, component = connected_components(adjacency.tocsr(), directed=False)
        boundary = np.flatnonzero(self.boundary_mask)
        parts = np.full(n, INTERIOR, dtype=np.int64)
        conditions: dict[int, BoundaryCondition] = {}
        order: dict[int, int] = {}
        for q in boundary:
            label = order.setdefault(int(component[q]), len(order))
            parts[q] = label
            conditions.setdefault(label, self.condition(int(self.boundary_parts[q])))
        return SimplicialSurface(
            vertices=self.vertices,
            simplices=self.simplices,
            boundary_parts=parts,
            part_conditions=conditions,
        )


def _boundary_facets(simplices: np.ndarray) -> IntArray:
    """Sub-simplices (vertices for curves, edges for surfaces) owned by one simplex."""
    d = simplices.shape[1]
    if d == 2:
        faces = simplices.reshape(-1, 1)
    else:
        faces = np.concatenate([simplices[:, [0, 1]], simplices[:, [1, 2]], simplices[:, [2, 0]]])
    keys = np.sort(faces, axis=1)
    unique, counts = np.unique(keys, axis=0, return_counts=True)
    return unique[counts == 1].astype(np.int64)


def _check_index(mesh: SimplicialSurface, simplex_index: int) -> None:
    if not 0 <= simplex_index < mesh.num_simplices:
        raise IndexError(f"simplex index {simplex_index} out of range")


def element_measure(mesh: SimplicialSurface, simplex_index: int) -> float:
    _check_index(mesh, simplex_index)
    measure = float(mesh.measures[simplex_index])
    if measure <= mesh.eps_geom:
        raise DegenerateElement(simplex_index, measure)
    return measure


def element_normal(mesh: SimplicialSurface, simplex_index: int) -> FloatArray:
    element_measure(mesh, simplex_index)
    return mesh.element_normals[simplex_index].copy()


def total_measure(mesh: SimplicialSurface) -> float:
    return float(mesh.measures.sum())


def vertex_normals(mesh: SimplicialSurface) -> FloatArray:
    """Mass-lumped projection ω of the element normals onto vertices."""
    d = mesh.ambient_dim
    weighted = np.zeros((mesh.num_vertices, d))
    weight = np.zeros(mesh.num_vertices)
    scaled = mesh.orientation_vectors / math.factorial(d - 1)  # H ν
    for k in range(d):
        np.add.at(weighted, mesh.simplices[:, k], scaled)
        np.add.at(weight, mesh.simplices[:, k], mesh.measures)
    return weighted / weight[:, None]


def normalized_vertex_normals(mesh: SimplicialSurface) -> FloatArray:
    omega = vertex_normals(mesh)
    norms = np.linalg.norm(omega, axis=1)
    bad = norms <= EPS_NORMAL
    if bad.any():
        q = int(np.argmax(bad))
        raise DegenerateVertexNormal(q, float(norms[q]))
    return omega / norms[:, None]


def w_field(mesh: SimplicialSurface, v: FloatArray) -> ElementField:
    """|∇_s v|² per simplex for the P1 interpolant of a nodal vector field."""
    local = v[mesh.simplices]  # (J, d local, d comp)
    grad = np.einsum("jic,jia->jca", local, mesh.basis_gradients)
    return ElementField(np.einsum("jca,jca->j", grad, grad))


def mesh_ratio(mesh: SimplicialSurface) -> float:
    measures = mesh.measures
    j = int(np.argmin(measures))
    if measures[j] <= mesh.eps_geom:
        raise DegenerateElement(j, float(measures[j]))
    return float(measures.max() / measures[j])


def min_element(mesh: SimplicialSurface) -> float:
    return float(mesh.measures.min())


def assumption_a1(mesh: SimplicialSurface) -> bool:
    """Nonempty boundary, or vertex normals that span the ambient space."""
    if not mesh.is_closed:
        return True
    return int(np.linalg.matrix_rank(vertex_normals(mesh))) == mesh.ambient_dim


def boundary_conormals(mesh: SimplicialSurface) -> tuple[IntArray, FloatArray]:
    """Outward unit conormals at boundary vertices.

    For curves this is the unit tangent of the end segment pointing out of
    the curve; for surfaces the average in-plane outward normal of the
    adjacent boundary edges, renormalized.
    """
    boundary = np.flatnonzero(mesh.boundary_mask)
    d = mesh.ambient_dim
    accum = np.zeros((mesh.num_vertices, d))
    x = mesh.vertices
    if d == 2:
        for k, other in ((0, 1), (1, 0)):
            q = mesh.simplices[:, k]
            tangent = x[q] - x[mesh.simplices[:, other]]
            ends = mesh.boundary_mask[q]
            np.add.at(accum, q[ends], tangent[ends])
    else:
        facets = {tuple(sorted(f)) for f in mesh.boundary_facets.tolist()}
        for j, tri in enumerate(mesh.simplices.tolist()):
            for k in range(3):
                a, b, c = tri[k], tri[(k + 1) % 3], tri[(k + 2) % 3]
                if (min(a, b), max(a, b)) not in facets:
                    continue
                edge = x[b] - x[a]
                mu = np.cross(edge, mesh.element_normals[j])
                if np.dot(mu, x[c] - x[a]) > 0:
                    mu = -mu
                mu /= np.linalg.norm(mu)
                accum[a] += mu
                accum[b] += mu
    conormals = accum[boundary]
    conormals /= np.linalg.norm(conormals, axis=1)[:, None]
    return boundary, conormals
