"""Builders for the reference geometries."""

from __future__ import annotations

import inspect
import logging
import math
from typing import Callable, Dict

import numpy as np
from pydantic import BaseModel, Field, field_validator

from wilflow.errors import InvalidSpec
from wilflow.mesh import INTERIOR, SimplicialSurface
from wilflow.models import BoundaryCondition

logger = logging.getLogger("wilflow.generators")

WELD_TOLERANCE = 1e-9


def _require_positive(**values: float) -> None:
    for name, value in values.items():
        if not value > 0:
            raise InvalidSpec(f"{name} must be positive, got {value}")


def _open(vertices: np.ndarray, simplices: np.ndarray) -> SimplicialSurface:
    return SimplicialSurface.from_arrays(
        vertices, simplices, part_conditions={0: BoundaryCondition.NAVIER}
    )


def circle(elements: int = 64, radius: float = 1.0) -> SimplicialSurface:
    """Uniform counter-clockwise polygon inscribed in a circle."""
    _require_positive(elements=elements, radius=radius)
    if elements < 3:
        raise InvalidSpec("a closed polygon needs at least 3 elements")
    theta = 2.0 * np.pi * np.arange(elements) / elements
    vertices = radius * np.column_stack([np.cos(theta), np.sin(theta)])
    j = np.arange(elements)
    return SimplicialSurface.from_arrays(vertices, np.column_stack([j, (j + 1) % elements]))


def circle_nonuniform(elements: int = 128, radius: float = 1.0) -> SimplicialSurface:
    """Circle sampled at x(ρ) = (cos g(ρ), sin g(ρ)), g(ρ) = -2πρ + 0.1 sin(-2πρ).

    The parametrization runs clockwise, so each segment is stored from
    ρ_{j+1} to ρ_j to keep the outward orientation.
    """
    _require_positive(elements=elements, radius=radius)
    if elements < 3:
        raise InvalidSpec("a closed polygon needs at least 3 elements")
    rho = np.arange(elements) / elements
    g = -2.0 * np.pi * rho + 0.1 * np.sin(-2.0 * np.pi * rho)
    vertices = radius * np.column_stack([np.cos(g), np.sin(g)])
    j = np.arange(elements)
    return SimplicialSurface.from_arrays(vertices, np.column_stack([(j + 1) % elements, j]))


def circle_segment(
    elements: int = 128, radius: float = 1.0, angle: float = 2.0 * np.pi / 3.0
) -> SimplicialSurface:
    """Open circular arc with its apex at angle π/2, traversed counter-clockwise."""
    _require_positive(elements=elements, radius=radius, angle=angle)
    if angle >= 2.0 * np.pi:
        raise InvalidSpec(f"arc angle must be below 2π, got {angle}")
    theta = 0.5 * np.pi - 0.5 * angle + angle * np.arange(elements + 1) / elements
    vertices = radius * np.column_stack([np.cos(theta), np.sin(theta)])
    j = np.arange(elements)
    return _open(vertices, np.column_stack([j, j + 1]))


_ICOSAHEDRON_FACES = [
    (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
    (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
    (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
    (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
]


def _icosahedron() -> tuple[np.ndarray, np.ndarray]:
    t = (1.0 + math.sqrt(5.0)) / 2.0
    verts = np.array(
        [
            (-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
            (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
            (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1),
        ],
        dtype=np.float64,
    )
    return verts / np.linalg.norm(verts, axis=1)[:, None], np.array(_ICOSAHEDRON_FACES)


def _subdivide(vertices: np.ndarray, faces: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split every triangle into four; new midpoints are projected to the unit sphere."""
    points = [tuple(v) for v in vertices]
    midpoint: dict[tuple[int, int], int] = {}

    def mid(a: int, b: int) -> int:
        key = (min(a, b), max(a, b))
        if key not in midpoint:
            p = 0.5 * (vertices[a] + vertices[b])
            points.append(tuple(p / np.linalg.norm(p)))
            midpoint[key] = len(points) - 1
        return midpoint[key]

    refined = []
    for a, b, c in faces.tolist():
        ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
        refined.extend([(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)])
    return np.array(points), np.array(refined)


def _orient_outward(vertices: np.ndarray, faces: np.ndarray, center: np.ndarray) -> np.ndarray:
    x = vertices[faces]
    n = np.cross(x[:, 1] - x[:, 0], x[:, 2] - x[:, 0])
    inward = np.einsum("ij,ij->i", n, x.mean(axis=1) - center) < 0
    faces = faces.copy()
    faces[inward] = faces[inward][:, [0, 2, 1]]
    return faces


def sphere(level: int = 3, radius: float = 1.0) -> SimplicialSurface:
    """Icosahedral refinement projected onto the sphere, outward oriented."""
    _require_positive(radius=radius)
    if level < 0:
        raise InvalidSpec(f"refinement level must be nonnegative, got {level}")
    vertices, faces = _icosahedron()
    for _ in range(level):
        vertices, faces = _subdivide(vertices, faces)
    faces = _orient_outward(vertices, faces, np.zeros(3))
    return SimplicialSurface.from_arrays(radius * vertices, faces)


def _ring_disk(rings: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Hexagonal ring triangulation of the unit disk.

    Returns (ring radius fraction, azimuth) per vertex and triangles that
    are counter-clockwise seen from +z. Ring i holds 6i vertices.
    """
    radial = [0.0]
    azimuth = [0.0]
    starts = [0]
    for i in range(1, rings + 1):
        starts.append(len(radial))
        count = 6 * i
        radial.extend([i / rings] * count)
        azimuth.extend(2.0 * np.pi * k / count for k in range(count))
    triangles: list[tuple[int, int, int]] = []
    for i in range(1, rings + 1):
        inner_n = 1 if i == 1 else 6 * (i - 1)
        outer_n = 6 * i
        inner = [starts[i - 1] + k for k in range(inner_n)]
        outer = [starts[i] + k for k in range(outer_n)]
        if i == 1:
            triangles.extend((inner[0], outer[q], outer[(q + 1) % outer_n]) for q in range(outer_n))
            continue
        p = q = 0
        while p < inner_n or q < outer_n:
            advance_inner = q == outer_n or (p < inner_n and (p + 1) * outer_n < (q + 1) * inner_n)
            if advance_inner:
                triangles.append((inner[p % inner_n], outer[q % outer_n], inner[(p + 1) % inner_n]))
                p += 1
            else:
                triangles.append((inner[p % inner_n], outer[q % outer_n], outer[(q + 1) % outer_n]))
                q += 1
    return np.array(radial), np.array(azimuth), np.array(triangles, dtype=np.int64)


def disk(level: int = 3, radius: float = 1.0) -> SimplicialSurface:
    """Flat disk in the plane z = 0 with 2**level rings, normal +z."""
    _require_positive(radius=radius)
    if level < 0:
        raise InvalidSpec(f"refinement level must be nonnegative, got {level}")
    s, phi, triangles = _ring_disk(2**level)
    vertices = np.column_stack(
        [radius * s * np.cos(phi), radius * s * np.sin(phi), np.zeros_like(s)]
    )
    return _open(vertices, triangles)


def _cap_points(s: np.ndarray, phi: np.ndarray, radius: float, polar_angle: float) -> np.ndarray:
    theta = s * polar_angle
    return radius * np.column_stack(
        [np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)]
    )


def sphere_cap(
    level: int = 3, radius: float = 1.0, polar_angle: float = 0.5 * np.pi
) -> SimplicialSurface:
    """Spherical cap around +z reaching the given polar angle, outward oriented."""
    _require_positive(radius=radius, polar_angle=polar_angle)
    if level < 0:
        raise InvalidSpec(f"refinement level must be nonnegative, got {level}")
    if polar_angle >= np.pi:
        raise InvalidSpec(f"cap polar angle must be below π, got {polar_angle}")
    s, phi, triangles = _ring_disk(2**level)
    return _open(_cap_points(s, phi, radius, polar_angle), triangles)


def torus(elements: int = 2048, major: float = 2.0, minor: float = 0.5) -> SimplicialSurface:
    """Structured torus around the z axis with about `elements` triangles."""
    _require_positive(elements=elements, major=major, minor=minor)
    if minor >= major:
        raise InvalidSpec("minor radius must be smaller than the major radius")
    aspect = major / minor
    n_v = max(3, round(math.sqrt(elements / (2.0 * aspect))))
    n_u = max(3, round(aspect * n_v))
    u = 2.0 * np.pi * np.arange(n_u) / n_u
    v = 2.0 * np.pi * np.arange(n_v) / n_v
    uu, vv = np.meshgrid(u, v, indexing="ij")
    ring = major + minor * np.cos(vv)
    vertices = np.column_stack(
        [(ring * np.cos(uu)).ravel(), (ring * np.sin(uu)).ravel(), (minor * np.sin(vv)).ravel()]
    )
    i, k = np.meshgrid(np.arange(n_u), np.arange(n_v), indexing="ij")
    a = (i * n_v + k).ravel()
    b = (((i + 1) % n_u) * n_v + k).ravel()
    c = (((i + 1) % n_u) * n_v + (k + 1) % n_v).ravel()
    d = (i * n_v + (k + 1) % n_v).ravel()
    triangles = np.concatenate([np.column_stack([a, b, c]), np.column_stack([a, c, d])])
    return SimplicialSurface.from_arrays(vertices, triangles)


def _weld(vertices: np.ndarray, triangles: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    keys = np.round(vertices / WELD_TOLERANCE).astype(np.int64)
    _, first, inverse = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    return vertices[first], inverse.reshape(-1)[triangles]


def _cigar_parts(rings: int, length: float, diameter: float) -> tuple[np.ndarray, np.ndarray]:
    rho = 0.5 * diameter
    half = 0.5 * (length - diameter)
    s, phi, cap = _ring_disk(rings)
    top = _cap_points(s, phi, rho, 0.5 * np.pi)
    top[:, 2] += half
    bottom = top * np.array([1.0, 1.0, -1.0])
    bottom_cap = cap[:, [0, 2, 1]] + len(top)

    n_phi = 6 * rings
    spacing = 0.5 * np.pi * rho / rings
    n_z = max(1, round(2.0 * half / spacing)) if half > 0 else 0
    parts_v = [top, bottom]
    parts_t = [cap, bottom_cap]
    if n_z:
        azimuth = 2.0 * np.pi * np.arange(n_phi) / n_phi
        z = -half + 2.0 * half * np.arange(n_z + 1) / n_z
        pp, zz = np.meshgrid(azimuth, z, indexing="ij")
        side = np.column_stack([rho * np.cos(pp).ravel(), rho * np.sin(pp).ravel(), zz.ravel()])
        k, l = np.meshgrid(np.arange(n_phi), np.arange(n_z), indexing="ij")
        a = (k * (n_z + 1) + l).ravel()
        b = (((k + 1) % n_phi) * (n_z + 1) + l).ravel()
        c = (((k + 1) % n_phi) * (n_z + 1) + l + 1).ravel()
        d = (k * (n_z + 1) + l + 1).ravel()
        offset = 2 * len(top)
        parts_v.append(side)
        quads = np.concatenate([np.column_stack([a, b, c]), np.column_stack([a, c, d])])
        parts_t.append(quads + offset)
    return _weld(np.concatenate(parts_v), np.concatenate(parts_t))


def cigar(elements: int = 9000, length: float = 4.0, diameter: float = 1.0) -> SimplicialSurface:
    """Cylinder along z with hemispherical caps, total extent diameter² × length."""
    _require_positive(elements=elements, length=length, diameter=diameter)
    if length < diameter:
        raise InvalidSpec("cigar length must be at least its diameter")
    best: tuple[np.ndarray, np.ndarray] | None = None
    rings = 1
    while True:
        candidate = _cigar_parts(rings, length, diameter)
        if best is not None and abs(len(candidate[1]) - elements) >= abs(len(best[1]) - elements):
            break
        best = candidate
        if len(candidate[1]) >= elements:
            break
        rings += 1
    vertices, triangles = best
    logger.debug("cigar with %d rings per cap: %d triangles", rings, len(triangles))
    return SimplicialSurface.from_arrays(vertices, triangles)


GENERATORS: Dict[str, Callable[..., SimplicialSurface]] = {
    "circle": circle,
    "circle_nonuniform": circle_nonuniform,
    "circle_segment": circle_segment,
    "sphere": sphere,
    "sphere_cap": sphere_cap,
    "disk": disk,
    "torus": torus,
    "cigar": cigar,
}


class GeometrySpec(BaseModel):
    """A generator name plus keyword parameters."""

    kind: str
    params: Dict[str, float] = Field(default_factory=dict)

    model_config = {"extra": "forbid"}

    @field_validator("kind")
    @classmethod
    def _known_kind(cls, value: str) -> str:
        if value not in GENERATORS:
            raise ValueError(f"unknown geometry {value!r}; expected one of {sorted(GENERATORS)}")
        return value


def generate(spec: GeometrySpec) -> SimplicialSurface:
    builder = GENERATORS.get(spec.kind)
    if builder is None:
        raise InvalidSpec(f"unknown geometry {spec.kind!r}")
    signature = inspect.signature(builder)
    kwargs: dict[str, float | int] = {}
    for name, value in spec.params.items():
        param = signature.parameters.get(name)
        if param is None:
            raise InvalidSpec(f"geometry {spec.kind!r} has no parameter {name!r}")
        if param.annotation in (int, "int"):
            if not float(value).is_integer():
                raise InvalidSpec(f"{spec.kind}.{name} must be an integer, got {value}")
            kwargs[name] = int(value)
        else:
            kwargs[name] = float(value)
    mesh = builder(**kwargs)
    logger.info(
        "generated %s: %d vertices, %d simplices, %d boundary vertices",
        spec.kind,
        mesh.num_vertices,
        mesh.num_simplices,
        int((mesh.boundary_parts != INTERIOR).sum()),
    )
    return mesh
