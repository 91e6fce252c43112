"""Mesh file readers and writers plus the `.bnd` boundary sidecar."""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Iterator, Mapping

import numpy as np

from wilflow.errors import ParseError, UnsupportedFormat
from wilflow.mesh import INTERIOR, SimplicialSurface
from wilflow.paths import sidecar_path

logger = logging.getLogger("wilflow.mesh_io")

FORMATS = ("off", "obj", "vtk", "meshio")
_SUFFIXES = {".off": "off", ".obj": "obj", ".vtk": "vtk"}


def _fmt(value: float) -> str:
    return format(float(value), ".17g")


def resolve_format(path: Path, format: str | None) -> str:
    if format is None:
        return _SUFFIXES.get(path.suffix.lower(), "meshio")
    name = format.lower()
    if name not in FORMATS:
        raise UnsupportedFormat(f"unsupported mesh format {format!r}; expected one of {FORMATS}")
    return name


def _content_lines(text: str) -> Iterator[tuple[int, list[str]]]:
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield lineno, line.split()


def _floats(tokens: list[str], lineno: int, path: str) -> list[float]:
    try:
        return [float(t) for t in tokens]
    except ValueError:
        raise ParseError(f"expected numbers, got {' '.join(tokens)!r}", lineno, path) from None


def _ints(tokens: list[str], lineno: int, path: str) -> list[int]:
    try:
        return [int(t) for t in tokens]
    except ValueError:
        raise ParseError(f"expected integers, got {' '.join(tokens)!r}", lineno, path) from None


def _planar(points: np.ndarray, lineno: int, path: str) -> np.ndarray:
    if points.shape[1] == 3:
        if np.any(points[:, 2] != 0.0):
            raise ParseError("curve vertices must lie in the plane z = 0", lineno, path)
        points = points[:, :2]
    return points


def read_off(path: Path) -> tuple[np.ndarray, np.ndarray]:
    name = str(path)
    lines = list(_content_lines(path.read_text(encoding="utf-8")))
    if not lines or lines[0][1][0].upper() != "OFF":
        raise ParseError("missing OFF header", lines[0][0] if lines else 1, name)
    header = lines[0][1][1:]
    rest = lines[1:]
    if not header:
        if not rest:
            raise ParseError("missing count line", lines[0][0] + 1, name)
        count_line, header = rest[0][0], rest[0][1]
        rest = rest[1:]
    else:
        count_line = lines[0][0]
    counts = _ints(header, count_line, name)
    if len(counts) not in (2, 3) or min(counts) < 0:
        raise ParseError("count line must be 'vertices faces [edges]'", count_line, name)
    n_vertices, n_faces = counts[0], counts[1]
    if len(rest) < n_vertices + n_faces:
        raise ParseError("file ends before all vertices and faces are read", count_line, name)
    vertices = []
    for lineno, tokens in rest[:n_vertices]:
        coords = _floats(tokens, lineno, name)
        if len(coords) < 3:
            raise ParseError("vertex needs three coordinates", lineno, name)
        vertices.append(coords[:3])
    faces = []
    for lineno, tokens in rest[n_vertices : n_vertices + n_faces]:
        values = _ints(tokens, lineno, name)
        if values[0] != 3 or len(values) < 4:
            raise ParseError("only triangular faces are supported", lineno, name)
        faces.append(values[1:4])
    return np.array(vertices, dtype=np.float64), np.array(faces, dtype=np.int64)


def write_off(path: Path, mesh: SimplicialSurface) -> None:
    if mesh.ambient_dim != 3:
        raise UnsupportedFormat("OFF holds triangle meshes only; use OBJ or VTK for curves")
    lines = ["OFF", f"{mesh.num_vertices} {mesh.num_simplices} 0"]
    lines.extend(" ".join(_fmt(c) for c in v) for v in mesh.vertices)
    lines.extend("3 " + " ".join(str(i) for i in s) for s in mesh.simplices)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_obj(path: Path) -> tuple[np.ndarray, np.ndarray]:
    name = str(path)
    vertices: list[list[float]] = []
    faces: list[list[int]] = []
    segments: list[list[int]] = []
    last_line = 1
    for lineno, tokens in _content_lines(path.read_text(encoding="utf-8")):
        last_line = lineno
        record, args = tokens[0], tokens[1:]
        if record == "v":
            coords = _floats(args, lineno, name)
            if len(coords) < 3:
                raise ParseError("vertex needs three coordinates", lineno, name)
            vertices.append(coords[:3])
        elif record in ("f", "l"):
            refs = _ints([a.split("/", 1)[0] for a in args], lineno, name)
            refs = [r - 1 if r > 0 else len(vertices) + r for r in refs]
            if record == "f":
                if len(refs) != 3:
                    raise ParseError("only triangular faces are supported", lineno, name)
                faces.append(refs)
            else:
                if len(refs) < 2:
                    raise ParseError("line element needs two vertices", lineno, name)
                segments.extend([a, b] for a, b in zip(refs, refs[1:]))
    if faces and segments:
        raise ParseError("file mixes faces and line elements", last_line, name)
    points = np.array(vertices, dtype=np.float64).reshape(-1, 3)
    if segments:
        return _planar(points, last_line, name), np.array(segments, dtype=np.int64)
    return points, np.array(faces, dtype=np.int64).reshape(-1, 3)


def write_obj(path: Path, mesh: SimplicialSurface) -> None:
    lines = []
    for v in mesh.vertices:
        coords = list(v) + [0.0] * (3 - len(v))
        lines.append("v " + " ".join(_fmt(c) for c in coords))
    record = "l" if mesh.ambient_dim == 2 else "f"
    lines.extend(f"{record} " + " ".join(str(i + 1) for i in s) for s in mesh.simplices)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


class _Tokens:
    """Whitespace tokens of a file, each tagged with its line number."""

    def __init__(self, text: str, path: str):
        self.path = path
        self.items = [
            (token, lineno)
            for lineno, raw in enumerate(text.splitlines(), start=1)
            for token in raw.split()
        ]
        self.pos = 0

    @property
    def line(self) -> int:
        if self.pos < len(self.items):
            return self.items[self.pos][1]
        return self.items[-1][1] if self.items else 1

    def take(self, count: int = 1) -> list[str]:
        if self.pos + count > len(self.items):
            raise ParseError("unexpected end of file", self.line, self.path)
        out = [t for t, _ in self.items[self.pos : self.pos + count]]
        self.pos += count
        return out

    def done(self) -> bool:
        return self.pos >= len(self.items)


def read_vtk(path: Path) -> tuple[np.ndarray, np.ndarray]:
    name = str(path)
    text = path.read_text(encoding="utf-8")
    lines = text.splitlines()
    if len(lines) < 4 or not lines[0].startswith("# vtk DataFile"):
        raise ParseError("missing '# vtk DataFile' header", 1, name)
    if lines[2].strip().upper() != "ASCII":
        raise ParseError("only ASCII legacy VTK is supported", 3, name)
    tokens = _Tokens("\n".join([""] * 3 + lines[3:]), name)
    if [t.upper() for t in tokens.take(2)] != ["DATASET", "POLYDATA"]:
        raise ParseError("expected 'DATASET POLYDATA'", tokens.line, name)
    points: np.ndarray | None = None
    cells: np.ndarray | None = None
    curve = False
    while not tokens.done():
        line = tokens.line
        keyword = tokens.take()[0].upper()
        if keyword == "POINTS":
            count = _ints(tokens.take(1), line, name)[0]
            tokens.take()
            points = np.array(_floats(tokens.take(3 * count), line, name)).reshape(count, 3)
        elif keyword in ("POLYGONS", "LINES"):
            n_cells, size = _ints(tokens.take(2), line, name)
            raw = _ints(tokens.take(size), line, name)
            width = 2 if keyword == "LINES" else 3
            counts = raw[0:size:width + 1]
            if size != n_cells * (width + 1) or any(c != width for c in counts):
                kind = "segments" if width == 2 else "triangles"
                raise ParseError(f"{keyword} must hold {kind} only", line, name)
            cells = np.array(raw, dtype=np.int64).reshape(n_cells, width + 1)[:, 1:]
            curve = keyword == "LINES"
        elif keyword in ("POINT_DATA", "CELL_DATA"):
            break
        else:
            raise ParseError(f"unsupported section {keyword!r}", line, name)
    if points is None or cells is None:
        raise ParseError("POLYDATA needs POINTS and POLYGONS or LINES", tokens.line, name)
    if curve:
        points = _planar(points, tokens.line, name)
    return points, cells


def write_vtk(
    path: Path,
    mesh: SimplicialSurface,
    point_data: Mapping[str, np.ndarray] | None = None,
) -> None:
    lines = ["# vtk DataFile Version 3.0", "wilflow mesh", "ASCII", "DATASET POLYDATA"]
    lines.append(f"POINTS {mesh.num_vertices} double")
    for v in mesh.vertices:
        coords = list(v) + [0.0] * (3 - len(v))
        lines.append(" ".join(_fmt(c) for c in coords))
    width = mesh.ambient_dim
    section = "LINES" if width == 2 else "POLYGONS"
    lines.append(f"{section} {mesh.num_simplices} {mesh.num_simplices * (width + 1)}")
    lines.extend(f"{width} " + " ".join(str(i) for i in s) for s in mesh.simplices)
    if point_data:
        lines.append(f"POINT_DATA {mesh.num_vertices}")
        for key, values in point_data.items():
            lines.append(f"SCALARS {key} double 1")
            lines.append("LOOKUP_TABLE default")
            lines.extend(_fmt(x) for x in np.asarray(values, dtype=np.float64))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_meshio(path: Path) -> tuple[np.ndarray, np.ndarray]:
    import meshio

    try:
        data = meshio.read(path)
    except meshio.ReadError as exc:
        raise UnsupportedFormat(f"meshio cannot read {path}: {exc}") from exc
    points = np.asarray(data.points, dtype=np.float64)
    for cell_type in ("triangle", "line"):
        blocks = [block.data for block in data.cells if block.type == cell_type]
        if blocks:
            cells = np.concatenate(blocks).astype(np.int64)
            if cell_type == "line":
                points = _planar(points, 1, str(path))
            return points, cells
    raise UnsupportedFormat(f"{path} holds neither triangles nor line elements")


def read_boundary(path: Path, num_vertices: int) -> np.ndarray:
    """Read `index part_id` lines; unlisted vertices are interior."""
    name = str(path)
    parts = np.full(num_vertices, INTERIOR, dtype=np.int64)
    for lineno, tokens in _content_lines(path.read_text(encoding="utf-8")):
        values = _ints(tokens, lineno, name)
        if len(values) != 2:
            raise ParseError("expected 'index part_id'", lineno, name)
        index, part = values
        if not 0 <= index < num_vertices or part < 0:
            raise ParseError(f"invalid boundary entry {index} {part}", lineno, name)
        parts[index] = part
    return parts


def write_boundary(path: Path, mesh: SimplicialSurface) -> None:
    rows = [f"{q} {mesh.boundary_parts[q]}" for q in np.flatnonzero(mesh.boundary_mask)]
    path.write_text("".join(row + "\n" for row in rows), encoding="utf-8")


_READERS = {"off": read_off, "obj": read_obj, "vtk": read_vtk, "meshio": read_meshio}


def load_mesh(
    path: Path, format: str | None = None, boundary: Path | None = None
) -> SimplicialSurface:
    """Load a mesh; labels come from `boundary` or the `.bnd` file beside it."""
    kind = resolve_format(path, format)
    vertices, simplices = _READERS[kind](path)
    sidecar = boundary if boundary is not None else sidecar_path(path)
    parts = read_boundary(sidecar, len(vertices)) if sidecar.exists() else None
    mesh = SimplicialSurface.from_arrays(vertices, simplices, boundary_parts=parts)
    logger.debug(
        "loaded %s (%s): %d vertices, %d simplices", path, kind, len(vertices), len(simplices)
    )
    return mesh


def save_mesh(
    mesh: SimplicialSurface,
    path: Path,
    format: str | None = None,
    point_data: Mapping[str, np.ndarray] | None = None,
) -> None:
    """Write a mesh and, when it has a boundary, its `.bnd` sidecar."""
    kind = resolve_format(path, format)
    if kind == "off":
        write_off(path, mesh)
    elif kind == "obj":
        write_obj(path, mesh)
    elif kind == "vtk":
        write_vtk(path, mesh, point_data)
    else:
        raise UnsupportedFormat("meshio is used for import only; save as off, obj or vtk")
    if not mesh.is_closed:
        write_boundary(sidecar_path(path), mesh)
