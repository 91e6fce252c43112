"""Reference solutions, error metrics and convergence studies."""

from __future__ import annotations

import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import partial
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import pandas as pd
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from wilflow.config import Settings
from wilflow.errors import BranchCrossing, DegenerateRegion, InvalidSpec, WilflowError
from wilflow.flow import run
from wilflow.generators import circle_nonuniform, circle_segment
from wilflow.mesh import SimplicialSurface
from wilflow.models import BoundaryCondition, SolverConfig
from wilflow.sinks import HistorySink

logger = logging.getLogger("wilflow.bench")

CASES = ("closed_circle", "segment_navier", "segment_clamped")
CIRCLE_COLUMNS = ["h", "dt", "e_x", "e_k1", "e_k2", "eoc_x", "eoc_k1", "eoc_k2"]
SEGMENT_COLUMNS = ["h", "dt", "md", "eoc"]
SEGMENT_ANGLE = 2.0 * math.pi / 3.0


def _radius_rate(r: float, kappa_bar: float) -> float:
    return (1.0 / r - kappa_bar) * (1.0 / r + kappa_bar) / (2.0 * r)


def circle_radius_reference(r0: float, kappa_bar: float, t: float) -> float:
    """Radius of an evolving circle, from the implicit relation

    κ̄⁴t + κ̄²(r² - r0²) + ln((1 - κ̄²r²)/(1 - κ̄²r0²)) = 0,
    or (r0⁴ + 2t)^{1/4} when κ̄ = 0.
    """
    if r0 <= 0:
        raise InvalidSpec(f"initial radius must be positive, got {r0}")
    if t < 0:
        raise InvalidSpec(f"time must be nonnegative, got {t}")
    if kappa_bar == 0.0:
        return (r0**4 + 2.0 * t) ** 0.25
    z0 = 1.0 - kappa_bar**2 * r0**2
    if abs(z0) <= 1e-14 or t == 0.0:
        return r0
    k4t = kappa_bar**4 * t

    def relation(w: float) -> float:
        return math.log(w) - z0 * w + z0 + k4t

    tiny = np.finfo(float).tiny
    lower = max(math.exp(-k4t - z0 - abs(z0) - 1.0), tiny)
    if relation(lower) >= 0.0:
        w = lower
    else:
        w = brentq(relation, lower, 1.0, xtol=1e-300, rtol=1e-15, maxiter=500)
    r = math.sqrt(max(1.0 - z0 * w, 0.0)) / abs(kappa_bar)
    if (1.0 - kappa_bar**2 * r**2) * z0 < 0.0:
        raise BranchCrossing(f"radius {r} left the branch of r0={r0} for κ̄={kappa_bar}")
    return r


def circle_radius_ode(r0: float, kappa_bar: float, t: float) -> float:
    """Integrate r' = (1/(2r))(1/r - κ̄)(1/r + κ̄) with an 8th order Runge-Kutta method."""
    if t == 0.0:
        return r0
    solution = solve_ivp(
        lambda _, r: [_radius_rate(r[0], kappa_bar)],
        (0.0, t),
        [r0],
        method="DOP853",
        rtol=1e-12,
        atol=1e-14,
    )
    if not solution.success:
        raise WilflowError(f"radius ODE integration failed: {solution.message}")
    return float(solution.y[0, -1])


@dataclass(frozen=True)
class CircleErrors:
    e_x: float
    e_k1: float
    e_k2: float


def circle_errors(history: HistorySink, reference: Callable[[float], float]) -> CircleErrors:
    """Max over time levels 1..M and all vertices of the radius and curvature errors."""
    e_x = e_k1 = e_k2 = 0.0
    levels = zip(history.times, history.positions, history.curvature, history.kappa)
    next(levels, None)
    for t, x, curvature, kappa in levels:
        r = reference(t)
        e_x = max(e_x, float(np.abs(np.linalg.norm(x, axis=1) - r).max()))
        e_k1 = max(e_k1, float(np.abs(curvature + 1.0 / r).max()))
        e_k2 = max(e_k2, float(np.abs(kappa + 1.0 / r).max()))
    return CircleErrors(e_x, e_k1, e_k2)


def ordered_polygon(curve: SimplicialSurface) -> np.ndarray:
    """Vertex positions of a connected curve in traversal order."""
    if curve.ambient_dim != 2:
        raise InvalidSpec("manifold distance is defined for planar curves")
    successor = dict(zip(curve.simplices[:, 0].tolist(), curve.simplices[:, 1].tolist()))
    starts = set(successor) - set(successor.values())
    q = starts.pop() if starts else int(curve.simplices[0, 0])
    order = [q]
    while q in successor and len(order) <= curve.num_vertices:
        q = successor[q]
        if q == order[0]:
            break
        order.append(q)
    if len(order) != curve.num_vertices:
        raise InvalidSpec("curve must be a single connected polyline")
    return curve.vertices[order]


def _edges(polygon: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return polygon, np.roll(polygon, -1, axis=0)


def _self_intersects(polygon: np.ndarray) -> bool:
    p, q = _edges(polygon)
    n = len(p)
    if n < 4:
        return False

    def orient(a, b, c):
        ab, ac = b - a, c - a
        return np.sign(ab[..., 0] * ac[..., 1] - ab[..., 1] * ac[..., 0])

    i, j = np.triu_indices(n, k=2)
    keep = ~((i == 0) & (j == n - 1))
    i, j = i[keep], j[keep]
    d1 = orient(p[i], q[i], p[j])
    d2 = orient(p[i], q[i], q[j])
    d3 = orient(p[j], q[j], p[i])
    d4 = orient(p[j], q[j], q[i])
    return bool(np.any((d1 * d2 < 0) & (d3 * d4 < 0)))


def _crossings(polygon: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """x of every edge crossing per scanline (NaN where an edge misses the row)."""
    p, q = _edges(polygon)
    y = rows[:, None]
    hit = (p[None, :, 1] <= y) != (q[None, :, 1] <= y)
    dy = np.where(q[:, 1] == p[:, 1], 1.0, q[:, 1] - p[:, 1])
    x = p[None, :, 0] + (y - p[None, :, 1]) * (q[None, :, 0] - p[None, :, 0]) / dy[None, :]
    return np.where(hit, x, np.nan)


def manifold_distance(
    curve_a: np.ndarray | SimplicialSurface,
    curve_b: np.ndarray | SimplicialSurface,
    resolution: int = 2048,
) -> float:
    """Area of the symmetric difference of the regions two curves enclose.

    Open curves are closed by their endpoint chord. Rows are sampled at
    `resolution` cell centres across the joint bounding box; along each row
    the even-odd rule is applied exactly.
    """
    polygons = []
    for curve in (curve_a, curve_b):
        if isinstance(curve, SimplicialSurface):
            poly = ordered_polygon(curve)
        else:
            poly = np.asarray(curve, dtype=np.float64)
        if poly.ndim != 2 or poly.shape[1] != 2 or len(poly) < 3:
            raise InvalidSpec("curves must be (n >= 3, 2) arrays of vertex positions")
        if _self_intersects(poly):
            warnings.warn(
                "self-intersecting curve; even-odd area used", DegenerateRegion, stacklevel=2
            )
        polygons.append(poly)
    points = np.concatenate(polygons)
    y_min, y_max = float(points[:, 1].min()), float(points[:, 1].max())
    height = y_max - y_min
    if height == 0.0:
        return 0.0
    cell = height / resolution
    rows = y_min + (np.arange(resolution) + 0.5) * cell
    crossings = np.sort(np.concatenate([_crossings(p, rows) for p in polygons], axis=1), axis=1)
    sign = np.where(np.arange(crossings.shape[1]) % 2 == 1, 1.0, -1.0)
    lengths = np.nan_to_num(crossings, nan=0.0) @ sign
    return float(lengths.sum() * cell)


def interpolate_positions(
    times: Sequence[float], positions: Sequence[np.ndarray], t: float
) -> np.ndarray:
    """Piecewise-linear-in-time vertex positions between stored time levels."""
    times_arr = np.asarray(times, dtype=np.float64)
    if not times_arr[0] - 1e-12 <= t <= times_arr[-1] + 1e-12:
        raise ValueError(f"t={t} outside [{times_arr[0]}, {times_arr[-1]}]")
    if len(times_arr) == 1:
        return np.array(positions[0])
    m = int(np.clip(np.searchsorted(times_arr, t, side="right") - 1, 0, len(times_arr) - 2))
    theta = (t - times_arr[m]) / (times_arr[m + 1] - times_arr[m])
    theta = min(max(theta, 0.0), 1.0)
    return (1.0 - theta) * positions[m] + theta * positions[m + 1]


def eoc(errors: Sequence[float], h: Sequence[float]) -> list[float]:
    """log(e_i/e_{i+1}) / log(h_i/h_{i+1}); the first entry is NaN."""
    orders = [math.nan]
    for i in range(len(errors) - 1):
        if errors[i] > 0 and errors[i + 1] > 0:
            orders.append(math.log(errors[i] / errors[i + 1]) / math.log(h[i] / h[i + 1]))
        else:
            orders.append(math.nan)
    return orders


@dataclass(frozen=True)
class CaseSpec:
    """One convergence case; segment errors are measured at `md_time` (capped at `t_end`)."""

    name: str
    kappa_bar: float
    t_end: float = 2.0
    base_elements: int = 32
    radius: float = 1.0
    md_time: float = 0.5

    def __post_init__(self) -> None:
        if self.name not in CASES:
            raise InvalidSpec(f"unknown convergence case {self.name!r}; expected one of {CASES}")
        if self.md_time <= 0.0:
            raise InvalidSpec(f"md_time must be positive, got {self.md_time}")

    @property
    def measure_time(self) -> float:
        return min(self.md_time, self.t_end)

    def solver_config(self, dt: float) -> SolverConfig:
        # circles and arcs start from the exact curvature of their circle
        return SolverConfig(
            kappa_bar=self.kappa_bar, dt=dt, t_end=self.t_end, analytic_sphere_radius=self.radius
        )

    @property
    def closed(self) -> bool:
        return self.name == "closed_circle"

    def level(self, index: int) -> tuple[SimplicialSurface, float, float]:
        """(initial mesh, h, Δt) at refinement level `index`; Δt = (2⁵h/5)²."""
        elements = self.base_elements * 2**index
        if self.closed:
            mesh = circle_nonuniform(elements, self.radius)
            h = 1.0 / elements
        else:
            mesh = circle_segment(elements, self.radius, SEGMENT_ANGLE)
            clamped = self.name == "segment_clamped"
            condition = BoundaryCondition.CLAMPED if clamped else BoundaryCondition.NAVIER
            mesh = mesh.with_conditions({0: condition})
            h = self.radius * SEGMENT_ANGLE / elements
        dt = (2**5 * h / 5.0) ** 2
        if self.t_end > 0:
            dt = self.t_end / math.ceil(self.t_end / dt - 1e-9)
        return mesh, h, dt


@dataclass(frozen=True)
class ConvergenceReport:
    case: str
    table: pd.DataFrame

    def to_csv(self, path: Path) -> Path:
        self.table.to_csv(path, index=False, float_format="%.17g")
        return path

    def orders(self) -> pd.DataFrame:
        return self.table[[c for c in self.table.columns if c.startswith("eoc")]]


def _run_level(
    case: CaseSpec, index: int, settings: Settings | None
) -> tuple[float, float, HistorySink]:
    mesh, h, dt = case.level(index)
    config = case.solver_config(dt)
    history = HistorySink()
    try:
        run(mesh, config, [history], settings)
    except WilflowError as exc:
        exc.add_note(f"convergence level {index} (J={mesh.num_simplices})")
        raise
    logger.info("%s level %d: J=%d, dt=%.3e done", case.name, index, mesh.num_simplices, dt)
    return h, dt, history


def convergence_study(
    case: CaseSpec,
    levels: int,
    settings: Settings | None = None,
    md_resolution: int | None = None,
) -> ConvergenceReport:
    """Run every level (in parallel up to WILFLOW_THREADS) and tabulate errors and EOCs."""
    if levels < 2:
        raise InvalidSpec("need ≥ 2 levels for EOC")
    settings = settings or Settings.from_env()
    resolution = md_resolution or settings.md_resolution
    workers = max(1, min(settings.threads, levels))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(partial(_run_level, case, settings=settings), range(levels)))
    hs = [r[0] for r in results]
    dts = [r[1] for r in results]

    if case.closed:
        reference = partial(circle_radius_reference, case.radius, case.kappa_bar)
        errors = [circle_errors(history, reference) for _, _, history in results]
        table = pd.DataFrame(
            {
                "h": hs,
                "dt": dts,
                "e_x": [e.e_x for e in errors],
                "e_k1": [e.e_k1 for e in errors],
                "e_k2": [e.e_k2 for e in errors],
            }
        )
        for column in ("x", "k1", "k2"):
            table[f"eoc_{column}"] = eoc(table[f"e_{column}"].tolist(), hs)
        return ConvergenceReport(case.name, table[CIRCLE_COLUMNS])

    at = case.measure_time
    distances = []
    for (_, _, coarse), (_, _, fine) in zip(results, results[1:]):
        x = interpolate_positions(coarse.times, coarse.positions, at)
        y = interpolate_positions(fine.times, fine.positions, at)
        distances.append(manifold_distance(x, y, resolution))
    table = pd.DataFrame({"h": hs[:-1], "dt": dts[:-1], "md": distances})
    table["eoc"] = eoc(distances, hs[:-1])
    logger.info(
        "%s: h is the arc length over J, md against the next finer level at t=%g", case.name, at
    )
    return ConvergenceReport(case.name, table[SEGMENT_COLUMNS])
