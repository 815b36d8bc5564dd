"""
Road and terrain tessellation with OBJ/MTL export.

Roads are swept as triangle strips across their lane boundaries at a fixed
longitudinal step; terrain is a regular grid over DEM cell centers.
"""

import logging
import math
import time
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import EmptyMeshError, PreconditionError, RoadValidationError, TwinmapError
from .odr_model import (
    HEADING_TOLERANCE,
    OdrMap,
    OdrRoad,
    errors_only,
    eval_elevation,
    eval_plan_view,
    lane_boundary_t,
    section_span,
    validate_road,
)
from .templating import render
from .terrain import Dem, fill_nodata

logger = logging.getLogger(__name__)

Material = Literal["road", "sidewalk", "shoulder", "terrain"]

MATERIAL_ORDER: Tuple[str, ...] = ("road", "sidewalk", "shoulder", "terrain")
MATERIAL_COLORS: Dict[str, Tuple[float, float, float]] = {
    "road": (0.2, 0.2, 0.2),
    "sidewalk": (0.6, 0.6, 0.6),
    "shoulder": (0.4, 0.4, 0.35),
    "terrain": (0.3, 0.5, 0.25),
}
LANE_MATERIAL = {"driving": "road", "none": "road", "sidewalk": "sidewalk", "shoulder": "shoulder"}
MTL_NAME = "twinmap.mtl"
MIN_TRIANGLE_AREA = 1e-10
ZERO_WIDTH = 1e-9


@dataclass(frozen=True, eq=False)
class Mesh:
    vertices: np.ndarray
    triangles: np.ndarray
    materials: Tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "vertices", np.asarray(self.vertices, dtype=float).reshape(-1, 3))
        object.__setattr__(self, "triangles", np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3))
        object.__setattr__(self, "materials", tuple(self.materials))
        if len(self.materials) != len(self.triangles):
            raise PreconditionError("one material label per triangle is required")

    @property
    def vertex_count(self) -> int:
        return len(self.vertices)

    @property
    def triangle_count(self) -> int:
        return len(self.triangles)

    def signed_areas(self) -> np.ndarray:
        """Planimetric signed area per triangle; positive is counter-clockwise from +z."""
        a, b, c = (self.vertices[self.triangles[:, k], :2] for k in range(3))
        ab, ac = b - a, c - a
        return 0.5 * (ab[:, 0] * ac[:, 1] - ab[:, 1] * ac[:, 0])

    def check(self) -> List[str]:
        """Problems with indices, degenerate faces or orientation."""
        problems = []
        if len(self.triangles) == 0:
            return problems
        if self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices):
            return ["triangle index out of range"]
        a, b, c = (self.vertices[self.triangles[:, k]] for k in range(3))
        areas = 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)
        for index in np.flatnonzero(areas <= MIN_TRIANGLE_AREA):
            problems.append(f"triangle {index} is degenerate")
        for index in np.flatnonzero(self.signed_areas() <= 0):
            problems.append(f"triangle {index} is not counter-clockwise")
        return problems

    def edge_use_counts(self) -> Counter:
        counts: Counter = Counter()
        for i, j, k in self.triangles.tolist():
            for edge in ((i, j), (j, k), (k, i)):
                counts[tuple(sorted(edge))] += 1
        return counts


@dataclass(frozen=True)
class TessellationParams:
    ds: float = 1.0
    terrain_skirt: float = 50.0

    def __post_init__(self):
        if not self.ds > 0:
            raise PreconditionError("ds must be positive")
        if self.terrain_skirt < 0:
            raise PreconditionError("terrain_skirt cannot be negative")


def slice_stations(start: float, end: float, ds: float) -> np.ndarray:
    """start, start+ds, ... below end, then end itself."""
    count = int(np.floor((end - start) / ds)) + 1
    stations = start + np.arange(count) * ds
    stations = stations[stations < end - 1e-9]
    return np.append(stations, end)


def _heading_breaks(road: OdrRoad) -> List[Tuple[float, tuple, tuple]]:
    """(s, incoming pose, outgoing pose) at every segment join where the heading jumps."""
    breaks = []
    for previous, segment in zip(road.plan_view[:-1], road.plan_view[1:]):
        incoming = previous.end_pose()
        if abs(math.remainder(segment.hdg - incoming[2], 2.0 * math.pi)) > HEADING_TOLERANCE:
            breaks.append((segment.s, incoming, segment.pose(0.0)))
    return breaks


def _section_slices(road: OdrRoad, start: float, end: float, ds: float, breaks) -> List[Tuple[float, tuple]]:
    """
    (s, pose) rows for one lane section.

    A heading break inside the section yields two rows at the same s, the
    first posed on the incoming segment and the second on the outgoing one.
    A break at the section end poses the last row on the incoming segment.
    """
    rows = [(float(s), eval_plan_view(road, min(float(s), road.length)))
            for s in slice_stations(start, end, ds)]
    for s_break, incoming, outgoing in breaks:
        if s_break < start - 1e-9 or s_break > end + 1e-9:
            continue
        if s_break <= start + 1e-9:
            rows[0] = (rows[0][0], outgoing)
            continue
        if s_break >= end - 1e-9:
            rows[-1] = (rows[-1][0], incoming)
            continue
        index = next(i for i, (s, _) in enumerate(rows) if s > s_break - 1e-9)
        if abs(rows[index][0] - s_break) <= 1e-9:
            s_break = rows.pop(index)[0]
        rows[index:index] = [(s_break, incoming), (s_break, outgoing)]
    return rows


def _planar_area(vertices, triangle) -> float:
    (ax, ay, _), (bx, by, _), (cx, cy, _) = (vertices[i] for i in triangle)
    return 0.5 * ((bx - ax) * (cy - ay) - (by - ay) * (cx - ax))


def tessellate_road(road: OdrRoad, params: Optional[TessellationParams] = None) -> Mesh:
    """
    Sweep a road's lane boundaries into a triangle strip per lane section.

    Each slice holds one vertex per lane boundary, from the outermost left
    boundary to the outermost right one. Between slices every adjacent
    boundary pair yields two triangles labelled by the lane between them;
    a triangle whose slice edge has zero width is left out. Where the plan
    view turns abruptly between two segments the strip is split by a pair
    of slices at the join and the wedge on the outer side of the turn is
    filled.

    Raises:
        RoadValidationError: the road has validation errors
    """
    params = params or TessellationParams()
    errors = errors_only(validate_road(road))
    if errors:
        raise RoadValidationError(road.id, errors)

    breaks = _heading_breaks(road)
    vertices: List[Tuple[float, float, float]] = []
    triangles: List[Tuple[int, int, int]] = []
    materials: List[str] = []
    for index, section in enumerate(road.lane_sections):
        start = section.s
        rows = _section_slices(road, start, start + section_span(road, index), params.ds, breaks)
        boundaries = section.boundary_ids()
        count = len(boundaries)
        labels = []
        for left_id, right_id in zip(boundaries[:-1], boundaries[1:]):
            lane_id = left_id if left_id > 0 else right_id
            labels.append(LANE_MATERIAL[section.lane(lane_id).type])

        base = len(vertices)
        offsets = []
        for s, (x, y, hdg) in rows:
            z = eval_elevation(road, min(s, road.length))
            nx, ny = -math.sin(hdg), math.cos(hdg)
            ts = [lane_boundary_t(section, lane_id, s - start) for lane_id in boundaries]
            offsets.append(ts)
            vertices.extend((x + t * nx, y + t * ny, z) for t in ts)

        for k in range(len(rows) - 1):
            wedge = rows[k][0] == rows[k + 1][0]
            for b in range(count - 1):
                a_ = base + k * count + b
                b_ = a_ + 1
                c_ = base + (k + 1) * count + b + 1
                d_ = c_ - 1
                if wedge:
                    keep = [tri for tri in ((a_, b_, c_), (a_, c_, d_))
                            if _planar_area(vertices, tri) > MIN_TRIANGLE_AREA]
                else:
                    keep = []
                    if abs(offsets[k][b] - offsets[k][b + 1]) > ZERO_WIDTH:
                        keep.append((a_, b_, c_))
                    if abs(offsets[k + 1][b] - offsets[k + 1][b + 1]) > ZERO_WIDTH:
                        keep.append((a_, c_, d_))
                triangles.extend(keep)
                materials.extend([labels[b]] * len(keep))

    return Mesh(np.array(vertices), np.array(triangles, dtype=np.int64), tuple(materials))


def tessellate_terrain(
    dem: Dem,
    bounds: Tuple[float, float, float, float],
    params: Optional[TessellationParams] = None,
) -> Mesh:
    """
    Grid mesh over the DEM cell centers inside bounds.

    Args:
        dem: Terrain grid; nodata cells are filled first
        bounds: (xmin, ymin, xmax, ymax)

    Raises:
        EmptyMeshError: fewer than 2x2 cell centers inside bounds
    """
    xmin, ymin, xmax, ymax = bounds
    values = fill_nodata(dem.values, dem.nodata)
    xs = dem.xll + (np.arange(dem.ncols) + 0.5) * dem.cell_size
    ys_north_first = dem.yll + (dem.nrows - np.arange(dem.nrows) - 0.5) * dem.cell_size
    cols = np.flatnonzero((xs >= xmin) & (xs <= xmax))
    rows = np.flatnonzero((ys_north_first >= ymin) & (ys_north_first <= ymax))[::-1]
    if len(cols) < 2 or len(rows) < 2:
        raise EmptyMeshError(f"bounds {bounds} cover fewer than 2x2 DEM samples")

    nx, ny = len(cols), len(rows)
    grid_x, grid_y = np.meshgrid(xs[cols], ys_north_first[rows])
    grid_z = values[np.ix_(rows, cols)]
    vertices = np.column_stack([grid_x.ravel(), grid_y.ravel(), grid_z.ravel()])

    j, i = np.meshgrid(np.arange(ny - 1), np.arange(nx - 1), indexing="ij")
    a = (j * nx + i).ravel()
    b = a + 1
    c = a + nx
    d = c + 1
    triangles = np.empty((2 * len(a), 3), dtype=np.int64)
    triangles[0::2] = np.column_stack([a, b, d])
    triangles[1::2] = np.column_stack([a, d, c])
    return Mesh(vertices, triangles, ("terrain",) * len(triangles))


@dataclass
class MeshBatch:
    meshes: List[Tuple[str, Mesh]] = field(default_factory=list)
    failures: Dict[str, Exception] = field(default_factory=dict)
    timings: Dict[str, float] = field(default_factory=dict)


def _tessellate_timed(road: OdrRoad, params: TessellationParams):
    started = time.perf_counter()
    try:
        mesh, error = tessellate_road(road, params), None
    except TwinmapError as exc:
        mesh, error = None, exc
    return road.id, mesh, error, time.perf_counter() - started


def generate_all(
    odr_map: OdrMap,
    dem: Dem,
    params: Optional[TessellationParams] = None,
    workers: int = 1,
) -> MeshBatch:
    """
    Tessellate every road plus one terrain mesh.

    Meshes come back as road_<id> ascending by id, terrain last. Failed
    roads are collected in failures and the rest are still returned.

    Args:
        odr_map: Map to tessellate
        dem: Terrain grid
        params: Tessellation settings
        workers: Processes for per-road tessellation

    Returns:
        MeshBatch of named meshes, failures and per-mesh timings
    """
    params = params or TessellationParams()
    if workers < 1:
        raise PreconditionError("workers must be >= 1")
    roads = sorted(odr_map.roads, key=lambda r: r.id)
    batch = MeshBatch()

    if workers == 1:
        results = [_tessellate_timed(road, params) for road in roads]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_tessellate_timed, roads, [params] * len(roads)))

    for road_id, mesh, error, seconds in results:
        batch.timings[f"road_{road_id}"] = seconds
        if error is not None:
            logger.warning(f"Road {road_id} not tessellated: {error}")
            batch.failures[road_id] = error
        else:
            batch.meshes.append((f"road_{road_id}", mesh))

    if batch.meshes:
        stacked = np.vstack([mesh.vertices for _, mesh in batch.meshes])
        skirt = params.terrain_skirt
        bounds = (stacked[:, 0].min() - skirt, stacked[:, 1].min() - skirt,
                  stacked[:, 0].max() + skirt, stacked[:, 1].max() + skirt)
    else:
        bounds = dem.center_bounds()

    started = time.perf_counter()
    try:
        batch.meshes.append(("terrain", tessellate_terrain(dem, bounds, params)))
    except EmptyMeshError as exc:
        logger.warning(f"Terrain not tessellated: {exc}")
        batch.failures["terrain"] = exc
    batch.timings["terrain"] = time.perf_counter() - started
    return batch


# ---------------------------------------------------------------------------
# OBJ export
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExportedFile:
    path: Path
    vertices: int
    faces: int


@dataclass(frozen=True)
class ExportReport:
    files: Tuple[ExportedFile, ...]
    material_library: Path


def obj_text(name: str, mesh: Mesh) -> str:
    lines = [f"mtllib {MTL_NAME}", f"o {name}"]
    lines.extend("v %.6f %.6f %.6f" % tuple(vertex) for vertex in mesh.vertices.tolist())
    labels = np.array(mesh.materials, dtype=object)
    for material in MATERIAL_ORDER:
        selected = mesh.triangles[labels == material] if len(labels) else mesh.triangles[:0]
        if len(selected) == 0:
            continue
        lines.append(f"usemtl {material}")
        lines.extend("f %d %d %d" % (i + 1, j + 1, k + 1) for i, j, k in selected.tolist())
    return "\n".join(lines) + "\n"


def mtl_text() -> str:
    return render("twinmap.mtl.j2",
                  materials=[(name, MATERIAL_COLORS[name]) for name in MATERIAL_ORDER])


def export_obj(meshes: Sequence[Tuple[str, Mesh]], directory: Union[str, Path]) -> ExportReport:
    """
    Write one <name>.obj per mesh plus the shared twinmap.mtl.

    Returns:
        ExportReport with the vertex and face count of each file
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = []
    for name, mesh in meshes:
        path = directory / f"{name}.obj"
        path.write_text(obj_text(name, mesh), encoding="utf-8", newline="\n")
        files.append(ExportedFile(path, mesh.vertex_count, mesh.triangle_count))
    library = directory / MTL_NAME
    library.write_text(mtl_text(), encoding="utf-8", newline="\n")
    logger.info(f"Exported {len(files)} OBJ file(s) to {directory}")
    return ExportReport(files=tuple(files), material_library=library)


def read_obj_counts(path: Union[str, Path]) -> Tuple[int, int]:
    """(vertex count, face count) read back from an OBJ file."""
    vertices = faces = 0
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            if line.startswith("v "):
                vertices += 1
            elif line.startswith("f "):
                faces += 1
    return vertices, faces
