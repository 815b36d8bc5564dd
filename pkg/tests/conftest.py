"""Shared fixtures: synthetic OSM extracts, DEMs, point clouds and roads."""

import math
from typing import Callable, Dict, List, Sequence, Tuple

import numpy as np
import pytest

from twinmap.geo_ingest import LocalFrame, unproject
from twinmap.odr_model import (
    Arc,
    ElevPoly,
    GeometrySegment,
    Lane,
    LaneSection,
    Line,
    OdrRoad,
    WidthPoly,
)
from twinmap.registration import RigidTransform2D, resample_polyline
from twinmap.terrain import Dem, sample_heights

FIXTURE_FRAME = LocalFrame(48.0, 11.0)


def osm_xml(
    nodes: Sequence[Tuple[int, float, float]],
    ways: Sequence[Tuple[int, Sequence[int], Dict[str, str]]],
) -> str:
    """OSM XML text from (id, lat, lon) nodes and (id, refs, tags) ways."""
    lines = ['<?xml version="1.0" encoding="UTF-8"?>', '<osm version="0.6" generator="tests">']
    for node_id, lat, lon in nodes:
        lines.append(f'  <node id="{node_id}" lat="{lat!r}" lon="{lon!r}"/>')
    for way_id, refs, tags in ways:
        lines.append(f'  <way id="{way_id}">')
        lines.extend(f'    <nd ref="{ref}"/>' for ref in refs)
        lines.extend(f'    <tag k="{k}" v="{v}"/>' for k, v in tags.items())
        lines.append("  </way>")
    lines.append("</osm>")
    return "\n".join(lines) + "\n"


def local_osm_xml(
    points: Dict[int, Tuple[float, float]],
    ways: Sequence[Tuple[int, Sequence[int], Dict[str, str]]],
    frame: LocalFrame = FIXTURE_FRAME,
) -> str:
    """OSM XML whose nodes project to the given local (x, y) in frame."""
    nodes = []
    for node_id, (x, y) in sorted(points.items()):
        lat, lon = unproject(x, y, frame)
        nodes.append((node_id, lat, lon))
    return osm_xml(nodes, ways)


def grid_dem(
    height: Callable[[np.ndarray, np.ndarray], np.ndarray],
    xll: float = -200.0,
    yll: float = -200.0,
    cell_size: float = 4.0,
    ncols: int = 100,
    nrows: int = 100,
    nodata: float = -9999.0,
) -> Dem:
    """Dem whose cell centers take height(x, y)."""
    xs = xll + (np.arange(ncols) + 0.5) * cell_size
    ys = yll + (nrows - np.arange(nrows) - 0.5) * cell_size
    gx, gy = np.meshgrid(xs, ys)
    return Dem(ncols, nrows, xll, yll, cell_size, nodata, height(gx, gy))


def flat_dem(z: float = 5.0, **kwargs) -> Dem:
    return grid_dem(lambda x, y: np.full_like(x, z), **kwargs)


def dem_text(dem: Dem) -> str:
    lines = [
        f"ncols {dem.ncols}",
        f"nrows {dem.nrows}",
        f"xllcorner {dem.xll!r}",
        f"yllcorner {dem.yll!r}",
        f"cellsize {dem.cell_size!r}",
        f"NODATA_value {dem.nodata!r}",
    ]
    lines.extend(" ".join(repr(float(v)) for v in row) for row in dem.values)
    return "\n".join(lines) + "\n"


def lane_section(left: Sequence[float] = (3.5,), right: Sequence[float] = (3.5,),
                 lane_type: str = "driving") -> LaneSection:
    return LaneSection(
        s=0.0,
        left=tuple(Lane(k + 1, lane_type, (WidthPoly(0.0, w),)) for k, w in enumerate(left)),
        center=Lane(0, "none"),
        right=tuple(Lane(-(k + 1), lane_type, (WidthPoly(0.0, w),)) for k, w in enumerate(right)),
    )


def straight_road(road_id: str = "A", length: float = 10.0, x: float = 0.0, y: float = 0.0,
                  hdg: float = 0.0, z: float = 0.0, section: LaneSection = None) -> OdrRoad:
    return OdrRoad(
        id=road_id,
        length=length,
        plan_view=(GeometrySegment(0.0, x, y, hdg, length, Line()),),
        elevation_profile=(ElevPoly(0.0, z),),
        lane_sections=(section or lane_section(),),
    )


def arc_road(road_id: str = "C", curvature: float = 0.1, length: float = math.pi / 0.2,
             section: LaneSection = None) -> OdrRoad:
    return OdrRoad(
        id=road_id,
        length=length,
        plan_view=(GeometrySegment(0.0, 0.0, 0.0, 0.0, length, Arc(curvature)),),
        elevation_profile=(ElevPoly(0.0, 1.0, 0.01),),
        lane_sections=(section or lane_section(),),
    )


# ---------------------------------------------------------------------------
# City-block fixture: ~20 road ways on a grid, one bridge over one road
# ---------------------------------------------------------------------------

MISALIGNMENT = RigidTransform2D(math.radians(1.0), 2.0, 1.0)
BRIDGE_ENDS = ((-50.0, -20.0), (-50.0, 20.0))
STREET_COORDS = (-100.0, 0.0, 100.0)
STREET_BREAKS = (-120.0, -100.0, 0.0, 100.0, 120.0)


def city_block_layout():
    """Local node positions and ways of the city-block fixture."""
    points: Dict[int, Tuple[float, float]] = {}
    index: Dict[Tuple[float, float], int] = {}

    def node(x, y):
        key = (round(x, 6), round(y, 6))
        if key not in index:
            index[key] = 1000 + len(index)
            points[index[key]] = (x, y)
        return index[key]

    ways: List[Tuple[int, List[int], Dict[str, str]]] = []
    way_id = 1
    for horizontal in (True, False):
        for fixed in STREET_COORDS:
            for start, end in zip(STREET_BREAKS[:-1], STREET_BREAKS[1:]):
                stations = np.arange(start, end + 1e-9, 20.0)
                if stations[-1] < end:
                    stations = np.append(stations, end)
                refs = [node(s, fixed) if horizontal else node(fixed, s) for s in stations]
                tags = {"highway": "residential", "name": f"Street {way_id}"}
                ways.append((way_id, refs, tags))
                way_id += 1

    (bx0, by0), (bx1, by1) = BRIDGE_ENDS
    bridge_refs = [node(bx0, by0), node(bx0, 0.5 * (by0 + by1)), node(bx1, by1)]
    ways.append((900, bridge_refs, {"highway": "secondary", "bridge": "yes", "layer": "1"}))

    foot_refs = [node(-150.0, 150.0), node(-140.0, 150.0)]
    ways.append((950, foot_refs, {"highway": "footway"}))
    building_refs = [node(150.0, 150.0), node(160.0, 150.0), node(160.0, 160.0), node(150.0, 150.0)]
    ways.append((960, building_refs, {"building": "yes"}))
    return points, ways


def city_block_dem() -> Dem:
    """Gentle slope with embankments under the true bridge abutments."""
    ends = MISALIGNMENT.apply(BRIDGE_ENDS)

    def height(x, y):
        z = 10.0 + 0.02 * x + 0.01 * y
        for ex, ey in ends:
            z = z + 8.0 * np.exp(-((x - ex) ** 2 + (y - ey) ** 2) / (2 * 5.0 ** 2))
        return z
    return grid_dem(height)


def city_block_cloud(dem: Dem, clutter: int = 4000, seed: int = 7) -> np.ndarray:
    """Ground returns along the true (misaligned) streets plus elevated clutter."""
    points, ways = city_block_layout()
    ground = []
    for way_id, refs, tags in ways:
        if tags.get("highway") != "residential":
            continue
        dense = resample_polyline([points[r] for r in refs], 0.25)
        ground.append(MISALIGNMENT.apply(dense))
    ground = np.vstack(ground)
    ground_z = sample_heights(dem, ground[:, 0], ground[:, 1])

    rng = np.random.default_rng(seed)
    clutter_xy = rng.uniform(-150.0, 150.0, size=(clutter, 2))
    clutter_z = sample_heights(dem, clutter_xy[:, 0], clutter_xy[:, 1]) + rng.uniform(2.0, 8.0, clutter)
    return np.vstack([
        np.column_stack([ground, ground_z]),
        np.column_stack([clutter_xy, clutter_z]),
    ])


def xyz_text(points: np.ndarray) -> str:
    return "".join(f"{x!r} {y!r} {z!r}\n" for x, y, z in points.tolist())


@pytest.fixture
def city_block(tmp_path):
    """City-block inputs written to disk: osm, dem and cloud paths."""
    points, ways = city_block_layout()
    dem = city_block_dem()
    osm_path = tmp_path / "city.osm"
    dem_path = tmp_path / "city.asc"
    cloud_path = tmp_path / "city.xyz"
    osm_path.write_text(local_osm_xml(points, ways))
    dem_path.write_text(dem_text(dem))
    cloud_path.write_text(xyz_text(city_block_cloud(dem)))
    return {"osm": osm_path, "dem": dem_path, "cloud": cloud_path, "dem_obj": dem}
