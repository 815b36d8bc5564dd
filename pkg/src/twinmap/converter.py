"""
Road graph to OpenDRIVE conversion.

Fits plan-view geometry to each edge, derives lanes from OSM tags, fits
elevation profiles against the DEM (linear decks for bridges), links roads
across degree-2 nodes and checks bridge clearances.
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Literal, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.interpolate import CubicSpline
from shapely.geometry import LineString, Point
from shapely.strtree import STRtree

from .errors import (
    ConfigError,
    ConversionError,
    DegenerateInputError,
    MissingTerrainError,
    NodataError,
    OutOfBoundsError,
    PreconditionError,
    RoadValidationError,
    UnmappedClassError,
)
from .geo_ingest import RoadEdge, RoadGraph
from .odr_model import (
    Arc,
    ElevPoly,
    GeometrySegment,
    Lane,
    LaneSection,
    Line,
    OdrHeader,
    OdrMap,
    OdrRoad,
    RoadLink,
    WidthPoly,
    errors_only,
    eval_elevation,
    eval_reference,
    nearest_s,
    reference_length,
    validate,
)
from .terrain import Dem, sample_heights

logger = logging.getLogger(__name__)

FitMode = Literal["polyline", "arcfit"]

MAX_FIT_RADIUS = 1e6
COINCIDENT = 1e-6


@dataclass(frozen=True)
class LaneRule:
    lanes_left: int
    lanes_right: int
    width: float

    def __post_init__(self):
        if self.lanes_left < 0 or self.lanes_right < 0:
            raise ConfigError("lane counts cannot be negative")
        if self.lanes_left + self.lanes_right < 1:
            raise ConfigError("a lane rule needs at least one driving lane")
        if not self.width > 0:
            raise ConfigError("lane width must be positive")


DEFAULT_CLASS_RULES: Dict[str, LaneRule] = {
    "motorway": LaneRule(2, 2, 3.7),
    "trunk": LaneRule(2, 2, 3.7),
    "primary": LaneRule(1, 1, 3.5),
    "secondary": LaneRule(1, 1, 3.5),
    "tertiary": LaneRule(1, 1, 3.5),
    "residential": LaneRule(1, 1, 3.25),
    "unclassified": LaneRule(1, 1, 3.25),
    "living_street": LaneRule(1, 1, 3.0),
    "service": LaneRule(1, 1, 3.0),
}


@dataclass(frozen=True)
class ConversionConfig:
    fit_mode: FitMode = "polyline"
    arc_tolerance: float = 0.25
    simplify_epsilon: float = 0.10
    elevation_sample_step: float = 5.0
    default_lane_width: float = 3.5
    bridge_clearance_min: float = 4.5
    sidewalk_width: float = 1.8
    shoulder_width: float = 1.0
    name: str = "twinmap"
    class_rules: Dict[str, LaneRule] = field(default_factory=lambda: dict(DEFAULT_CLASS_RULES))

    def __post_init__(self):
        if self.fit_mode not in ("polyline", "arcfit"):
            raise ConfigError(f"fit_mode must be 'polyline' or 'arcfit', got {self.fit_mode!r}")
        for name in ("arc_tolerance", "simplify_epsilon", "elevation_sample_step",
                     "default_lane_width", "bridge_clearance_min", "sidewalk_width",
                     "shoulder_width"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")

    @property
    def fit_tolerance(self) -> float:
        return max(self.arc_tolerance, self.simplify_epsilon)

    @classmethod
    def from_mapping(cls, values: Mapping[str, str], **overrides) -> "ConversionConfig":
        """
        Build from flat configuration keys.

        Reads convert.<field> keys and class.<name>.lanes_left|lanes_right|width.
        """
        kwargs = {}
        floats = {"arc_tolerance", "simplify_epsilon", "elevation_sample_step",
                  "default_lane_width", "bridge_clearance_min", "sidewalk_width",
                  "shoulder_width"}
        partial_rules: Dict[str, Dict[str, str]] = {}
        for key, value in values.items():
            parts = key.split(".")
            if parts[0] == "convert" and len(parts) == 2:
                name = parts[1]
                if name in floats:
                    kwargs[name] = _parse_float(key, value)
                elif name in ("fit_mode", "name"):
                    kwargs[name] = value
                else:
                    raise ConfigError(f"unknown key '{key}'")
            elif parts[0] == "class" and len(parts) == 3:
                if parts[2] not in ("lanes_left", "lanes_right", "width"):
                    raise ConfigError(f"unknown key '{key}'")
                partial_rules.setdefault(parts[1], {})[parts[2]] = value
        kwargs.update({k: v for k, v in overrides.items() if v is not None})

        default_width = kwargs.get("default_lane_width", cls.default_lane_width)
        rules = dict(DEFAULT_CLASS_RULES)
        for highway_class, fields_ in sorted(partial_rules.items()):
            base = rules.get(highway_class, LaneRule(1, 1, default_width))
            rules[highway_class] = LaneRule(
                lanes_left=_parse_int(f"class.{highway_class}.lanes_left",
                                      fields_.get("lanes_left", str(base.lanes_left))),
                lanes_right=_parse_int(f"class.{highway_class}.lanes_right",
                                       fields_.get("lanes_right", str(base.lanes_right))),
                width=_parse_float(f"class.{highway_class}.width",
                                   fields_.get("width", repr(base.width))),
            )
        return cls(class_rules=rules, **kwargs)


def _parse_float(key: str, value: str) -> float:
    try:
        return float(value)
    except ValueError:
        raise ConfigError(f"'{key}' expects a number, got {value!r}")


def _parse_int(key: str, value: str) -> int:
    try:
        return int(value)
    except ValueError:
        raise ConfigError(f"'{key}' expects an integer, got {value!r}")


# ---------------------------------------------------------------------------
# Lanes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LaneSpec:
    """Lanes on each side, listed from the center line outward."""
    left: Tuple[Tuple[str, float], ...]
    right: Tuple[Tuple[str, float], ...]

    def driving_count(self) -> int:
        return sum(1 for lane_type, _ in self.left + self.right if lane_type == "driving")


def _tag_count(tags: Mapping[str, str], key: str) -> Optional[int]:
    value = tags.get(key)
    if value is None:
        return None
    try:
        count = int(value.strip())
    except ValueError:
        logger.debug(f"Ignoring non-integer {key}={value!r}")
        return None
    return count if count >= 0 else None


def _oneway(tags: Mapping[str, str]) -> Optional[str]:
    value = tags.get("oneway", "").strip().lower()
    if value in ("yes", "true", "1"):
        return "forward"
    if value in ("-1", "reverse"):
        return "backward"
    return None


def _sides(value: Optional[str]) -> Tuple[bool, bool]:
    value = (value or "").strip().lower()
    if value in ("both", "yes"):
        return True, True
    return value == "left", value == "right"


def lanes_from_tags(tags: Mapping[str, str], config: Optional[ConversionConfig] = None) -> LaneSpec:
    """
    Lane layout for a way.

    Precedence: lanes:forward/lanes:backward, then lanes split by oneway,
    then the class table. Shoulders sit outside driving lanes, sidewalks
    outermost.

    Args:
        tags: OSM tags, must include highway
        config: Conversion settings holding the class table

    Returns:
        LaneSpec with (type, width) per lane from the center outward
    """
    config = config or ConversionConfig()
    highway_class = tags.get("highway")
    if highway_class is None:
        raise PreconditionError("tags have no 'highway' key")
    rule = config.class_rules.get(highway_class)
    if rule is None:
        raise UnmappedClassError(highway_class)

    oneway = _oneway(tags)
    total = _tag_count(tags, "lanes")
    forward = _tag_count(tags, "lanes:forward")
    backward = _tag_count(tags, "lanes:backward")

    if forward is not None or backward is not None:
        if forward is None:
            forward = max(total - backward, 0) if total is not None else (
                0 if oneway == "backward" else rule.lanes_right)
        if backward is None:
            backward = max(total - forward, 0) if total is not None else (
                0 if oneway == "forward" else rule.lanes_left)
        right, left = forward, backward
    elif total is not None and total > 0:
        if oneway == "forward":
            right, left = total, 0
        elif oneway == "backward":
            right, left = 0, total
        else:
            right, left = math.ceil(total / 2), total // 2
    elif oneway == "forward":
        right, left = rule.lanes_right, 0
    elif oneway == "backward":
        right, left = 0, rule.lanes_right
    else:
        right, left = rule.lanes_right, rule.lanes_left

    if right + left == 0:
        right, left = rule.lanes_right, rule.lanes_left

    left_lanes = [("driving", rule.width)] * left
    right_lanes = [("driving", rule.width)] * right
    shoulder_left, shoulder_right = _sides(tags.get("shoulder"))
    if shoulder_left:
        left_lanes.append(("shoulder", config.shoulder_width))
    if shoulder_right:
        right_lanes.append(("shoulder", config.shoulder_width))
    sidewalk_left, sidewalk_right = _sides(tags.get("sidewalk"))
    if sidewalk_left:
        left_lanes.append(("sidewalk", config.sidewalk_width))
    if sidewalk_right:
        right_lanes.append(("sidewalk", config.sidewalk_width))
    return LaneSpec(left=tuple(left_lanes), right=tuple(right_lanes))


def lane_section_from_spec(spec: LaneSpec) -> LaneSection:
    def lanes(entries, sign):
        return tuple(
            Lane(id=sign * (k + 1), type=lane_type, widths=(WidthPoly(0.0, width),))
            for k, (lane_type, width) in enumerate(entries)
        )
    return LaneSection(s=0.0, left=lanes(spec.left, 1), center=Lane(0, "none"),
                       right=lanes(spec.right, -1))


# ---------------------------------------------------------------------------
# Plan view
# ---------------------------------------------------------------------------

def _distinct_vertices(polyline) -> np.ndarray:
    points = np.asarray(polyline, dtype=float).reshape(-1, 2)
    kept = [points[0]] if len(points) else []
    for point in points[1:]:
        if np.hypot(*(point - kept[-1])) > COINCIDENT:
            kept.append(point)
    return np.array(kept).reshape(-1, 2)


def _chain(pieces: List[Tuple[str, tuple]]) -> List[GeometrySegment]:
    segments = []
    s = 0.0
    for kind, args in pieces:
        if kind == "line":
            (x0, y0), (x1, y1) = args
            length = math.hypot(x1 - x0, y1 - y0)
            segments.append(GeometrySegment(s, x0, y0, math.atan2(y1 - y0, x1 - x0), length))
        else:
            (x0, y0), hdg, curvature, length = args
            segments.append(GeometrySegment(s, x0, y0, hdg, length, Arc(curvature)))
        s += length
    return segments


def _douglas_peucker(points: np.ndarray, epsilon: float) -> np.ndarray:
    simplified = LineString(points).simplify(epsilon, preserve_topology=False)
    return np.asarray(simplified.coords)


def _fit_polyline(points: np.ndarray, epsilon: float) -> List[Tuple[str, tuple]]:
    closed = len(points) > 2 and np.hypot(*(points[0] - points[-1])) <= COINCIDENT
    if closed:
        middle = len(points) // 2
        kept = np.vstack([
            _douglas_peucker(points[:middle + 1], epsilon),
            _douglas_peucker(points[middle:], epsilon)[1:],
        ])
    else:
        kept = _douglas_peucker(points, epsilon)
    return [("line", (tuple(a), tuple(b))) for a, b in zip(kept[:-1], kept[1:])]


def _point_segment_distance(points: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ab = b - a
    denom = float(ab @ ab)
    t = np.clip(((points - a) @ ab) / denom, 0.0, 1.0) if denom > 0 else np.zeros(len(points))
    closest = a + t[:, None] * ab
    return np.hypot(*(points - closest).T)


def _kasa_radius(points: np.ndarray) -> Tuple[Optional[np.ndarray], float]:
    """Algebraic least-squares circle; (None, inf) when near collinear."""
    mean = points.mean(axis=0)
    local = points - mean
    design = np.column_stack([2 * local, np.ones(len(local))])
    rhs = np.sum(local ** 2, axis=1)
    solution, _, rank, _ = np.linalg.lstsq(design, rhs, rcond=None)
    if rank < 3:
        return None, math.inf
    a, b, c = solution
    squared = c + a * a + b * b
    if not squared > 0:
        return None, math.inf
    radius = math.sqrt(squared)
    if not math.isfinite(radius) or radius > MAX_FIT_RADIUS:
        return None, math.inf
    return mean + np.array([a, b]), radius


def _fit_window(window: np.ndarray, tolerance: float) -> Optional[Tuple[str, tuple]]:
    start, end = window[0], window[-1]
    chord_vec = end - start
    chord = float(np.hypot(*chord_vec))
    if chord <= COINCIDENT:
        return None
    interior = window[1:-1]

    kasa_center, radius = _kasa_radius(window)
    if kasa_center is None:
        if np.all(_point_segment_distance(interior, start, end) <= tolerance):
            return "line", (tuple(start), tuple(end))
        return None

    # circle of the fitted radius forced through both window ends
    radius = max(radius, 0.5 * chord)
    middle = 0.5 * (start + end)
    normal = np.array([-chord_vec[1], chord_vec[0]]) / chord
    offset = math.sqrt(max(radius * radius - 0.25 * chord * chord, 0.0))
    side = 1.0 if float((kasa_center - middle) @ normal) >= 0 else -1.0
    center = middle + side * offset * normal
    curvature = side / radius

    central = 2.0 * math.asin(min(1.0, chord / (2.0 * radius)))
    start_angle = math.atan2(start[1] - center[1], start[0] - center[0])
    angles = np.arctan2(interior[:, 1] - center[1], interior[:, 0] - center[0])
    sweep = (side * (angles - start_angle)) % (2 * math.pi)
    if np.any(sweep > central + 1e-9) or np.any(np.diff(sweep) < -1e-12):
        return None
    deviation = np.abs(np.hypot(*(interior - center).T) - radius)
    if np.any(deviation > tolerance):
        return None

    length = radius * central
    heading = math.atan2(chord_vec[1], chord_vec[0]) - 0.5 * curvature * length
    return "arc", (tuple(start), heading, curvature, length)


def _fit_arcs(points: np.ndarray, tolerance: float) -> List[Tuple[str, tuple]]:
    pieces = []
    i = 0
    last = len(points) - 1
    while i < last:
        best_end, best = i + 1, ("line", (tuple(points[i]), tuple(points[i + 1])))
        j = i + 2
        while j <= last:
            fitted = _fit_window(points[i:j + 1], tolerance)
            if fitted is None:
                break
            best_end, best = j, fitted
            j += 1
        pieces.append(best)
        i = best_end
    return pieces


def fit_plan_view(polyline, config: Optional[ConversionConfig] = None) -> List[GeometrySegment]:
    """
    Fit reference-line geometry to a centerline polyline.

    polyline mode simplifies with Douglas-Peucker and emits one Line per kept
    segment. arcfit mode grows windows of consecutive vertices while a
    least-squares circle through the window ends stays within arc_tolerance.

    Args:
        polyline: (x, y) vertices
        config: Conversion settings

    Returns:
        Segments with s-offsets from cumulative length
    """
    config = config or ConversionConfig()
    points = _distinct_vertices(polyline)
    if len(points) < 2:
        raise DegenerateInputError("polyline needs at least 2 distinct vertices")
    if config.fit_mode == "arcfit":
        pieces = _fit_arcs(points, config.arc_tolerance)
    else:
        pieces = _fit_polyline(points, config.simplify_epsilon)
    return _chain(pieces)


# ---------------------------------------------------------------------------
# Elevation
# ---------------------------------------------------------------------------

def elevation_stations(length: float, step: float) -> np.ndarray:
    stations = np.arange(int(math.floor(length / step)) + 1) * step
    stations = stations[stations < length - COINCIDENT]
    return np.append(stations, length)


def _heights_along(plan_view: Sequence[GeometrySegment], stations: np.ndarray, dem: Dem) -> np.ndarray:
    xy = np.array([eval_reference(plan_view, float(s))[:2] for s in stations])
    try:
        return sample_heights(dem, xy[:, 0], xy[:, 1], strict=True)
    except (OutOfBoundsError, NodataError) as exc:
        raise MissingTerrainError(str(exc))


def fit_elevation(
    plan_view: Sequence[GeometrySegment],
    dem: Dem,
    is_bridge: bool,
    config: Optional[ConversionConfig] = None,
) -> List[ElevPoly]:
    """
    Elevation profile along a fitted reference line.

    Non-bridge roads get a natural cubic spline through DEM samples every
    elevation_sample_step meters. Bridges get one linear deck between the
    abutment heights and never sample terrain under the span.

    Raises:
        MissingTerrainError: a required sample is outside the DEM or nodata
    """
    config = config or ConversionConfig()
    length = reference_length(plan_view)
    if not length > 0:
        raise PreconditionError("reference line has zero length")

    if is_bridge:
        z_start, z_end = _heights_along(plan_view, np.array([0.0, length]), dem)
        return [ElevPoly(0.0, float(z_start), float((z_end - z_start) / length), 0.0, 0.0)]

    stations = elevation_stations(length, config.elevation_sample_step)
    heights = _heights_along(plan_view, stations, dem)
    spline = CubicSpline(stations, heights, bc_type="natural")
    coefficients = spline.c
    return [
        ElevPoly(float(stations[i]), float(coefficients[3, i]), float(coefficients[2, i]),
                 float(coefficients[1, i]), float(coefficients[0, i]))
        for i in range(len(stations) - 1)
    ]


# ---------------------------------------------------------------------------
# Bridge clearance
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ClearanceIssue:
    bridge_id: str
    road_id: str
    x: float
    y: float
    deck_z: float
    road_z: float
    separation: float

    def __str__(self) -> str:
        return (f"bridge {self.bridge_id} over road {self.road_id} at "
                f"({self.x:.2f}, {self.y:.2f}): {self.separation:.2f} m clearance")


def _crossing_points(geometry) -> List[Tuple[float, float]]:
    if geometry.is_empty:
        return []
    if geometry.geom_type == "Point":
        return [(geometry.x, geometry.y)]
    if hasattr(geometry, "geoms"):
        points = []
        for part in geometry.geoms:
            points.extend(_crossing_points(part))
        return points
    return []


def check_clearance(
    odr_map: OdrMap,
    graph: RoadGraph,
    config: Optional[ConversionConfig] = None,
) -> List[ClearanceIssue]:
    """
    Vertical clearance at every planimetric crossing of an elevated way
    (bridge=yes or layer > 0) over a ground-level road.

    Touching at a shared endpoint is not a crossing.

    Returns:
        Crossings with less than bridge_clearance_min of separation
    """
    config = config or ConversionConfig()
    roads = {road.id: road for road in odr_map.roads}
    bridges = [e for e in graph.edges if e.is_elevated and e.id in roads]
    others = [e for e in graph.edges if not e.is_elevated and e.id in roads]
    if not bridges or not others:
        return []

    lines = [LineString(edge.polyline) for edge in others]
    tree = STRtree(lines)
    issues = []
    for bridge in bridges:
        bridge_line = LineString(bridge.polyline)
        ends = [Point(bridge.polyline[0]), Point(bridge.polyline[-1])]
        for index in sorted(int(i) for i in tree.query(bridge_line)):
            other = others[index]
            other_ends = [Point(other.polyline[0]), Point(other.polyline[-1])]
            for x, y in _crossing_points(bridge_line.intersection(lines[index])):
                crossing = Point(x, y)
                if (min(crossing.distance(p) for p in ends) <= COINCIDENT
                        and min(crossing.distance(p) for p in other_ends) <= COINCIDENT):
                    continue
                deck = roads[bridge.id]
                under = roads[other.id]
                deck_z = eval_elevation(deck, nearest_s(deck, x, y)[0])
                road_z = eval_elevation(under, nearest_s(under, x, y)[0])
                separation = abs(deck_z - road_z)
                if separation < config.bridge_clearance_min:
                    issue = ClearanceIssue(bridge.id, other.id, x, y, deck_z, road_z, separation)
                    logger.warning(f"Clearance below {config.bridge_clearance_min} m: {issue}")
                    issues.append(issue)
    return sorted(issues, key=lambda i: (i.bridge_id, i.road_id, i.x, i.y))


# ---------------------------------------------------------------------------
# Whole-graph conversion
# ---------------------------------------------------------------------------

def convert_edge(edge: RoadEdge, dem: Dem, config: ConversionConfig) -> OdrRoad:
    """One road per edge, without links."""
    plan_view = fit_plan_view(edge.polyline, config)
    lanes = lanes_from_tags(edge.tags, config)
    elevation = fit_elevation(plan_view, dem, edge.is_bridge, config)
    return OdrRoad(
        id=edge.id,
        length=reference_length(plan_view),
        plan_view=tuple(plan_view),
        elevation_profile=tuple(elevation),
        lane_sections=(lane_section_from_spec(lanes),),
        name=edge.tags.get("name", ""),
    )


def _convert_all(edges, dem, config, workers) -> Tuple[Dict[str, OdrRoad], Dict[str, Exception]]:
    roads: Dict[str, OdrRoad] = {}
    failures: Dict[str, Exception] = {}
    if workers <= 1:
        for edge in edges:
            try:
                roads[edge.id] = convert_edge(edge, dem, config)
            except Exception as exc:
                failures[edge.id] = exc
        return roads, failures
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = {edge.id: pool.submit(convert_edge, edge, dem, config) for edge in edges}
        for edge_id, future in futures.items():
            try:
                roads[edge_id] = future.result()
            except Exception as exc:
                failures[edge_id] = exc
    return roads, failures


def link_roads(graph: RoadGraph, roads: Dict[str, OdrRoad]) -> Dict[str, OdrRoad]:
    """Predecessor/successor links across nodes where exactly two road ends meet."""
    ends: Dict[int, List[Tuple[str, str]]] = {}
    for edge in graph.edges:
        if edge.id not in roads:
            continue
        ends.setdefault(edge.start_node, []).append((edge.id, "start"))
        ends.setdefault(edge.end_node, []).append((edge.id, "end"))

    linked = dict(roads)
    for node_id in sorted(ends):
        incident = ends[node_id]
        if len(incident) != 2 or incident[0][0] == incident[1][0]:
            continue
        for (road_id, contact), (other_id, other_contact) in (incident, incident[::-1]):
            link = RoadLink(element_id=other_id, contact_point=other_contact)
            attribute = "predecessor" if contact == "start" else "successor"
            linked[road_id] = replace(linked[road_id], **{attribute: link})
    return linked


def convert(
    graph: RoadGraph,
    dem: Dem,
    config: Optional[ConversionConfig] = None,
    workers: int = 1,
) -> OdrMap:
    """
    Convert a road graph into an OpenDRIVE map.

    Args:
        graph: Road graph (optionally fine-tuned)
        dem: Terrain; nodata cells are filled before sampling
        config: Conversion settings
        workers: Processes for per-edge conversion

    Returns:
        OdrMap with one road per edge, ascending by id

    Raises:
        ConversionError: any edge failed; lists every failing edge id
    """
    config = config or ConversionConfig()
    if len(graph.edges) == 0:
        raise PreconditionError("road graph is empty")
    dem = dem.filled()

    roads, failures = _convert_all(graph.edges, dem, config, workers)
    if failures:
        raise ConversionError(failures)

    roads = link_roads(graph, roads)
    odr_map = OdrMap(
        header=OdrHeader(name=config.name, geo_reference=graph.frame.proj_string()),
        roads=tuple(roads[road_id] for road_id in sorted(roads)),
    )
    issues = validate(odr_map)
    errors = errors_only(issues)
    if errors:
        by_road: Dict[str, list] = {}
        for issue in errors:
            by_road.setdefault(issue.road_id, []).append(issue)
        raise ConversionError({
            road_id: RoadValidationError(road_id, found) for road_id, found in by_road.items()
        })
    for issue in issues:
        logger.debug(str(issue))
    logger.info(f"Converted {len(odr_map.roads)} roads "
                f"({len(issues)} validator warning(s))")
    return odr_map
