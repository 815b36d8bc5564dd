"""
OpenStreetMap ingestion and road graph construction.

This module parses OSM XML v0.6 extracts, projects WGS84 coordinates into a
local equirectangular frame and splits highway ways into a road graph whose
shared nodes only ever occur at edge endpoints.
"""

import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, List, Optional, Tuple, Union

import numpy as np
from lxml import etree

from .errors import DanglingReferenceError, OsmParseError

logger = logging.getLogger(__name__)

EARTH_RADIUS = 6378137.0
MIN_VERTEX_SEPARATION = 1e-6

DEFAULT_DENY: FrozenSet[str] = frozenset({
    "footway",
    "cycleway",
    "path",
    "steps",
    "pedestrian",
    "bridleway",
    "elevator",
    "corridor",
    "platform",
    "proposed",
    "construction",
})

Point2D = Tuple[float, float]


@dataclass(frozen=True)
class OsmNode:
    id: int
    lat: float
    lon: float
    tags: Dict[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class OsmWay:
    id: int
    node_refs: Tuple[int, ...]
    tags: Dict[str, str] = field(default_factory=dict)

    @property
    def is_road_candidate(self) -> bool:
        return "highway" in self.tags


@dataclass(frozen=True)
class OsmExtract:
    nodes: Dict[int, OsmNode]
    ways: Tuple[OsmWay, ...]


@dataclass(frozen=True)
class LocalFrame:
    """Origin of the local metric frame every projected coordinate shares."""
    origin_lat: float
    origin_lon: float
    earth_radius: float = EARTH_RADIUS

    def proj_string(self) -> str:
        """PROJ description of this frame, written into the OpenDRIVE header."""
        return (
            f"+proj=eqc +lat_ts={self.origin_lat!r} +lat_0={self.origin_lat!r} "
            f"+lon_0={self.origin_lon!r} +R={self.earth_radius:g} +units=m +no_defs"
        )


@dataclass(frozen=True)
class RoadEdge:
    id: str
    polyline: Tuple[Point2D, ...]
    tags: Dict[str, str]
    node_ids: Tuple[int, ...]

    @property
    def is_bridge(self) -> bool:
        return self.tags.get("bridge") == "yes"

    @property
    def layer(self) -> int:
        try:
            return int(self.tags.get("layer", "0").strip())
        except ValueError:
            return 0

    @property
    def is_elevated(self) -> bool:
        """Carried above ground: a bridge, or a way on a layer above 0."""
        return self.is_bridge or self.layer > 0

    @property
    def start_node(self) -> int:
        return self.node_ids[0]

    @property
    def end_node(self) -> int:
        return self.node_ids[-1]


@dataclass(frozen=True)
class RoadGraph:
    edges: Tuple[RoadEdge, ...]
    nodes: Dict[int, Point2D]
    frame: LocalFrame

    def __len__(self) -> int:
        return len(self.edges)

    def edge(self, edge_id: str) -> RoadEdge:
        for edge in self.edges:
            if edge.id == edge_id:
                return edge
        raise KeyError(edge_id)

    def node_degree(self, node_id: int) -> int:
        """Number of edge endpoints incident to a node (a loop counts twice)."""
        degree = 0
        for edge in self.edges:
            degree += (edge.start_node == node_id) + (edge.end_node == node_id)
        return degree


# ---------------------------------------------------------------------------
# Projection
# ---------------------------------------------------------------------------

def project_many(
    lat: Union[np.ndarray, Iterable[float]],
    lon: Union[np.ndarray, Iterable[float]],
    frame: LocalFrame,
) -> Tuple[np.ndarray, np.ndarray]:
    """Vectorised equirectangular projection into the frame."""
    lat = np.asarray(lat, dtype=float)
    lon = np.asarray(lon, dtype=float)
    k = frame.earth_radius * math.pi / 180.0
    x = k * (lon - frame.origin_lon) * math.cos(math.radians(frame.origin_lat))
    y = k * (lat - frame.origin_lat)
    return x, y


def project(lat: float, lon: float, frame: LocalFrame) -> Point2D:
    """
    Project a WGS84 coordinate into the local frame.

    Args:
        lat: Latitude in degrees
        lon: Longitude in degrees
        frame: Local frame

    Returns:
        (x, y) in meters, (0, 0) at the frame origin
    """
    x, y = project_many(lat, lon, frame)
    return float(x), float(y)


def unproject_many(x, y, frame: LocalFrame) -> Tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    k = frame.earth_radius * math.pi / 180.0
    lat = frame.origin_lat + y / k
    lon = frame.origin_lon + x / (k * math.cos(math.radians(frame.origin_lat)))
    return lat, lon


def unproject(x: float, y: float, frame: LocalFrame) -> Tuple[float, float]:
    """Inverse of project: local (x, y) back to (lat, lon) in degrees."""
    lat, lon = unproject_many(x, y, frame)
    return float(lat), float(lon)


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

def _tags_of(element) -> Dict[str, str]:
    tags = {}
    for tag in element.iterfind("tag"):
        key = tag.get("k")
        if key is not None:
            tags[key] = tag.get("v", "")
    return tags


def _int_attr(element, name: str) -> int:
    value = element.get(name)
    if value is None:
        raise OsmParseError(f"<{element.tag}> missing '{name}' attribute", element.sourceline)
    try:
        return int(value)
    except ValueError:
        raise OsmParseError(
            f"<{element.tag}> attribute '{name}' is not an integer: {value!r}",
            element.sourceline,
        )


def _float_attr(element, name: str) -> float:
    value = element.get(name)
    if value is None:
        raise OsmParseError(f"<{element.tag}> missing '{name}' attribute", element.sourceline)
    try:
        return float(value)
    except ValueError:
        raise OsmParseError(
            f"<{element.tag}> attribute '{name}' is not a number: {value!r}",
            element.sourceline,
        )


def parse_osm(xml_text: Union[str, bytes]) -> OsmExtract:
    """
    Parse an OSM XML document.

    Non-road ways are kept; filtering happens in build_road_graph.

    Args:
        xml_text: OSM XML v0.6 document

    Returns:
        OsmExtract with every node and way of the document
    """
    data = xml_text.encode("utf-8") if isinstance(xml_text, str) else xml_text
    try:
        root = etree.fromstring(data, parser=etree.XMLParser(resolve_entities=False))
    except etree.XMLSyntaxError as exc:
        raise OsmParseError(f"malformed XML: {exc.msg}", exc.lineno)

    if root.tag != "osm":
        raise OsmParseError(f"top-level element is <{root.tag}>, expected <osm>", root.sourceline)

    nodes: Dict[int, OsmNode] = {}
    for element in root.iterfind("node"):
        node_id = _int_attr(element, "id")
        lat = _float_attr(element, "lat")
        lon = _float_attr(element, "lon")
        if not (-90.0 <= lat <= 90.0 and -180.0 <= lon <= 180.0):
            raise OsmParseError(f"node {node_id} outside WGS84 bounds", element.sourceline)
        if node_id in nodes:
            raise OsmParseError(f"duplicate node id {node_id}", element.sourceline)
        nodes[node_id] = OsmNode(node_id, lat, lon, _tags_of(element))

    ways: List[OsmWay] = []
    for element in root.iterfind("way"):
        way_id = _int_attr(element, "id")
        refs = []
        for nd in element.iterfind("nd"):
            ref = _int_attr(nd, "ref")
            if ref not in nodes:
                raise DanglingReferenceError(way_id, ref, nd.sourceline)
            refs.append(ref)
        ways.append(OsmWay(way_id, tuple(refs), _tags_of(element)))

    logger.debug(f"Parsed {len(nodes)} nodes and {len(ways)} ways")
    return OsmExtract(nodes=nodes, ways=tuple(ways))


# ---------------------------------------------------------------------------
# Road graph
# ---------------------------------------------------------------------------

def _collapse_repeats(refs: Iterable[int]) -> List[int]:
    collapsed: List[int] = []
    for ref in refs:
        if not collapsed or collapsed[-1] != ref:
            collapsed.append(ref)
    return collapsed


def road_ways(extract: OsmExtract, deny: FrozenSet[str] = DEFAULT_DENY) -> List[OsmWay]:
    """Road-candidate ways not on the deny-list, ascending by way id."""
    selected = [
        way for way in extract.ways
        if way.is_road_candidate and way.tags["highway"] not in deny
    ]
    return sorted(selected, key=lambda way: way.id)


def road_frame(extract: OsmExtract, deny: FrozenSet[str] = DEFAULT_DENY) -> LocalFrame:
    """Default frame: mean lat/lon of the unique nodes road ways reference."""
    node_ids = sorted({ref for way in road_ways(extract, deny) for ref in way.node_refs})
    if not node_ids:
        return LocalFrame(0.0, 0.0)
    lats = np.array([extract.nodes[n].lat for n in node_ids])
    lons = np.array([extract.nodes[n].lon for n in node_ids])
    return LocalFrame(float(lats.mean()), float(lons.mean()))


def _split_indices(refs: List[int], shared: Counter) -> List[int]:
    within = Counter(refs)
    cuts = [0]
    for i in range(1, len(refs) - 1):
        if shared[refs[i]] >= 2 or within[refs[i]] >= 2:
            cuts.append(i)
    cuts.append(len(refs) - 1)
    return cuts


def _drop_coincident(points: List[Point2D], ids: List[int]) -> Tuple[List[Point2D], List[int]]:
    kept_points = [points[0]]
    kept_ids = [ids[0]]
    last = len(points) - 1
    for i in range(1, len(points)):
        px, py = kept_points[-1]
        x, y = points[i]
        if math.hypot(x - px, y - py) > MIN_VERTEX_SEPARATION:
            kept_points.append(points[i])
            kept_ids.append(ids[i])
        elif i == last and len(kept_points) > 1:
            # keep the endpoint node, it may be a split node
            kept_points[-1] = points[i]
            kept_ids[-1] = ids[i]
    return kept_points, kept_ids


def build_road_graph(
    extract: OsmExtract,
    frame: Optional[LocalFrame] = None,
    deny: FrozenSet[str] = DEFAULT_DENY,
) -> RoadGraph:
    """
    Build the road graph from an extract.

    Ways are split at every node referenced by two or more road ways and at
    nodes a single way visits more than once. Edge ids are "<way_id>_<k>".

    Args:
        extract: Parsed OSM extract
        frame: Projection frame (default: centroid of road nodes)
        deny: Highway classes that never become edges

    Returns:
        RoadGraph with edges in (way id, split index) order
    """
    ways = road_ways(extract, deny)
    if frame is None:
        frame = road_frame(extract, deny)
    if not ways:
        logger.warning("No road-candidate ways in extract; road graph is empty")
        return RoadGraph(edges=(), nodes={}, frame=frame)

    way_refs: Dict[int, List[int]] = {}
    shared: Counter = Counter()
    for way in ways:
        refs = _collapse_repeats(way.node_refs)
        if len(refs) < 2:
            logger.warning(f"Skipping way {way.id}: fewer than 2 distinct node refs")
            continue
        way_refs[way.id] = refs
        shared.update(set(refs))

    all_ids = sorted({ref for refs in way_refs.values() for ref in refs})
    lats = [extract.nodes[n].lat for n in all_ids]
    lons = [extract.nodes[n].lon for n in all_ids]
    xs, ys = project_many(lats, lons, frame)
    positions = {n: (float(x), float(y)) for n, x, y in zip(all_ids, xs, ys)}

    edges: List[RoadEdge] = []
    nodes: Dict[int, Point2D] = {}
    for way in ways:
        refs = way_refs.get(way.id)
        if refs is None:
            continue
        cuts = _split_indices(refs, shared)
        for k, (start, end) in enumerate(zip(cuts[:-1], cuts[1:])):
            ids = refs[start:end + 1]
            points, ids = _drop_coincident([positions[n] for n in ids], ids)
            if len(points) < 2:
                logger.warning(f"Skipping edge {way.id}_{k}: vertices coincide")
                continue
            edges.append(RoadEdge(
                id=f"{way.id}_{k}",
                polyline=tuple(points),
                tags=dict(way.tags),
                node_ids=tuple(ids),
            ))
            for node_id, point in zip(ids, points):
                nodes[node_id] = point

    if not edges:
        logger.warning("Road graph is empty after splitting")
    logger.info(f"Built road graph: {len(edges)} edges from {len(way_refs)} ways")
    return RoadGraph(edges=tuple(edges), nodes=nodes, frame=frame)


# ---------------------------------------------------------------------------
# Graph file (JSON Lines: one frame record, then one record per edge)
# ---------------------------------------------------------------------------

def dump_graph(graph: RoadGraph) -> str:
    frame = graph.frame
    lines = [json.dumps({"frame": {
        "origin_lat": frame.origin_lat,
        "origin_lon": frame.origin_lon,
        "earth_radius": frame.earth_radius,
    }}, sort_keys=True)]
    for edge in graph.edges:
        lines.append(json.dumps({
            "id": edge.id,
            "tags": edge.tags,
            "vertices": [list(p) for p in edge.polyline],
            "node_ids": list(edge.node_ids),
        }, sort_keys=True))
    return "\n".join(lines) + "\n"


def parse_graph(text: str) -> RoadGraph:
    frame: Optional[LocalFrame] = None
    edges: List[RoadEdge] = []
    nodes: Dict[int, Point2D] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
            if "frame" in record:
                frame = LocalFrame(**record["frame"])
                continue
            polyline = tuple((float(x), float(y)) for x, y in record["vertices"])
            node_ids = tuple(int(n) for n in record["node_ids"])
            edge = RoadEdge(record["id"], polyline, dict(record["tags"]), node_ids)
        except (ValueError, KeyError, TypeError) as exc:
            raise OsmParseError(f"bad graph record: {exc}", lineno)
        if len(polyline) < 2 or len(polyline) != len(node_ids):
            raise OsmParseError(f"edge {edge.id} has inconsistent vertices", lineno)
        edges.append(edge)
        nodes.update(zip(node_ids, polyline))
    if frame is None:
        raise OsmParseError("graph file has no frame record")
    return RoadGraph(edges=tuple(edges), nodes=nodes, frame=frame)


def save_graph(graph: RoadGraph, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dump_graph(graph), encoding="utf-8", newline="\n")
    return path


def load_graph(path: Union[str, Path]) -> RoadGraph:
    return parse_graph(Path(path).read_text(encoding="utf-8"))
