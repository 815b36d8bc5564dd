"""
OpenDRIVE 1.4 document model.

Covers planView (line, arc, paramPoly3), elevationProfile, lanes with width
polynomials and road links, with XML read/write, analytic evaluators for the
reference line, elevation and lane boundaries, and a structural validator.
"""

import bisect
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from lxml import etree
from scipy.optimize import minimize_scalar

from .errors import (
    DomainError,
    InputFormatError,
    LaneLookupError,
    MissingProfileError,
    PreconditionError,
    UnsupportedRecordError,
)

logger = logging.getLogger(__name__)

LaneType = Literal["driving", "sidewalk", "shoulder", "none"]
ContactPoint = Literal["start", "end"]
Severity = Literal["error", "warning"]

LANE_TYPES = ("driving", "sidewalk", "shoulder", "none")
MIN_ARC_CURVATURE = 1e-9
S_TOLERANCE = 1e-9

LENGTH_TOLERANCE = 1e-6
C0_TOLERANCE = 1e-4
HEADING_TOLERANCE = 1e-3
WIDTH_SAMPLE_STEP = 0.5


# ---------------------------------------------------------------------------
# Model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Line:
    pass


@dataclass(frozen=True)
class Arc:
    curvature: float

    def __post_init__(self):
        if self.curvature == 0 or not math.isfinite(self.curvature):
            raise PreconditionError("arc curvature must be finite and non-zero")


@dataclass(frozen=True)
class ParamPoly3:
    aU: float = 0.0
    bU: float = 1.0
    cU: float = 0.0
    dU: float = 0.0
    aV: float = 0.0
    bV: float = 0.0
    cV: float = 0.0
    dV: float = 0.0

    def uv(self, p: float) -> Tuple[float, float]:
        u = self.aU + p * (self.bU + p * (self.cU + p * self.dU))
        v = self.aV + p * (self.bV + p * (self.cV + p * self.dV))
        return u, v

    def derivative(self, p: float) -> Tuple[float, float]:
        du = self.bU + p * (2 * self.cU + 3 * p * self.dU)
        dv = self.bV + p * (2 * self.cV + 3 * p * self.dV)
        return du, dv


GeometryKind = Union[Line, Arc, ParamPoly3]


@dataclass(frozen=True)
class GeometrySegment:
    s: float
    x: float
    y: float
    hdg: float
    length: float
    kind: GeometryKind = field(default_factory=Line)

    def __post_init__(self):
        if not self.length > 0:
            raise PreconditionError(f"geometry length must be positive, got {self.length}")
        if isinstance(self.kind, Arc) and abs(self.kind.curvature) < MIN_ARC_CURVATURE:
            object.__setattr__(self, "kind", Line())

    def pose(self, ds: float) -> Tuple[float, float, float]:
        """(x, y, hdg) at ds meters into the segment."""
        kind = self.kind
        if isinstance(kind, Line):
            return (
                self.x + ds * math.cos(self.hdg),
                self.y + ds * math.sin(self.hdg),
                self.hdg,
            )
        if isinstance(kind, Arc):
            half = 0.5 * kind.curvature * ds
            # chord form; np.sinc is the normalised sinc
            chord = ds * float(np.sinc(half / math.pi))
            direction = self.hdg + half
            return (
                self.x + chord * math.cos(direction),
                self.y + chord * math.sin(direction),
                self.hdg + kind.curvature * ds,
            )
        u, v = kind.uv(ds)
        du, dv = kind.derivative(ds)
        c, s = math.cos(self.hdg), math.sin(self.hdg)
        return (
            self.x + u * c - v * s,
            self.y + u * s + v * c,
            self.hdg + math.atan2(dv, du),
        )

    def end_pose(self) -> Tuple[float, float, float]:
        return self.pose(self.length)


@dataclass(frozen=True)
class ElevPoly:
    s: float
    a: float
    b: float = 0.0
    c: float = 0.0
    d: float = 0.0

    def value(self, ds: float) -> float:
        return self.a + ds * (self.b + ds * (self.c + ds * self.d))

    def slope(self, ds: float) -> float:
        return self.b + ds * (2 * self.c + 3 * ds * self.d)


@dataclass(frozen=True)
class WidthPoly:
    s_offset: float
    a: float
    b: float = 0.0
    c: float = 0.0
    d: float = 0.0

    def value(self, ds: float) -> float:
        local = ds - self.s_offset
        return self.a + local * (self.b + local * (self.c + local * self.d))


@dataclass(frozen=True)
class Lane:
    id: int
    type: LaneType = "driving"
    widths: Tuple[WidthPoly, ...] = ()

    def width(self, ds: float) -> float:
        """Width ds meters into the section; the governing record is the last with s_offset <= ds."""
        if not self.widths:
            return 0.0
        offsets = [w.s_offset for w in self.widths]
        index = max(bisect.bisect_right(offsets, ds + S_TOLERANCE) - 1, 0)
        return self.widths[index].value(ds)


@dataclass(frozen=True)
class LaneSection:
    s: float
    left: Tuple[Lane, ...] = ()
    center: Lane = field(default_factory=lambda: Lane(0, "none"))
    right: Tuple[Lane, ...] = ()

    def lanes(self) -> Tuple[Lane, ...]:
        return self.left + (self.center,) + self.right

    def lane(self, lane_id: int) -> Lane:
        for lane in self.lanes():
            if lane.id == lane_id:
                return lane
        raise LaneLookupError(f"lane {lane_id} not in section at s={self.s}")

    def boundary_ids(self) -> List[int]:
        """Boundary ids from the outermost left to the outermost right."""
        left = sorted((lane.id for lane in self.left), reverse=True)
        right = sorted((lane.id for lane in self.right), reverse=True)
        return left + [0] + right


@dataclass(frozen=True)
class RoadLink:
    element_id: str
    contact_point: ContactPoint
    element_type: str = "road"


@dataclass(frozen=True)
class OdrRoad:
    id: str
    length: float
    plan_view: Tuple[GeometrySegment, ...]
    elevation_profile: Tuple[ElevPoly, ...] = ()
    lane_sections: Tuple[LaneSection, ...] = ()
    predecessor: Optional[RoadLink] = None
    successor: Optional[RoadLink] = None
    name: str = ""
    junction: str = "-1"


@dataclass(frozen=True)
class OdrHeader:
    name: str = ""
    rev_major: int = 1
    rev_minor: int = 4
    geo_reference: Optional[str] = None
    vendor: str = "twinmap"

    def __post_init__(self):
        if not self.geo_reference:
            object.__setattr__(self, "geo_reference", None)


@dataclass(frozen=True)
class OdrMap:
    header: OdrHeader = field(default_factory=OdrHeader)
    roads: Tuple[OdrRoad, ...] = ()
    junctions: Tuple = ()

    def road(self, road_id: str) -> OdrRoad:
        for road in self.roads:
            if road.id == road_id:
                return road
        raise KeyError(road_id)


# ---------------------------------------------------------------------------
# Evaluators
# ---------------------------------------------------------------------------

def reference_length(plan_view: Sequence[GeometrySegment]) -> float:
    return math.fsum(segment.length for segment in plan_view)


def _check_s(s: float, length: float) -> float:
    if not (-S_TOLERANCE <= s <= length + S_TOLERANCE):
        raise DomainError(f"s={s} outside [0, {length}]")
    return min(max(s, 0.0), length)


def eval_reference(plan_view: Sequence[GeometrySegment], s: float) -> Tuple[float, float, float]:
    """Pose on a bare plan view; the governing segment is the last with segment.s <= s."""
    if not plan_view:
        raise PreconditionError("plan view is empty")
    starts = [segment.s for segment in plan_view]
    index = max(bisect.bisect_right(starts, s) - 1, 0)
    segment = plan_view[index]
    return segment.pose(s - segment.s)


def eval_plan_view(road: OdrRoad, s: float) -> Tuple[float, float, float]:
    """
    Reference-line pose (x, y, hdg) at s.

    Raises:
        DomainError: s outside [0, road.length]
    """
    return eval_reference(road.plan_view, _check_s(s, road.length))


def eval_elevation(road: OdrRoad, s: float) -> float:
    """
    Elevation z(s) from the governing cubic.

    Raises:
        MissingProfileError: the road has no elevation records
    """
    if not road.elevation_profile:
        raise MissingProfileError(f"road {road.id} has no elevation profile")
    s = _check_s(s, road.length)
    starts = [poly.s for poly in road.elevation_profile]
    poly = road.elevation_profile[max(bisect.bisect_right(starts, s) - 1, 0)]
    return poly.value(s - poly.s)


def section_at(road: OdrRoad, s: float) -> Tuple[int, LaneSection]:
    if not road.lane_sections:
        raise LaneLookupError(f"road {road.id} has no lane sections")
    starts = [section.s for section in road.lane_sections]
    index = max(bisect.bisect_right(starts, s) - 1, 0)
    return index, road.lane_sections[index]


def section_span(road: OdrRoad, index: int) -> float:
    sections = road.lane_sections
    end = sections[index + 1].s if index + 1 < len(sections) else road.length
    return end - sections[index].s


def lane_width(lane: Lane, ds: float) -> float:
    return lane.width(ds)


def lane_boundary_t(section: LaneSection, lane_id: int, ds: float) -> float:
    """
    Signed lateral offset of the outer boundary of lane_id.

    Positive to the left of the reference line, negative to the right.

    Raises:
        LaneLookupError: the lane is not in the section
    """
    if lane_id == 0:
        return 0.0
    section.lane(lane_id)
    side = section.left if lane_id > 0 else section.right
    by_id = {lane.id: lane for lane in side}
    total = 0.0
    for k in range(1, abs(lane_id) + 1):
        inner_id = k if lane_id > 0 else -k
        if inner_id not in by_id:
            raise LaneLookupError(f"lane {inner_id} missing between center and {lane_id}")
        total += by_id[inner_id].width(ds)
    return total if lane_id > 0 else -total


def _nearest_on_segment(segment: GeometrySegment, x: float, y: float) -> float:
    kind = segment.kind
    candidates = [0.0, segment.length]
    if isinstance(kind, Line):
        along = (x - segment.x) * math.cos(segment.hdg) + (y - segment.y) * math.sin(segment.hdg)
        candidates.append(min(max(along, 0.0), segment.length))
    elif isinstance(kind, Arc):
        radius = 1.0 / kind.curvature
        cx = segment.x - radius * math.sin(segment.hdg)
        cy = segment.y + radius * math.cos(segment.hdg)
        start_angle = math.atan2(segment.y - cy, segment.x - cx)
        angle = math.atan2(y - cy, x - cx)
        if kind.curvature > 0:
            sweep = (angle - start_angle) % (2 * math.pi)
        else:
            sweep = -((start_angle - angle) % (2 * math.pi))
        ds = sweep / kind.curvature
        if 0.0 <= ds <= segment.length:
            candidates.append(ds)
    else:
        def distance(p):
            px, py, _ = segment.pose(p)
            return math.hypot(px - x, py - y)

        grid = np.linspace(0.0, segment.length, 33)
        best = int(np.argmin([distance(p) for p in grid]))
        lo = grid[max(best - 1, 0)]
        hi = grid[min(best + 1, len(grid) - 1)]
        result = minimize_scalar(distance, bounds=(lo, hi), method="bounded",
                                 options={"xatol": 1e-10})
        candidates.extend([float(result.x), float(grid[best])])

    def distance_at(ds):
        px, py, _ = segment.pose(ds)
        return math.hypot(px - x, py - y)

    return min(candidates, key=distance_at)


def nearest_s(road: OdrRoad, x: float, y: float) -> Tuple[float, float]:
    """
    Nearest point on the reference line.

    Returns:
        (s, distance) of the closest reference-line point to (x, y)
    """
    best_s, best_distance = 0.0, math.inf
    for segment in road.plan_view:
        ds = _nearest_on_segment(segment, x, y)
        px, py, _ = segment.pose(ds)
        distance = math.hypot(px - x, py - y)
        if distance < best_distance:
            best_s, best_distance = min(segment.s + ds, road.length), distance
    return best_s, best_distance


# ---------------------------------------------------------------------------
# XML
# ---------------------------------------------------------------------------

def _num(value: float) -> str:
    return "%.17g" % value


def _set(element, **attributes) -> None:
    for key, value in attributes.items():
        element.set(key, value if isinstance(value, str) else _num(value))


def _write_link(parent, tag: str, link: Optional[RoadLink]) -> None:
    if link is None:
        return
    element = etree.SubElement(parent, tag)
    element.set("elementType", link.element_type)
    element.set("elementId", link.element_id)
    element.set("contactPoint", link.contact_point)


def _write_lane(parent, lane: Lane) -> None:
    element = etree.SubElement(parent, "lane")
    element.set("id", str(lane.id))
    element.set("type", lane.type)
    element.set("level", "false")
    for width in lane.widths:
        _set(etree.SubElement(element, "width"),
             sOffset=width.s_offset, a=width.a, b=width.b, c=width.c, d=width.d)


def _write_road(parent, road: OdrRoad) -> None:
    element = etree.SubElement(parent, "road")
    element.set("name", road.name)
    _set(element, length=road.length)
    element.set("id", road.id)
    element.set("junction", road.junction)

    link = etree.SubElement(element, "link")
    _write_link(link, "predecessor", road.predecessor)
    _write_link(link, "successor", road.successor)

    plan_view = etree.SubElement(element, "planView")
    for segment in road.plan_view:
        geometry = etree.SubElement(plan_view, "geometry")
        _set(geometry, s=segment.s, x=segment.x, y=segment.y,
             hdg=segment.hdg, length=segment.length)
        kind = segment.kind
        if isinstance(kind, Line):
            etree.SubElement(geometry, "line")
        elif isinstance(kind, Arc):
            _set(etree.SubElement(geometry, "arc"), curvature=kind.curvature)
        else:
            poly = etree.SubElement(geometry, "paramPoly3")
            _set(poly, aU=kind.aU, bU=kind.bU, cU=kind.cU, dU=kind.dU,
                 aV=kind.aV, bV=kind.bV, cV=kind.cV, dV=kind.dV)
            poly.set("pRange", "arcLength")

    profile = etree.SubElement(element, "elevationProfile")
    for poly in road.elevation_profile:
        _set(etree.SubElement(profile, "elevation"),
             s=poly.s, a=poly.a, b=poly.b, c=poly.c, d=poly.d)

    lanes = etree.SubElement(element, "lanes")
    for section in road.lane_sections:
        section_element = etree.SubElement(lanes, "laneSection")
        _set(section_element, s=section.s)
        if section.left:
            left = etree.SubElement(section_element, "left")
            for lane in sorted(section.left, key=lambda l: l.id, reverse=True):
                _write_lane(left, lane)
        center = etree.SubElement(section_element, "center")
        _write_lane(center, section.center)
        if section.right:
            right = etree.SubElement(section_element, "right")
            for lane in sorted(section.right, key=lambda l: l.id, reverse=True):
                _write_lane(right, lane)


def serialize(odr_map: OdrMap) -> str:
    """
    Write an OpenDRIVE document.

    Numbers use 17 significant digits; roads are written ascending by id.
    """
    root = etree.Element("OpenDRIVE")
    header = etree.SubElement(root, "header")
    header.set("revMajor", str(odr_map.header.rev_major))
    header.set("revMinor", str(odr_map.header.rev_minor))
    header.set("name", odr_map.header.name)
    header.set("version", "1.00")
    header.set("vendor", odr_map.header.vendor)
    if odr_map.header.geo_reference:
        geo = etree.SubElement(header, "geoReference")
        geo.text = etree.CDATA(odr_map.header.geo_reference)
    for road in sorted(odr_map.roads, key=lambda r: r.id):
        _write_road(root, road)
    return etree.tostring(
        root, pretty_print=True, xml_declaration=True, encoding="UTF-8"
    ).decode("utf-8")


_REJECTED_ROAD_CHILDREN = {"lateralProfile", "objects", "signals", "surface", "railroad"}
_REJECTED_GEOMETRY = {"spiral", "poly3"}


def _float(element, name: str, default: Optional[float] = None) -> float:
    value = element.get(name)
    if value is None:
        if default is not None:
            return default
        raise InputFormatError(f"<{element.tag}> missing '{name}'", element.sourceline)
    try:
        return float(value)
    except ValueError:
        raise InputFormatError(f"<{element.tag}> '{name}' is not a number: {value!r}",
                               element.sourceline)


def _read_link(element) -> Optional[RoadLink]:
    if element is None:
        return None
    element_type = element.get("elementType", "road")
    if element_type != "road":
        raise UnsupportedRecordError("junction link", f"line {element.sourceline}")
    return RoadLink(
        element_id=element.get("elementId", ""),
        contact_point=element.get("contactPoint", "start"),
        element_type=element_type,
    )


def _read_geometry(element) -> GeometrySegment:
    children = [child for child in element if isinstance(child.tag, str)]
    if len(children) != 1:
        raise InputFormatError("<geometry> needs exactly one shape record", element.sourceline)
    shape = children[0]
    if shape.tag == "line":
        kind: GeometryKind = Line()
    elif shape.tag == "arc":
        kind = Arc(_float(shape, "curvature"))
    elif shape.tag == "paramPoly3":
        if shape.get("pRange", "arcLength") != "arcLength":
            raise UnsupportedRecordError("paramPoly3", f"pRange={shape.get('pRange')}")
        kind = ParamPoly3(*(_float(shape, name, 0.0) for name in
                            ("aU", "bU", "cU", "dU", "aV", "bV", "cV", "dV")))
    else:
        raise UnsupportedRecordError(shape.tag, f"line {shape.sourceline}")
    return GeometrySegment(
        s=_float(element, "s"),
        x=_float(element, "x"),
        y=_float(element, "y"),
        hdg=_float(element, "hdg"),
        length=_float(element, "length"),
        kind=kind,
    )


def _read_lane(element) -> Lane:
    lane_type = element.get("type", "none")
    if lane_type not in LANE_TYPES:
        logger.warning(f"Lane type '{lane_type}' on line {element.sourceline} read as 'none'")
        lane_type = "none"
    widths = tuple(
        WidthPoly(_float(w, "sOffset"), _float(w, "a"), _float(w, "b", 0.0),
                  _float(w, "c", 0.0), _float(w, "d", 0.0))
        for w in element.iterfind("width")
    )
    try:
        lane_id = int(element.get("id"))
    except (TypeError, ValueError):
        raise InputFormatError("<lane> needs an integer id", element.sourceline)
    return Lane(id=lane_id, type=lane_type, widths=widths)


def _read_section(element) -> LaneSection:
    def side(tag):
        container = element.find(tag)
        return [] if container is None else [_read_lane(l) for l in container.iterfind("lane")]

    centers = side("center")
    center = centers[0] if centers else Lane(0, "none")
    return LaneSection(
        s=_float(element, "s"),
        left=tuple(sorted(side("left"), key=lambda l: l.id)),
        center=center,
        right=tuple(sorted(side("right"), key=lambda l: l.id, reverse=True)),
    )


def _read_road(element) -> OdrRoad:
    predecessor = successor = None
    plan_view: List[GeometrySegment] = []
    profile: List[ElevPoly] = []
    sections: List[LaneSection] = []
    for child in element:
        if not isinstance(child.tag, str):
            continue
        if child.tag == "link":
            predecessor = _read_link(child.find("predecessor"))
            successor = _read_link(child.find("successor"))
        elif child.tag == "planView":
            for geometry in child.iterfind("geometry"):
                plan_view.append(_read_geometry(geometry))
        elif child.tag == "elevationProfile":
            for poly in child.iterfind("elevation"):
                profile.append(ElevPoly(_float(poly, "s"), _float(poly, "a"),
                                        _float(poly, "b", 0.0), _float(poly, "c", 0.0),
                                        _float(poly, "d", 0.0)))
        elif child.tag == "lanes":
            for lanes_child in child:
                if not isinstance(lanes_child.tag, str):
                    continue
                if lanes_child.tag == "laneSection":
                    sections.append(_read_section(lanes_child))
                else:
                    raise UnsupportedRecordError(lanes_child.tag, f"line {lanes_child.sourceline}")
        elif child.tag in _REJECTED_ROAD_CHILDREN:
            raise UnsupportedRecordError(child.tag, f"line {child.sourceline}")
        else:
            logger.warning(f"Ignoring <{child.tag}> in road {element.get('id')}")
    if element.get("junction", "-1") != "-1":
        raise UnsupportedRecordError("junction road", f"road {element.get('id')}")
    return OdrRoad(
        id=element.get("id", ""),
        length=_float(element, "length"),
        plan_view=tuple(plan_view),
        elevation_profile=tuple(profile),
        lane_sections=tuple(sections),
        predecessor=predecessor,
        successor=successor,
        name=element.get("name", ""),
        junction=element.get("junction", "-1"),
    )


def deserialize(xml_text: Union[str, bytes]) -> OdrMap:
    """
    Read an OpenDRIVE document.

    Raises:
        InputFormatError: malformed XML or missing attributes
        UnsupportedRecordError: records outside the implemented subset
    """
    data = xml_text.encode("utf-8") if isinstance(xml_text, str) else xml_text
    try:
        root = etree.fromstring(data, parser=etree.XMLParser(resolve_entities=False))
    except etree.XMLSyntaxError as exc:
        raise InputFormatError(f"malformed XML: {exc.msg}", exc.lineno)
    if root.tag != "OpenDRIVE":
        raise InputFormatError(f"top-level element is <{root.tag}>, expected <OpenDRIVE>",
                               root.sourceline)

    header_element = root.find("header")
    header = OdrHeader()
    if header_element is not None:
        geo = header_element.find("geoReference")
        header = OdrHeader(
            name=header_element.get("name", ""),
            rev_major=int(header_element.get("revMajor", "1")),
            rev_minor=int(header_element.get("revMinor", "4")),
            geo_reference=geo.text if geo is not None and geo.text else None,
            vendor=header_element.get("vendor", "twinmap"),
        )
    if (header.rev_major, header.rev_minor) != (1, 4):
        logger.warning(f"OpenDRIVE revision {header.rev_major}.{header.rev_minor} "
                       f"read as 1.4; unknown records may be rejected")

    roads = []
    for child in root:
        if not isinstance(child.tag, str) or child.tag == "header":
            continue
        if child.tag == "road":
            roads.append(_read_road(child))
        elif child.tag in ("junction", "controller"):
            raise UnsupportedRecordError(child.tag, f"line {child.sourceline}")
        else:
            logger.warning(f"Ignoring top-level <{child.tag}>")
    return OdrMap(header=header, roads=tuple(roads))


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ValidationIssue:
    severity: Severity
    code: str
    road_id: str
    message: str
    s: Optional[float] = None

    def __str__(self) -> str:
        where = f" at s={self.s:.3f}" if self.s is not None else ""
        return f"[{self.severity}] road {self.road_id}{where}: {self.code}: {self.message}"


def _wrap_angle(angle: float) -> float:
    return (angle + math.pi) % (2 * math.pi) - math.pi


def _check_offsets(values: Sequence[float]) -> bool:
    if not values or abs(values[0]) > S_TOLERANCE:
        return False
    return all(b > a for a, b in zip(values, values[1:]))


def validate_road(road: OdrRoad, known_ids: Optional[set] = None) -> List[ValidationIssue]:
    """Structural checks for one road."""
    issues: List[ValidationIssue] = []

    def report(severity, code, message, s=None):
        issues.append(ValidationIssue(severity, code, road.id, message, s))

    if not road.plan_view:
        report("error", "empty-plan-view", "plan view has no geometry records")
    else:
        starts = [segment.s for segment in road.plan_view]
        if not _check_offsets(starts):
            report("error", "segment-offset", "segment s-offsets must start at 0 and increase")
        cumulative = 0.0
        for segment in road.plan_view:
            if abs(segment.s - cumulative) > LENGTH_TOLERANCE:
                report("error", "segment-offset",
                       f"segment starts at s={segment.s} but preceding lengths sum to {cumulative}",
                       segment.s)
                break
            cumulative += segment.length
        total = reference_length(road.plan_view)
        if abs(total - road.length) > LENGTH_TOLERANCE:
            report("error", "length-mismatch",
                   f"segment lengths sum to {total}, road length is {road.length}")
        for current, following in zip(road.plan_view, road.plan_view[1:]):
            ex, ey, eh = current.end_pose()
            gap = math.hypot(following.x - ex, following.y - ey)
            if gap > C0_TOLERANCE:
                report("error", "c0-gap", f"{gap:.6f} m gap to next segment", following.s)
            turn = abs(_wrap_angle(following.hdg - eh))
            if turn > HEADING_TOLERANCE:
                report("warning", "heading-gap", f"{turn:.6f} rad heading jump", following.s)

    if not road.elevation_profile:
        report("error", "missing-elevation", "elevation profile is empty")
    elif not _check_offsets([poly.s for poly in road.elevation_profile]):
        report("error", "elevation-offset", "elevation s-offsets must start at 0 and increase")

    if not road.lane_sections:
        report("error", "missing-lanes", "road has no lane sections")
    elif not _check_offsets([section.s for section in road.lane_sections]):
        report("error", "lane-section-offset", "lane section s-offsets must start at 0 and increase")
    else:
        for index, section in enumerate(road.lane_sections):
            left = sorted(lane.id for lane in section.left)
            right = sorted((lane.id for lane in section.right), reverse=True)
            if (left != list(range(1, len(left) + 1))
                    or right != list(range(-1, -len(right) - 1, -1))
                    or section.center.id != 0):
                report("error", "lane-ids",
                       f"lane ids {right[::-1] + [section.center.id] + left} are not contiguous",
                       section.s)
            span = section_span(road, index)
            samples = np.append(np.arange(0.0, max(span, 0.0), WIDTH_SAMPLE_STEP), max(span, 0.0))
            for lane in section.left + section.right:
                for ds in samples:
                    if lane.width(float(ds)) < -1e-12:
                        report("error", "negative-width",
                               f"lane {lane.id} width {lane.width(float(ds)):.6f} m",
                               section.s + float(ds))
                        break

    if known_ids is not None:
        for link in (road.predecessor, road.successor):
            if link is not None and link.element_id not in known_ids:
                report("warning", "dangling-link", f"link to unknown road {link.element_id}")
    return issues


def validate(odr_map: OdrMap) -> List[ValidationIssue]:
    """
    Structural validation of a whole map.

    Returns:
        Findings; an empty list means the map is clean
    """
    issues: List[ValidationIssue] = []
    counts: Dict[str, int] = {}
    for road in odr_map.roads:
        counts[road.id] = counts.get(road.id, 0) + 1
    for road_id, count in sorted(counts.items()):
        if count > 1:
            issues.append(ValidationIssue("error", "duplicate-road-id", road_id,
                                          f"{count} roads share this id"))
    known = set(counts)
    for road in sorted(odr_map.roads, key=lambda r: r.id):
        issues.extend(validate_road(road, known))
    return issues


def errors_only(issues: Sequence[ValidationIssue]) -> List[ValidationIssue]:
    return [issue for issue in issues if issue.severity == "error"]
