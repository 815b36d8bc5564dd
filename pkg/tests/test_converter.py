"""Tests for road graph to OpenDRIVE conversion."""

import math

import numpy as np
import pytest

from twinmap.converter import (
    ConversionConfig,
    LaneRule,
    LaneSpec,
    check_clearance,
    convert,
    elevation_stations,
    fit_elevation,
    fit_plan_view,
    lanes_from_tags,
)
from twinmap.errors import (
    ConfigError,
    ConversionError,
    DegenerateInputError,
    MissingTerrainError,
    PreconditionError,
    UnmappedClassError,
)
from twinmap.geo_ingest import LocalFrame, RoadEdge, RoadGraph, build_road_graph, parse_osm
from twinmap.odr_model import (
    Arc,
    ElevPoly,
    Line,
    OdrMap,
    OdrRoad,
    RoadLink,
    errors_only,
    eval_elevation,
    eval_plan_view,
    nearest_s,
    reference_length,
    serialize,
    validate,
)
from twinmap.terrain import sample_height

from conftest import FIXTURE_FRAME, flat_dem, grid_dem, lane_section, local_osm_xml, straight_road


def _road_from(plan_view, elevation=(ElevPoly(0.0, 0.0),), road_id="F"):
    return OdrRoad(
        id=road_id,
        length=reference_length(plan_view),
        plan_view=tuple(plan_view),
        elevation_profile=tuple(elevation),
        lane_sections=(lane_section(),),
    )


def _random_polyline(rng, spread=100.0, steps=(2.0, 15.0)):
    count = int(rng.integers(2, 30))
    heading = rng.uniform(-math.pi, math.pi)
    points = [np.array([rng.uniform(-spread, spread), rng.uniform(-spread, spread)])]
    for _ in range(count - 1):
        heading += rng.normal(0.0, 0.2)
        step = rng.uniform(*steps)
        points.append(points[-1] + step * np.array([math.cos(heading), math.sin(heading)]))
    return [tuple(p) for p in points]


def _graph(points, ways, frame=FIXTURE_FRAME):
    return build_road_graph(parse_osm(local_osm_xml(points, ways, frame)), frame)


class TestFitPlanView:
    """Test cases for reference-line fitting."""

    @pytest.mark.parametrize("mode", ["polyline", "arcfit"])
    def test_collinear_points_give_one_line(self, mode):
        segments = fit_plan_view([(0.0, 0.0), (5.0, 0.0), (10.0, 0.0)], ConversionConfig(fit_mode=mode))

        assert len(segments) == 1
        assert isinstance(segments[0].kind, Line)
        assert segments[0].length == pytest.approx(10.0)
        assert segments[0].hdg == pytest.approx(0.0)

    def test_circle_arcfit(self):
        """Test samples of a radius-100 circle over 30 degrees fit one arc."""
        angles = np.radians(np.arange(0.0, 31.0, 1.0))
        points = np.column_stack([100.0 * np.cos(angles), 100.0 * np.sin(angles)])
        segments = fit_plan_view(points, ConversionConfig(fit_mode="arcfit"))

        arcs = [seg for seg in segments if isinstance(seg.kind, Arc)]
        assert arcs
        for arc in arcs:
            assert abs(arc.kind.curvature - 0.01) < 1e-3
        assert reference_length(segments) == pytest.approx(100.0 * math.pi / 6, abs=1e-6)
        assert segments[0].hdg == pytest.approx(math.pi / 2, abs=1e-6)

        end_x, end_y, _ = segments[-1].end_pose()
        assert end_x == pytest.approx(points[-1, 0], abs=1e-6)
        assert end_y == pytest.approx(points[-1, 1], abs=1e-6)

    def test_clockwise_arc_has_negative_curvature(self):
        angles = np.radians(np.arange(0.0, 31.0, 1.0))
        points = np.column_stack([50.0 * np.cos(angles), -50.0 * np.sin(angles)])
        segments = fit_plan_view(points, ConversionConfig(fit_mode="arcfit"))

        assert all(seg.kind.curvature < 0 for seg in segments if isinstance(seg.kind, Arc))

    def test_right_angle_warns(self):
        """Test an L-shaped polyline gives two lines and a heading warning only."""
        segments = fit_plan_view([(0.0, 0.0), (10.0, 0.0), (10.0, 10.0)])
        issues = validate(OdrMap(roads=(_road_from(segments),)))

        assert len(segments) == 2
        assert [i.code for i in issues] == ["heading-gap"]
        assert errors_only(issues) == []

    def test_coincident_vertices_dropped(self):
        segments = fit_plan_view([(0.0, 0.0), (0.0, 0.0), (4.0, 3.0)])

        assert len(segments) == 1
        assert segments[0].length == pytest.approx(5.0)

    def test_degenerate_polyline(self):
        with pytest.raises(DegenerateInputError):
            fit_plan_view([(1.0, 1.0), (1.0, 1.0)])

    def test_closed_loop_keeps_both_halves(self):
        square = [(0.0, 0.0), (10.0, 0.0), (10.0, 10.0), (0.0, 10.0), (0.0, 0.0)]
        segments = fit_plan_view(square)

        assert len(segments) == 4
        assert reference_length(segments) == pytest.approx(40.0)

    @pytest.mark.parametrize("mode", ["polyline", "arcfit"])
    def test_fidelity_on_random_polylines(self, mode):
        """Test every vertex lies within tolerance and the ends are kept."""
        config = ConversionConfig(fit_mode=mode)
        rng = np.random.default_rng(17 if mode == "polyline" else 29)
        for _ in range(100):
            polyline = _random_polyline(rng)
            segments = fit_plan_view(polyline, config)
            road = _road_from(segments)

            assert errors_only(validate(OdrMap(roads=(road,)))) == []
            for x, y in polyline:
                _, distance = nearest_s(road, x, y)
                assert distance <= config.fit_tolerance + 1e-5
            start = eval_plan_view(road, 0.0)
            end = eval_plan_view(road, road.length)
            assert math.hypot(start[0] - polyline[0][0], start[1] - polyline[0][1]) < 1e-6
            assert math.hypot(end[0] - polyline[-1][0], end[1] - polyline[-1][1]) < 1e-6


class TestLanesFromTags:
    """Test cases for lane derivation from OSM tags."""

    def test_class_default(self):
        spec = lanes_from_tags({"highway": "residential"})

        assert spec == LaneSpec(left=(("driving", 3.25),), right=(("driving", 3.25),))

    def test_motorway_default(self):
        spec = lanes_from_tags({"highway": "motorway"})
        assert spec.driving_count() == 4

    def test_lanes_split_two_way(self):
        """Test an odd total puts the extra lane on the right."""
        spec = lanes_from_tags({"highway": "primary", "lanes": "3"})

        assert len(spec.right) == 2
        assert len(spec.left) == 1

    def test_oneway(self):
        spec = lanes_from_tags({"highway": "primary", "lanes": "2", "oneway": "yes"})

        assert len(spec.right) == 2
        assert spec.left == ()

    def test_reverse_oneway(self):
        spec = lanes_from_tags({"highway": "residential", "oneway": "-1"})

        assert spec.right == ()
        assert len(spec.left) == 1

    def test_directional_counts_win(self):
        tags = {"highway": "secondary", "lanes": "5", "lanes:forward": "2", "lanes:backward": "1"}
        spec = lanes_from_tags(tags)

        assert len(spec.right) == 2
        assert len(spec.left) == 1

    def test_directional_count_fills_from_total(self):
        spec = lanes_from_tags({"highway": "secondary", "lanes": "4", "lanes:forward": "3"})

        assert len(spec.right) == 3
        assert len(spec.left) == 1

    def test_non_integer_lanes_ignored(self):
        spec = lanes_from_tags({"highway": "tertiary", "lanes": "2;3"})
        assert spec.driving_count() == 2

    def test_sidewalks_and_shoulders(self):
        """Test shoulders sit outside driving lanes and sidewalks outermost."""
        spec = lanes_from_tags({"highway": "residential", "sidewalk": "both", "shoulder": "right"})

        assert [t for t, _ in spec.right] == ["driving", "shoulder", "sidewalk"]
        assert [t for t, _ in spec.left] == ["driving", "sidewalk"]
        assert spec.right[2][1] == 1.8

    def test_unmapped_class(self):
        with pytest.raises(UnmappedClassError) as info:
            lanes_from_tags({"highway": "raceway"})
        assert info.value.highway_class == "raceway"

    def test_missing_highway(self):
        with pytest.raises(PreconditionError):
            lanes_from_tags({"name": "x"})

    def test_custom_rule(self):
        config = ConversionConfig(class_rules={"track": LaneRule(0, 1, 2.5)})
        spec = lanes_from_tags({"highway": "track"}, config)

        assert spec == LaneSpec(left=(), right=(("driving", 2.5),))


class TestFitElevation:
    """Test cases for elevation profiles."""

    STRAIGHT = fit_plan_view([(-50.0, 0.0), (50.0, 0.0)])

    def test_stations(self):
        assert elevation_stations(12.0, 5.0).tolist() == [0.0, 5.0, 10.0, 12.0]
        assert elevation_stations(10.0, 5.0).tolist() == [0.0, 5.0, 10.0]

    def test_flat_terrain(self):
        profile = fit_elevation(self.STRAIGHT, flat_dem(5.0), is_bridge=False)
        road = _road_from(self.STRAIGHT, profile)

        for s in np.linspace(0.0, 100.0, 41):
            assert eval_elevation(road, s) == pytest.approx(5.0, abs=1e-9)

    def test_ramp(self):
        """Test a linear DEM is reproduced exactly between stations."""
        dem = grid_dem(lambda x, y: 0.1 * x)
        profile = fit_elevation(self.STRAIGHT, dem, is_bridge=False)
        road = _road_from(self.STRAIGHT, profile)

        for s in np.linspace(0.0, 100.0, 37):
            assert eval_elevation(road, s) == pytest.approx(0.1 * (s - 50.0), abs=1e-9)

    def test_bridge_spans_valley(self):
        """Test a bridge is one linear deck between its abutments."""
        dem = grid_dem(lambda x, y: 20.0 - 15.0 * np.exp(-x ** 2 / (2 * 20.0 ** 2)))
        bridge = fit_elevation(self.STRAIGHT, dem, is_bridge=True)
        ground = _road_from(self.STRAIGHT, fit_elevation(self.STRAIGHT, dem, is_bridge=False))

        assert len(bridge) == 1
        assert bridge[0].a == pytest.approx(sample_height(dem, -50.0, 0.0))
        assert bridge[0].b == pytest.approx(0.0, abs=1e-9)
        deck = _road_from(self.STRAIGHT, bridge)
        assert eval_elevation(deck, 50.0) - eval_elevation(ground, 50.0) > 10.0

    def test_exact_at_stations(self):
        dem = grid_dem(lambda x, y: 3.0 * np.sin(x / 15.0) + 0.05 * y)
        profile = fit_elevation(self.STRAIGHT, dem, is_bridge=False)
        road = _road_from(self.STRAIGHT, profile)

        for s in elevation_stations(100.0, 5.0):
            x, y, _ = eval_plan_view(road, s)
            assert eval_elevation(road, s) == pytest.approx(sample_height(dem, x, y), abs=1e-9)

    def test_c1_continuity(self):
        """Test value and slope agree on both sides of each interior station."""
        dem = grid_dem(lambda x, y: 3.0 * np.sin(x / 15.0))
        profile = fit_elevation(self.STRAIGHT, dem, is_bridge=False)

        for before, after in zip(profile, profile[1:]):
            ds = after.s - before.s
            assert before.value(ds) == pytest.approx(after.a, abs=1e-9)
            assert before.slope(ds) == pytest.approx(after.b, abs=1e-9)

    def test_outside_dem(self):
        plan_view = fit_plan_view([(150.0, 0.0), (250.0, 0.0)])
        with pytest.raises(MissingTerrainError):
            fit_elevation(plan_view, flat_dem(), is_bridge=False)


def _crossing(deck_z, road_z, road_y=0.0, bridge_start=-20.0, deck_tags=None):
    tags = {"highway": "secondary", **({"bridge": "yes"} if deck_tags is None else deck_tags)}
    bridge = RoadEdge("B_0", ((0.0, bridge_start), (0.0, 20.0)), tags, (1, 2))
    under = RoadEdge("R_0", ((-20.0, road_y), (20.0, road_y)), {"highway": "residential"}, (3, 4))
    graph = RoadGraph(edges=(bridge, under), nodes={}, frame=LocalFrame(0.0, 0.0))
    odr_map = OdrMap(roads=(
        straight_road("B_0", length=20.0 - bridge_start, x=0.0, y=bridge_start, hdg=math.pi / 2, z=deck_z),
        straight_road("R_0", length=40.0, x=-20.0, y=road_y, z=road_z),
    ))
    return odr_map, graph


class TestCheckClearance:
    """Test cases for bridge clearance checks."""

    def test_enough_clearance(self):
        assert check_clearance(*_crossing(10.0, 2.0)) == []

    def test_low_bridge(self):
        issues = check_clearance(*_crossing(5.0, 2.0))

        assert len(issues) == 1
        assert issues[0].separation == pytest.approx(3.0)
        assert (issues[0].x, issues[0].y) == pytest.approx((0.0, 0.0))
        assert "bridge B_0 over road R_0" in str(issues[0])

    @pytest.mark.parametrize("deck_tags", [{"layer": "1"}, {"layer": " 2"}, {"bridge": "yes", "layer": "-1"}])
    def test_elevated_deck_tags(self, deck_tags):
        """Test a positive layer marks an overpass even without a bridge tag."""
        issues = check_clearance(*_crossing(5.0, 2.0, deck_tags=deck_tags))

        assert [(issue.bridge_id, issue.road_id) for issue in issues] == [("B_0", "R_0")]

    @pytest.mark.parametrize("deck_tags", [{}, {"layer": "0"}, {"layer": "-1"}, {"layer": "high"}])
    def test_ground_level_tags(self, deck_tags):
        assert check_clearance(*_crossing(5.0, 2.0, deck_tags=deck_tags)) == []

    def test_no_crossing(self):
        assert check_clearance(*_crossing(5.0, 2.0, road_y=50.0)) == []

    def test_shared_endpoint_is_not_a_crossing(self):
        odr_map, graph = _crossing(5.0, 2.0, bridge_start=0.0)
        under = RoadEdge("R_0", ((-20.0, 0.0), (0.0, 0.0)), {"highway": "residential"}, (3, 1))
        graph = RoadGraph(edges=(graph.edges[0], under), nodes={}, frame=graph.frame)

        assert check_clearance(odr_map, graph) == []


class TestConvert:
    """Test cases for whole-graph conversion."""

    def test_single_edge(self):
        graph = _graph({1: (0.0, 0.0), 2: (25.0, 0.0), 3: (50.0, 0.0)},
                       [(1, [1, 2, 3], {"highway": "residential", "name": "Main"})])
        odr_map = convert(graph, flat_dem())

        assert len(odr_map.roads) == 1
        road = odr_map.roads[0]
        assert road.id == "1_0"
        assert road.name == "Main"
        assert road.length == pytest.approx(50.0, abs=1e-6)
        assert road.predecessor is None and road.successor is None
        assert eval_elevation(road, 20.0) == pytest.approx(5.0)
        assert odr_map.header.geo_reference == FIXTURE_FRAME.proj_string()
        assert odr_map.header.name == "twinmap"

    def test_degree_two_link(self):
        graph = _graph({1: (0.0, 0.0), 2: (30.0, 0.0), 3: (30.0, 30.0)},
                       [(1, [1, 2], {"highway": "residential"}),
                        (2, [2, 3], {"highway": "residential"})])
        odr_map = convert(graph, flat_dem())

        first, second = odr_map.roads
        assert first.successor == RoadLink("2_0", "start")
        assert first.predecessor is None
        assert second.predecessor == RoadLink("1_0", "end")
        assert second.successor is None

    def test_four_way_crossing_is_not_linked(self):
        graph = _graph({1: (-30.0, 0.0), 2: (0.0, 0.0), 3: (30.0, 0.0), 4: (0.0, -30.0), 5: (0.0, 30.0)},
                       [(1, [1, 2, 3], {"highway": "residential"}),
                        (2, [4, 2, 5], {"highway": "residential"})])
        odr_map = convert(graph, flat_dem())

        assert [road.id for road in odr_map.roads] == ["1_0", "1_1", "2_0", "2_1"]
        assert all(road.predecessor is None and road.successor is None for road in odr_map.roads)

    def test_unmapped_class_fails(self):
        graph = _graph({1: (0.0, 0.0), 2: (10.0, 0.0), 3: (0.0, 10.0)},
                       [(1, [1, 2], {"highway": "raceway"}),
                        (2, [1, 3], {"highway": "residential"})])

        with pytest.raises(ConversionError) as info:
            convert(graph, flat_dem())
        assert list(info.value.failures) == ["1_0"]
        assert isinstance(info.value.failures["1_0"], UnmappedClassError)

    def test_empty_graph(self):
        graph = RoadGraph(edges=(), nodes={}, frame=LocalFrame(0.0, 0.0))
        with pytest.raises(PreconditionError):
            convert(graph, flat_dem())

    def test_nodata_is_filled(self):
        dem = flat_dem(7.0)
        dem.values[50, 50] = dem.nodata
        graph = _graph({1: (-20.0, 0.0), 2: (20.0, 0.0)}, [(1, [1, 2], {"highway": "primary"})])

        road = convert(graph, dem).roads[0]
        assert eval_elevation(road, 20.0) == pytest.approx(7.0)

    @pytest.mark.parametrize("mode", ["polyline", "arcfit"])
    def test_random_graphs_validate_clean(self, mode):
        """Test random single-way graphs on rolling terrain convert cleanly."""
        dem = grid_dem(lambda x, y: 2.0 * np.sin(x / 30.0) * np.cos(y / 40.0))
        config = ConversionConfig(fit_mode=mode)
        rng = np.random.default_rng(5)
        for _ in range(20):
            polyline = _random_polyline(rng, spread=20.0, steps=(2.0, 5.0))
            points = {1000 + k: p for k, p in enumerate(polyline)}
            graph = _graph(points, [(1, sorted(points), {"highway": "primary"})])
            odr_map = convert(graph, dem, config)

            assert errors_only(validate(odr_map)) == []

    def test_workers_give_identical_maps(self):
        graph = _graph({1: (-30.0, 0.0), 2: (0.0, 0.0), 3: (30.0, 5.0), 4: (0.0, -30.0), 5: (3.0, 30.0)},
                       [(1, [1, 2, 3], {"highway": "residential"}),
                        (2, [4, 2, 5], {"highway": "primary"})])
        dem = grid_dem(lambda x, y: 0.05 * x - 0.02 * y)

        sequential = serialize(convert(graph, dem, workers=1))
        parallel = serialize(convert(graph, dem, workers=2))
        assert sequential == parallel


class TestConversionConfig:
    """Test cases for conversion settings."""

    def test_from_mapping(self):
        config = ConversionConfig.from_mapping({
            "convert.fit_mode": "arcfit",
            "convert.arc_tolerance": "0.5",
            "class.residential.width": "3.0",
            "class.track.lanes_left": "0",
        })

        assert config.fit_mode == "arcfit"
        assert config.arc_tolerance == 0.5
        assert config.class_rules["residential"] == LaneRule(1, 1, 3.0)
        assert config.class_rules["track"] == LaneRule(0, 1, 3.5)
        assert config.class_rules["motorway"] == LaneRule(2, 2, 3.7)

    def test_overrides(self):
        config = ConversionConfig.from_mapping({"convert.fit_mode": "arcfit"}, fit_mode="polyline", name=None)

        assert config.fit_mode == "polyline"
        assert config.name == "twinmap"

    @pytest.mark.parametrize("values", [
        {"convert.unknown": "1"},
        {"convert.arc_tolerance": "wide"},
        {"class.residential.colour": "red"},
        {"class.residential.lanes_left": "1.5"},
        {"convert.fit_mode": "spline"},
        {"convert.sidewalk_width": "0"},
    ])
    def test_rejected_values(self, values):
        with pytest.raises(ConfigError):
            ConversionConfig.from_mapping(values)

    def test_rule_needs_a_lane(self):
        with pytest.raises(ConfigError):
            LaneRule(0, 0, 3.0)
