"""Tests for OSM ingestion and road graph construction."""

import numpy as np
import pytest

from twinmap.errors import DanglingReferenceError, OsmParseError
from twinmap.geo_ingest import (
    LocalFrame,
    build_road_graph,
    dump_graph,
    load_graph,
    parse_graph,
    parse_osm,
    project,
    project_many,
    road_frame,
    save_graph,
    unproject,
    unproject_many,
)

from conftest import osm_xml


def _graph_xml(ways):
    """Nodes 1..9 on a 10 m lattice at the equator, plus the given ways."""
    nodes = [(n, 0.0, n * 1e-4) for n in range(1, 10)]
    return osm_xml(nodes, ways)


class TestParseOsm:
    """Test cases for OSM XML parsing."""

    def test_single_node(self):
        """Test one node and no ways."""
        extract = parse_osm(osm_xml([(1, 10.0, 20.0)], []))

        assert len(extract.nodes) == 1
        assert extract.nodes[1].lat == 10.0
        assert extract.nodes[1].lon == 20.0
        assert extract.ways == ()

    def test_way_with_refs_and_tags(self):
        """Test way refs and tags are captured in order."""
        xml = osm_xml([(1, 0.0, 0.0), (2, 0.0, 0.001)],
                      [(7, [1, 2], {"highway": "residential"})])
        extract = parse_osm(xml)

        assert len(extract.nodes) == 2
        assert len(extract.ways) == 1
        assert extract.ways[0].node_refs == (1, 2)
        assert extract.ways[0].tags == {"highway": "residential"}
        assert extract.ways[0].is_road_candidate

    def test_non_road_ways_are_kept(self):
        """Test that filtering is left to graph construction."""
        xml = osm_xml([(1, 0.0, 0.0), (2, 0.0, 0.001)], [(3, [1, 2], {"building": "yes"})])
        extract = parse_osm(xml)

        assert len(extract.ways) == 1
        assert not extract.ways[0].is_road_candidate

    def test_dangling_reference(self):
        """Test a way referencing a missing node."""
        xml = osm_xml([(1, 0.0, 0.0)], [(7, [1, 99], {"highway": "residential"})])

        with pytest.raises(DanglingReferenceError) as info:
            parse_osm(xml)
        assert info.value.way_id == 7
        assert info.value.node_id == 99
        assert "way 7" in str(info.value)
        assert info.value.line is not None

    def test_malformed_xml_reports_line(self):
        """Test malformed XML raises with a line number."""
        xml = '<?xml version="1.0"?>\n<osm>\n  <node id="1" lat="0" lon="0">\n</osm>\n'

        with pytest.raises(OsmParseError) as info:
            parse_osm(xml)
        assert info.value.line is not None
        assert "line" in str(info.value)

    def test_wrong_root_element(self):
        """Test a non-osm document is rejected."""
        with pytest.raises(OsmParseError):
            parse_osm("<gpx></gpx>")

    def test_out_of_range_latitude(self):
        """Test WGS84 bounds are enforced."""
        with pytest.raises(OsmParseError):
            parse_osm(osm_xml([(1, 95.0, 0.0)], []))

    def test_non_numeric_attribute(self):
        """Test bad numbers in attributes are reported."""
        xml = '<osm>\n<node id="1" lat="north" lon="0"/>\n</osm>'

        with pytest.raises(OsmParseError) as info:
            parse_osm(xml)
        assert info.value.line == 2


class TestProjection:
    """Test cases for the local equirectangular frame."""

    def test_origin_maps_to_origin(self):
        frame = LocalFrame(48.1, 11.5)
        assert project(48.1, 11.5, frame) == (0.0, 0.0)

    def test_longitude_step_at_equator(self):
        """Test 0.001 degrees of longitude at the equator."""
        x, y = project(0.0, 0.001, LocalFrame(0.0, 0.0))

        assert x == pytest.approx(111.3194908, abs=1e-6)
        assert y == 0.0

    def test_longitude_step_at_sixty_degrees(self):
        """Test the cos(lat0) scale factor."""
        x, _ = project(60.0, 0.001, LocalFrame(60.0, 0.0))

        assert x == pytest.approx(55.6597454, abs=1e-6)

    def test_round_trip(self):
        """Test unproject(project(p)) on 1000 random points in a 0.1 degree box."""
        rng = np.random.default_rng(1)
        frame = LocalFrame(37.77, -122.42)
        lat = 37.72 + 0.1 * rng.random(1000)
        lon = -122.47 + 0.1 * rng.random(1000)

        x, y = project_many(lat, lon, frame)
        lat_back, lon_back = unproject_many(x, y, frame)

        assert np.max(np.abs(lat_back - lat)) < 1e-9
        assert np.max(np.abs(lon_back - lon)) < 1e-9

    def test_scalar_unproject(self):
        frame = LocalFrame(10.0, 20.0)
        lat, lon = unproject(*project(10.01, 20.02, frame), frame)

        assert lat == pytest.approx(10.01, abs=1e-12)
        assert lon == pytest.approx(20.02, abs=1e-12)

    def test_proj_string(self):
        """Test the header geo-reference string."""
        text = LocalFrame(48.0, 11.0).proj_string()

        assert text.startswith("+proj=eqc")
        assert "+lat_0=48.0" in text
        assert "+lon_0=11.0" in text


class TestBuildRoadGraph:
    """Test cases for splitting ways into a road graph."""

    def test_single_way_no_split(self):
        """Test one way without shared nodes."""
        extract = parse_osm(_graph_xml([(1, [1, 2, 3], {"highway": "residential"})]))
        graph = build_road_graph(extract, LocalFrame(0.0, 0.0))

        assert len(graph.edges) == 1
        assert graph.edges[0].id == "1_0"
        assert len(graph.edges[0].polyline) == 3

    def test_shared_node_splits_both_ways(self):
        """Test ways A [1,2,3] and B [4,2,5] sharing node 2."""
        xml = _graph_xml([
            (10, [1, 2, 3], {"highway": "residential"}),
            (20, [4, 2, 5], {"highway": "residential"}),
        ])
        graph = build_road_graph(parse_osm(xml), LocalFrame(0.0, 0.0))

        assert [e.id for e in graph.edges] == ["10_0", "10_1", "20_0", "20_1"]
        assert [e.node_ids for e in graph.edges] == [(1, 2), (2, 3), (4, 2), (2, 5)]
        assert graph.node_degree(2) == 4

    def test_non_highway_way_is_dropped(self):
        extract = parse_osm(_graph_xml([(1, [1, 2, 3], {"building": "yes"})]))
        graph = build_road_graph(extract, LocalFrame(0.0, 0.0))

        assert len(graph.edges) == 0

    def test_empty_graph_warns(self, caplog):
        """Test an extract without roads gives an empty graph and a warning."""
        extract = parse_osm(_graph_xml([]))
        graph = build_road_graph(extract)

        assert len(graph) == 0
        assert "empty" in caplog.text

    def test_deny_list(self):
        """Test denied classes never become edges."""
        xml = _graph_xml([
            (1, [1, 2], {"highway": "footway"}),
            (2, [3, 4], {"highway": "service"}),
        ])
        extract = parse_osm(xml)

        assert [e.id for e in build_road_graph(extract, LocalFrame(0.0, 0.0)).edges] == ["2_0"]
        custom = build_road_graph(extract, LocalFrame(0.0, 0.0), deny=frozenset({"service"}))
        assert [e.id for e in custom.edges] == ["1_0"]

    def test_self_intersecting_way_splits_at_repeat(self):
        """Test a node visited twice by one way becomes a split point."""
        xml = osm_xml(
            [(1, 0.0, 0.0), (2, 0.0, 0.0001), (3, 0.0001, 0.0001),
             (4, 0.0001, 0.0), (5, -0.0001, 0.0001)],
            [(1, [1, 2, 3, 4, 2, 5], {"highway": "residential"})],
        )
        graph = build_road_graph(parse_osm(xml), LocalFrame(0.0, 0.0))

        assert [e.node_ids for e in graph.edges] == [(1, 2), (2, 3, 4, 2), (2, 5)]

    def test_duplicate_consecutive_refs_collapse(self):
        extract = parse_osm(_graph_xml([(1, [1, 2, 2, 3], {"highway": "residential"})]))
        graph = build_road_graph(extract, LocalFrame(0.0, 0.0))

        assert graph.edges[0].node_ids == (1, 2, 3)

    def test_bridge_flag(self):
        extract = parse_osm(_graph_xml([(1, [1, 2], {"highway": "primary", "bridge": "yes"})]))
        graph = build_road_graph(extract, LocalFrame(0.0, 0.0))

        assert graph.edges[0].is_bridge

    def test_default_frame_is_road_node_centroid(self):
        xml = osm_xml([(1, 10.0, 20.0), (2, 12.0, 22.0), (3, 50.0, 50.0)],
                      [(1, [1, 2], {"highway": "primary"})])
        frame = road_frame(parse_osm(xml))

        assert frame.origin_lat == pytest.approx(11.0)
        assert frame.origin_lon == pytest.approx(21.0)

    def test_split_completeness(self, city_block):
        """Test no shared node is ever interior to an edge."""
        extract = parse_osm(city_block["osm"].read_bytes())
        graph = build_road_graph(extract)

        endpoint_use = {}
        for edge in graph.edges:
            for node_id in (edge.start_node, edge.end_node):
                endpoint_use[node_id] = endpoint_use.get(node_id, 0) + 1
        interior_use = {}
        for edge in graph.edges:
            for node_id in edge.node_ids[1:-1]:
                interior_use[node_id] = interior_use.get(node_id, 0) + 1

        for node_id, count in interior_use.items():
            assert count == 1
            assert node_id not in endpoint_use

    def test_determinism(self, city_block):
        """Test two runs over the same bytes give identical graphs."""
        data = city_block["osm"].read_bytes()
        first = build_road_graph(parse_osm(data))
        second = build_road_graph(parse_osm(data))

        assert dump_graph(first) == dump_graph(second)


class TestGraphFile:
    """Test cases for the adjusted graph file."""

    def test_save_and_load(self, tmp_path, city_block):
        graph = build_road_graph(parse_osm(city_block["osm"].read_bytes()))
        path = save_graph(graph, tmp_path / "graph.jsonl")
        loaded = load_graph(path)

        assert loaded.frame == graph.frame
        assert loaded.edges == graph.edges

    def test_missing_frame_record(self):
        line = '{"id": "1_0", "node_ids": [1, 2], "tags": {}, "vertices": [[0, 0], [1, 0]]}\n'

        with pytest.raises(OsmParseError):
            parse_graph(line)

    def test_inconsistent_record(self):
        text = (
            '{"frame": {"earth_radius": 6378137.0, "origin_lat": 0.0, "origin_lon": 0.0}}\n'
            '{"id": "1_0", "node_ids": [1], "tags": {}, "vertices": [[0, 0], [1, 0]]}\n'
        )

        with pytest.raises(OsmParseError) as info:
            parse_graph(text)
        assert info.value.line == 2
