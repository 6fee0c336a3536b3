"""Document model: closed enums, parsing, validation, canonical round-trip,
assembly, and diff/apply."""

from __future__ import annotations

import json
import random
import string

import pytest

from conftest import make_arrow, make_frame, make_geo, random_manifest
from evocanvas.geometry import BoundingBox
from evocanvas.schema import (
    ALIGNS,
    ARROWHEADS,
    COLORS,
    CoverageError,
    DASHES,
    DiagramManifest,
    FILLS,
    FONTS,
    GEOS,
    GraphEdge,
    GraphGroup,
    GraphNode,
    LayoutConfig,
    ManifestSyntaxError,
    SIZES,
    SchemaError,
    SemanticGraph,
    StyleSchema,
    apply_edit_log,
    assemble_manifest,
    canonicalize,
    diff_manifests,
    empty_manifest,
    ground_graph,
    manifest_to_obj,
    parse_manifest,
    serialize_manifest,
    validate,
    validate_graph,
)

EMPTY = '{"version":1,"shapes":[],"meta":{"diagramType":"flowchart","domain":"","title":""}}'


def geo_obj(**overrides) -> dict:
    props = {"geo": "rectangle", "w": 100, "h": 60, "color": "blue", "fill": "semi",
             "dash": "draw", "size": "m", "font": "sans", "text": "hello",
             "align": "middle"}
    props.update(overrides.pop("props", {}))
    obj = {"id": "s1", "kind": "geo", "x": 0, "y": 0, "rotation": 0, "index": "i",
           "props": props}
    obj.update(overrides)
    return obj


def doc(*shapes) -> str:
    return json.dumps({"version": 1, "shapes": list(shapes),
                       "meta": {"diagramType": "flowchart", "domain": "", "title": ""}})


class TestEnums:
    def test_cardinalities(self):
        assert (len(COLORS), len(GEOS), len(SIZES), len(FILLS), len(DASHES), len(FONTS)) == \
            (13, 13, 4, 4, 4, 4)

    def test_memberships(self):
        assert {"black", "grey", "light-violet", "violet", "blue", "light-blue", "yellow",
                "orange", "green", "light-green", "light-red", "red", "white"} == set(COLORS)
        assert {"rectangle", "ellipse", "triangle", "diamond", "pentagon", "hexagon",
                "octagon", "star", "cloud", "arrowLeft", "arrowRight", "arrowUp",
                "arrowDown"} == set(GEOS)
        assert set(SIZES) == {"s", "m", "l", "xl"}
        assert set(FILLS) == {"none", "semi", "solid", "pattern"}
        assert set(DASHES) == {"draw", "solid", "dashed", "dotted"}
        assert set(FONTS) == {"draw", "sans", "serif", "mono"}
        assert set(ALIGNS) == {"start", "middle", "end"}
        assert set(ARROWHEADS) == {"none", "arrow"}


class TestParse:
    def test_minimal_document(self):
        manifest = parse_manifest(EMPTY)
        assert manifest.version == 1 and manifest.shapes == []
        assert manifest.meta["diagramType"] == "flowchart"

    def test_malformed_json(self):
        with pytest.raises(ManifestSyntaxError):
            parse_manifest("{not json")

    def test_non_utf8(self):
        with pytest.raises(ManifestSyntaxError):
            parse_manifest(b"\xff\xfe{}")

    def test_out_of_palette_color_names_field(self):
        with pytest.raises(SchemaError) as err:
            parse_manifest(doc(geo_obj(props={"color": "magenta"})))
        v = err.value.violations[0]
        assert (v.shape_id, v.field, v.rule) == ("s1", "color", "closed-enum")

    def test_dangling_arrow_reference(self):
        arrow = {"id": "a1", "kind": "arrow", "x": 0, "y": 0, "rotation": 0, "index": "i",
                 "props": {"start": {"boundTo": "ghost", "anchor": [0.5, 0.5]},
                           "end": {"point": [10, 10]}, "color": "grey", "dash": "solid",
                           "size": "s", "font": "sans", "text": "",
                           "arrowheadStart": "none", "arrowheadEnd": "arrow"}}
        with pytest.raises(SchemaError) as err:
            parse_manifest(doc(arrow))
        assert any(v.rule == "dangling-reference" for v in err.value.violations)

    def test_unknown_fields_rejected(self):
        with pytest.raises(SchemaError) as err:
            parse_manifest(doc(geo_obj(zindex=4)))
        assert any(v.rule == "unknown-field" and v.field == "zindex"
                   for v in err.value.violations)
        with pytest.raises(SchemaError):
            parse_manifest(doc(geo_obj(props={"shadow": True})))

    def test_float_geometry_rejected(self):
        with pytest.raises(SchemaError):
            parse_manifest(doc(geo_obj(x=1.5)))
        with pytest.raises(SchemaError):
            parse_manifest(doc(geo_obj(props={"w": 10.0})))

    def test_unknown_diagram_type_rejected(self):
        bad = json.loads(EMPTY)
        bad["meta"]["diagramType"] = "pie_chart"
        with pytest.raises(SchemaError) as err:
            parse_manifest(json.dumps(bad))
        assert err.value.violations[0].rule == "bad-diagram-type"


class TestValidate:
    def test_clean_flowchart(self, flowchart_manifest):
        assert validate(flowchart_manifest) == []

    def test_zero_width(self):
        manifest, _ = parse_ok(doc(geo_obj()))
        manifest.shapes[0].props["w"] = 0
        rules = {v.rule for v in validate(manifest)}
        assert "positive-dimensions" in rules

    def test_duplicate_order_key(self):
        a = make_geo("a", "a1", 0, 0)
        b = make_geo("b", "a1", 200, 200)
        manifest = DiagramManifest(version=1, shapes=[a, b],
                                   meta={"diagramType": "flowchart", "domain": "", "title": ""})
        assert any(v.rule == "unique-order-key" for v in validate(manifest))

    def test_parent_must_be_frame(self):
        a = make_geo("a", "a", 0, 0)
        b = make_geo("b", "b", 200, 200)
        b.parent = "a"
        manifest = DiagramManifest(version=1, shapes=[a, b],
                                   meta={"diagramType": "flowchart", "domain": "", "title": ""})
        assert any(v.rule == "parent-not-frame" for v in validate(manifest))

    def test_parent_cycle(self):
        f1 = make_frame("f1", "a", 0, 0, 100, 100, parent="f2")
        f2 = make_frame("f2", "b", 200, 200, 100, 100, parent="f1")
        manifest = DiagramManifest(version=1, shapes=[f1, f2],
                                   meta={"diagramType": "flowchart", "domain": "", "title": ""})
        assert any(v.rule == "parent-cycle" for v in validate(manifest))

    def test_negative_coordinates(self):
        manifest, _ = parse_ok(doc(geo_obj()))
        manifest.shapes[0].x = -5
        assert any(v.rule == "negative-coordinate" for v in validate(manifest))


def parse_ok(text: str):
    manifest = parse_manifest(text)
    return manifest, serialize_manifest(manifest)


class TestCanonical:
    def test_serialize_parse_round_trip_is_byte_identical(self):
        rng = random.Random(2)
        for _ in range(50):
            manifest = random_manifest(rng, rng.randrange(1, 20))
            text = serialize_manifest(manifest)
            again = serialize_manifest(parse_manifest(text))
            assert text == again

    def test_parse_is_idempotent_through_serialization(self):
        manifest = parse_manifest(EMPTY)
        assert serialize_manifest(parse_manifest(serialize_manifest(manifest))) == \
            serialize_manifest(manifest)

    def test_shapes_sorted_by_order_key(self):
        b = make_geo("b", "m", 0, 0)
        a = make_geo("a", "c", 200, 200)
        manifest = canonicalize(DiagramManifest(
            version=1, shapes=[b, a],
            meta={"diagramType": "flowchart", "domain": "", "title": ""}))
        assert [s.id for s in manifest.shapes] == ["a", "b"]


class TestEnumFuzz:
    def test_acceptance_equals_enum_membership(self):
        """Random property values are accepted exactly when they are members
        of the closed style vocabularies."""
        rng = random.Random(99)
        alphabet = string.ascii_lowercase + "-"
        checked = 0
        for prop, members in (("color", COLORS), ("geo", GEOS), ("size", SIZES),
                              ("fill", FILLS), ("dash", DASHES), ("font", FONTS)):
            for _ in range(400):
                value = rng.choice(members) if rng.random() < 0.5 else \
                    "".join(rng.choice(alphabet) for _ in range(rng.randrange(1, 12)))
                text = doc(geo_obj(props={prop: value}))
                accepted = True
                try:
                    parse_manifest(text)
                except SchemaError:
                    accepted = False
                assert accepted == (value in members), (prop, value)
                checked += 1
        assert checked == 2400


def simple_graph() -> SemanticGraph:
    return SemanticGraph(
        nodes=[GraphNode("n1", "Start"), GraphNode("n2", "End")],
        edges=[GraphEdge("e1", "n1", "n2", label="go")],
        groups=[],
        diagram_type="flowchart",
    )


def style_for(graph: SemanticGraph) -> StyleSchema:
    return StyleSchema(
        per_node={n.node_id: {"geo": "rectangle", "color": "blue", "fill": "semi",
                              "dash": "draw", "size": "m", "font": "sans",
                              "hierarchyRank": i}
                  for i, n in enumerate(graph.nodes)},
        per_edge={e.edge_id: {"color": "grey", "dash": "solid", "arrowheadStart": "none",
                              "arrowheadEnd": "arrow"} for e in graph.edges},
        per_group={g.group_id: {"color": "grey"} for g in graph.groups},
    )


def layout_for(graph: SemanticGraph) -> LayoutConfig:
    per_node = {n.node_id: BoundingBox(64, 64 + 140 * i, 160, 80)
                for i, n in enumerate(graph.nodes)}
    per_group = {}
    for g in graph.groups:
        members = [per_node[n.node_id] for n in graph.nodes if n.group_id == g.group_id]
        x = min(b.x for b in members) - 24
        y = min(b.y for b in members) - 24
        r = max(b.right for b in members) + 24
        btm = max(b.bottom for b in members) + 24
        per_group[g.group_id] = BoundingBox(x, y, r - x, btm - y)
    return LayoutConfig(per_node=per_node, per_group=per_group)


class TestGrounding:
    def test_surface_forms_collapse(self):
        graph = SemanticGraph(
            nodes=[GraphNode("n1", "DB"), GraphNode("n2", "db"),
                   GraphNode("n3", "Database", aliases=("DB",))],
            edges=[GraphEdge("e1", "n1", "n3", label="stores")],
            groups=[], diagram_type="flowchart",
        )
        grounded = ground_graph(graph)
        assert len(grounded.nodes) == 1
        assert grounded.nodes[0].node_id == "n1"
        # The only edge collapsed into a self-loop and was dropped.
        assert grounded.edges == []
        assert validate_graph(grounded) == []

    def test_whitespace_and_case_normalization(self):
        graph = SemanticGraph(
            nodes=[GraphNode("a", "Load  Data"), GraphNode("b", "load data")],
            edges=[], groups=[], diagram_type="flowchart")
        assert len(ground_graph(graph).nodes) == 1

    def test_duplicate_edges_deduped_after_merge(self):
        graph = SemanticGraph(
            nodes=[GraphNode("a", "X"), GraphNode("b", "x"), GraphNode("c", "Y")],
            edges=[GraphEdge("e1", "a", "c"), GraphEdge("e2", "b", "c")],
            groups=[], diagram_type="flowchart")
        grounded = ground_graph(graph)
        assert len(grounded.edges) == 1


class TestAssemble:
    def test_two_nodes_one_edge(self):
        graph = simple_graph()
        manifest = assemble_manifest(graph, style_for(graph), layout_for(graph))
        kinds = [s.kind for s in manifest.shapes]
        assert kinds.count("geo") == 2 and kinds.count("arrow") == 1
        arrow = next(s for s in manifest.shapes if s.kind == "arrow")
        assert arrow.props["start"]["boundTo"] == "n1"
        assert arrow.props["end"]["boundTo"] == "n2"
        assert validate(manifest) == []

    def test_frame_sorts_below_children(self):
        graph = SemanticGraph(
            nodes=[GraphNode("n1", "A", group_id="g1"), GraphNode("n2", "B", group_id="g1")],
            edges=[], groups=[GraphGroup("g1", "Group")], diagram_type="architecture_diagram",
        )
        manifest = assemble_manifest(graph, style_for(graph), layout_for(graph))
        frame = next(s for s in manifest.shapes if s.kind == "frame")
        children = [s for s in manifest.shapes if s.parent == "g1"]
        assert len(children) == 2
        assert all(frame.index < c.index for c in children)

    def test_missing_layout_coverage(self):
        graph = SemanticGraph(
            nodes=[GraphNode("n1", "A"), GraphNode("n2", "B"), GraphNode("n3", "C")],
            edges=[], groups=[], diagram_type="flowchart")
        layout = layout_for(graph)
        del layout.per_node["n3"]
        with pytest.raises(CoverageError) as err:
            assemble_manifest(graph, style_for(graph), layout)
        assert err.value.missing == ["n3"]

    def test_hierarchy_rank_orders_draw_keys(self):
        graph = SemanticGraph(
            nodes=[GraphNode("n1", "late"), GraphNode("n2", "early")],
            edges=[], groups=[], diagram_type="flowchart")
        style = style_for(graph)
        style.per_node["n1"]["hierarchyRank"] = 5
        style.per_node["n2"]["hierarchyRank"] = 1
        manifest = assemble_manifest(graph, style, layout_for(graph))
        by_id = manifest.shape_map()
        assert by_id["n2"].index < by_id["n1"].index


class TestDiffApply:
    def test_identical_manifests_empty_log(self, flowchart_manifest):
        log = diff_manifests(flowchart_manifest, flowchart_manifest)
        assert log.is_empty()

    def test_single_move_logged(self, flowchart_manifest):
        import copy

        edited = copy.deepcopy(flowchart_manifest)
        target = edited.shapes[0]
        before_x = target.x
        target.x = before_x + 40
        log = diff_manifests(flowchart_manifest, edited)
        assert [m for m in log.modified if m.id == target.id] == \
            [type(log.modified[0])(target.id, "x", before_x, before_x + 40)]

    def test_apply_reproduces_canonical_form_randomized(self):
        rng = random.Random(77)
        for _ in range(60):
            a = random_manifest(rng, 20)
            b = random_manifest(rng, 20, diagram_type="mind_map")
            log = diff_manifests(a, b)
            assert serialize_manifest(apply_edit_log(log, a)) == serialize_manifest(b)
            assert diff_manifests(a, a).is_empty()

    def test_edit_log_json_round_trip(self, flowchart_manifest):
        import copy

        from evocanvas.schema import EditLog

        edited = copy.deepcopy(flowchart_manifest)
        edited.shapes[0].props["color"] = "red"
        del edited.shapes[-1]
        log = diff_manifests(flowchart_manifest, edited)
        obj = log.to_obj()
        assert set(obj) == {"added", "removed", "modified"}
        revived = EditLog.from_obj(json.loads(json.dumps(obj)))
        assert serialize_manifest(apply_edit_log(revived, flowchart_manifest)) == \
            serialize_manifest(edited)


def test_empty_manifest_helper_is_valid():
    assert validate(empty_manifest()) == []
    obj = manifest_to_obj(empty_manifest())
    assert set(obj) == {"version", "meta", "shapes"}
