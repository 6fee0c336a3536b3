"""Agent pipeline: spec-to-instance exchanges, grounding, contract retries,
layout feasibility, the refiner loop, and end-to-end determinism."""

from __future__ import annotations

import json

import pytest

from conftest import make_geo
from evocanvas.agents import (
    GenerationRequest,
    Pipeline,
    PipelineError,
    RefinementFeedback,
    respace_layout,
)
from evocanvas.gateway import BackendResponse, ContractViolation, Gateway, MockBackend, ToolCall
from evocanvas.geometry import collision_report, estimate_size
from evocanvas.playbook import PlaybookBackend, sample_content
from evocanvas.prompts import parse_sections
from evocanvas.schema import (
    DiagramManifest,
    GraphEdge,
    GraphGroup,
    GraphNode,
    LayoutConfig,
    SemanticGraph,
    StyleSchema,
    assemble_manifest,
    serialize_manifest,
    validate,
)
from evocanvas.geometry import BoundingBox


def fenced(payload: dict) -> str:
    return "```json\n" + json.dumps(payload) + "\n```"


def structure_payload(nodes, edges=(), groups=(), dtype="flowchart") -> dict:
    return {
        "spec": {"selectedDiagramType": dtype, "visualRationale": "clear",
                 "primaryFlowStrategy": "linear", "groupingLogic": "none"},
        "instance": {"diagramType": dtype, "nodes": nodes, "edges": list(edges),
                     "groups": list(groups)},
    }


def node(i, label, **kw):
    return {"nodeId": f"n{i}", "label": label, "kind": "process", **kw}


def style_payload(graph_nodes, graph_edges, groups=(), bad_fill=None) -> dict:
    per_node = {}
    for i, nid in enumerate(graph_nodes):
        per_node[nid] = {"geo": "rectangle", "color": "blue",
                         "fill": bad_fill if bad_fill and i == 0 else "semi",
                         "dash": "draw", "size": "m", "font": "sans", "hierarchyRank": i}
    per_edge = {eid: {"color": "grey", "dash": "solid", "arrowheadStart": "none",
                      "arrowheadEnd": "arrow"} for eid in graph_edges}
    per_group = {gid: {"color": "grey"} for gid in groups}
    return {
        "spec": {"visualTonePrinciple": "calm", "hierarchyPrinciple": "rank",
                 "colorPrinciple": "mono", "shapePrinciple": "boxes",
                 "connectionPrinciple": "thin"},
        "instance": {"perNode": per_node, "perEdge": per_edge, "perGroup": per_group},
    }


def layout_payload(boxes: dict[str, tuple[int, int, int, int]], groups=None,
                   direction="column") -> dict:
    return {
        "spec": {"flowStrategyPrinciple": "top down", "spatialBreathingPrinciple": "airy",
                 "alignmentBalancePrinciple": "centered", "depthLayeringPrinciple": "frames low",
                 "structuralRhythmPrinciple": "even", "direction": direction},
        "instance": {
            "perNode": {k: {"x": v[0], "y": v[1], "w": v[2], "h": v[3]}
                        for k, v in boxes.items()},
            "perGroup": {k: {"x": v[0], "y": v[1], "w": v[2], "h": v[3]}
                         for k, v in (groups or {}).items()},
            "orderKeys": {},
        },
    }


def pipeline_with(script: dict) -> tuple[Pipeline, MockBackend]:
    backend = MockBackend(script)
    return Pipeline(Gateway(backend), use_raster=False), backend


class TestStructureAgent:
    def test_scripted_five_node_flowchart(self):
        nodes = [node(i + 1, f"Step {i + 1}") for i in range(5)]
        edges = [{"from": f"n{i + 1}", "to": f"n{i + 2}", "label": "", "relation": "then"}
                 for i in range(4)]
        pipeline, _ = pipeline_with({"structure": [fenced(structure_payload(nodes, edges))]})
        request = GenerationRequest(content="five steps")
        spec, graph = pipeline.run_structure_agent(request, [])
        assert spec.selected_diagram_type == "flowchart"
        assert len(graph.nodes) == 5 and len(graph.edges) == 4
        assert len(set(graph.node_ids())) == 5

    def test_surface_forms_ground_to_one_node(self):
        nodes = [node(1, "DB"), node(2, "db"),
                 {"nodeId": "n3", "label": "Database", "kind": "process", "aliases": ["DB"]}]
        pipeline, _ = pipeline_with({"structure": [fenced(structure_payload(nodes))]})
        _, graph = pipeline.run_structure_agent(
            GenerationRequest(content="the DB, also written db or Database"), [])
        assert len(graph.nodes) == 1
        assert graph.nodes[0].label == "DB"

    def test_type_override_enforced_by_contract(self):
        wrong = structure_payload([node(1, "Hub")], dtype="flowchart")
        right = structure_payload([node(1, "Hub")], dtype="mind_map")
        pipeline, backend = pipeline_with({"structure": [fenced(wrong), fenced(right)]})
        request = GenerationRequest(content="topic", diagram_type_override="mind_map")
        spec, graph = pipeline.run_structure_agent(request, [])
        assert spec.selected_diagram_type == "mind_map"
        assert graph.diagram_type == "mind_map"
        assert len(backend.requests_for("structure")) == 2


class TestStyleAgent:
    GRAPH = SemanticGraph(
        nodes=[GraphNode("n1", "Major"), GraphNode("n2", "Minor")],
        edges=[GraphEdge("e1", "n1", "n2")], groups=[], diagram_type="flowchart")

    def test_full_coverage_accepted(self):
        payload = style_payload(["n1", "n2"], ["e1"])
        pipeline, _ = pipeline_with({"style": [fenced(payload)]})
        _, style = pipeline.run_style_agent(GenerationRequest(content="x"), self.GRAPH, [])
        assert set(style.per_node) == {"n1", "n2"}
        assert set(style.per_edge) == {"e1"}

    def test_out_of_palette_fill_retried(self):
        bad = style_payload(["n1", "n2"], ["e1"], bad_fill="hatch")
        good = style_payload(["n1", "n2"], ["e1"])
        pipeline, backend = pipeline_with({"style": [fenced(bad), fenced(good)]})
        _, style = pipeline.run_style_agent(GenerationRequest(content="x"), self.GRAPH, [])
        assert style.per_node["n1"]["fill"] == "semi"
        retry = backend.requests_for("style")[1].messages[-1]["content"]
        assert "hatch" in retry

    def test_dominant_node_ranks_strictly_ordered(self):
        payload = style_payload(["n1", "n2"], ["e1"])
        payload["instance"]["perNode"]["n1"].update({"size": "xl", "hierarchyRank": 0})
        payload["instance"]["perNode"]["n2"].update({"size": "s", "hierarchyRank": 3})
        pipeline, _ = pipeline_with({"style": [fenced(payload)]})
        _, style = pipeline.run_style_agent(GenerationRequest(content="x"), self.GRAPH, [])
        ranks = [style.per_node[n]["hierarchyRank"] for n in ("n1", "n2")]
        assert ranks == sorted(ranks) and ranks[0] < ranks[1]

    def test_missing_coverage_exhausts_contract(self):
        partial = style_payload(["n1"], ["e1"])
        pipeline, _ = pipeline_with({"style": [fenced(partial), fenced(partial)]})
        with pytest.raises(ContractViolation):
            pipeline.run_style_agent(GenerationRequest(content="x"), self.GRAPH, [])


class TestLayoutAgent:
    GRAPH = SemanticGraph(
        nodes=[GraphNode(f"n{i}", f"Step {i}") for i in range(1, 5)],
        edges=[GraphEdge(f"e{i}", f"n{i}", f"n{i + 1}") for i in range(1, 4)],
        groups=[], diagram_type="timeline")

    STYLE = StyleSchema(
        per_node={f"n{i}": {"geo": "rectangle", "color": "blue", "fill": "semi",
                            "dash": "draw", "size": "m", "font": "sans",
                            "hierarchyRank": 1} for i in range(1, 5)},
        per_edge={f"e{i}": {"color": "grey", "dash": "solid", "arrowheadStart": "none",
                            "arrowheadEnd": "arrow"} for i in range(1, 4)},
        per_group={})

    def boxes(self, gap=40):
        out = {}
        x = 64
        for i in range(1, 5):
            w, h = estimate_size(f"Step {i}", "sans", "m", False)
            out[f"n{i}"] = (x, 64, w + 10, h + 10)
            x += w + 10 + gap
        return out

    def test_linear_row_monotone_and_sized(self):
        payload = layout_payload(self.boxes(), direction="row")
        pipeline, _ = pipeline_with({"layout": [fenced(payload)]})
        spec, layout = pipeline.run_layout_agent(GenerationRequest(content="x"),
                                                 self.GRAPH, self.STYLE, [])
        assert spec.direction == "row"
        xs = [layout.per_node[f"n{i}"].x for i in range(1, 5)]
        assert xs == sorted(xs) and len(set(xs)) == 4
        for i in range(1, 5):
            est_w, est_h = estimate_size(f"Step {i}", "sans", "m", False)
            box = layout.per_node[f"n{i}"]
            assert box.w >= est_w and box.h >= est_h

    def test_undersized_box_rejected_then_fixed(self):
        bad = self.boxes()
        bad["n1"] = (64, 64, 10, 10)
        pipeline, backend = pipeline_with({"layout": [
            fenced(layout_payload(bad, direction="row")),
            fenced(layout_payload(self.boxes(), direction="row")),
        ]})
        pipeline.run_layout_agent(GenerationRequest(content="x"), self.GRAPH, self.STYLE, [])
        assert len(backend.requests_for("layout")) == 2
        assert "below the measured minimum" in \
            backend.requests_for("layout")[1].messages[-1]["content"]

    def test_colliding_layout_rescued_by_respace(self):
        squashed = {k: (64, 64, v[2], v[3]) for k, v in self.boxes().items()}
        payload = layout_payload(squashed, direction="row")
        pipeline, _ = pipeline_with({"layout": [fenced(payload)]})
        _, layout = pipeline.run_layout_agent(GenerationRequest(content="x"),
                                              self.GRAPH, self.STYLE, [])
        manifest = assemble_manifest(self.GRAPH, self.STYLE, layout)
        assert collision_report(manifest) == []

    def test_sizes_injected_into_prompt(self):
        payload = layout_payload(self.boxes(), direction="row")
        pipeline, backend = pipeline_with({"layout": [fenced(payload)]})
        pipeline.run_layout_agent(GenerationRequest(content="x"), self.GRAPH, self.STYLE, [])
        sections = parse_sections(backend.requests_for("layout")[0].user_text())
        sizes = json.loads(sections["Sizes"].split("```json\n")[1].split("\n```")[0])
        assert sizes["n1"] == list(estimate_size("Step 1", "sans", "m", False))


def test_respace_layout_separates_nested_groups():
    graph = SemanticGraph(
        nodes=[GraphNode("n1", "A", group_id="g1"), GraphNode("n2", "B", group_id="g1"),
               GraphNode("n3", "C", group_id="g2"), GraphNode("n4", "D")],
        edges=[], groups=[GraphGroup("g1", "One"), GraphGroup("g2", "Two")],
        diagram_type="architecture_diagram")
    layout = LayoutConfig(
        per_node={nid: BoundingBox(64, 64, 120, 80) for nid in ("n1", "n2", "n3", "n4")},
        per_group={"g1": BoundingBox(40, 40, 200, 160), "g2": BoundingBox(40, 40, 200, 160)})
    style = StyleSchema(
        per_node={nid: {"geo": "rectangle", "color": "blue", "fill": "semi", "dash": "draw",
                        "size": "m", "font": "sans", "hierarchyRank": 1}
                  for nid in ("n1", "n2", "n3", "n4")},
        per_edge={}, per_group={"g1": {"color": "grey"}, "g2": {"color": "grey"}})
    fixed = respace_layout(graph, layout, "column")
    manifest = assemble_manifest(graph, style, fixed)
    assert collision_report(manifest) == []
    assert validate(manifest) == []


def overlap_manifest() -> DiagramManifest:
    a = make_geo("s1", "c", 64, 64, 120, 80, text="first")
    b = make_geo("s2", "m", 120, 100, 120, 80, text="second")
    c = make_geo("s3", "t", 140, 120, 120, 80, text="third")
    return DiagramManifest(version=1, shapes=[a, b, c],
                           meta={"diagramType": "flowchart", "domain": "", "title": ""})


def critique(defects, score=3) -> str:
    return fenced({"critique": "needs work" if defects else "fine", "defects": defects,
                   "scores": {"content": score, "visual": score, "cognitive": score}})


class TestRefiner:
    def test_zero_iterations_identity(self):
        pipeline, backend = pipeline_with({})
        manifest = overlap_manifest()
        out, feedbacks = pipeline.run_refiner(manifest, GenerationRequest(content="x"), 0)
        assert out is manifest and feedbacks == []
        assert backend.log == []

    def test_scripted_overlap_fix_reduces_collisions(self):
        manifest = overlap_manifest()
        before = len(collision_report(manifest))
        assert before > 0
        script = {"refiner": [
            critique([{"kind": "spatial-overlap", "targetIds": ["s2", "s3"]}]),
            BackendResponse(tool_calls=[
                ToolCall("move_relative", {"id": "s2", "dx": 300, "dy": 0}, "c1"),
                ToolCall("move_relative", {"id": "s3", "dx": 600, "dy": 0}, "c2"),
            ]),
            BackendResponse(text="resolved"),
        ]}
        pipeline, _ = pipeline_with(script)
        out, feedbacks = pipeline.run_refiner(manifest, GenerationRequest(content="x"), 1)
        assert len(collision_report(out)) < before
        assert validate(out) == []
        assert len(feedbacks) == 1
        assert feedbacks[0].defects[0]["kind"] == "spatial-overlap"

    def test_no_defect_critique_leaves_manifest_unchanged(self):
        manifest = overlap_manifest()
        script = {"refiner": [critique([], score=4), BackendResponse(text="looks good")]}
        pipeline, _ = pipeline_with(script)
        out, feedbacks = pipeline.run_refiner(manifest, GenerationRequest(content="x"), 1)
        assert serialize_manifest(out) == serialize_manifest(manifest)
        assert len(feedbacks) == 1
        assert feedbacks[0].scores == {"content": 4, "visual": 4, "cognitive": 4}

    def test_invalid_tool_mutation_rolled_back(self):
        manifest = overlap_manifest()
        script = {"refiner": [
            critique([{"kind": "stylistic-inconsistency", "targetIds": ["s1"]}]),
            BackendResponse(tool_calls=[
                ToolCall("update_shape", {"id": "s1", "field": "color", "value": "magenta"},
                         "c1")]),
            BackendResponse(text="tried"),
        ]}
        pipeline, _ = pipeline_with(script)
        out, _ = pipeline.run_refiner(manifest, GenerationRequest(content="x"), 1)
        assert validate(out) == []
        assert out.shape_map()["s1"].props["color"] != "magenta"

    def test_scores_validated_in_range(self):
        manifest = overlap_manifest()
        bad = fenced({"critique": "x", "defects": [],
                      "scores": {"content": 9, "visual": 3, "cognitive": 3}})
        script = {"refiner": [bad, critique([]), BackendResponse(text="end")]}
        pipeline, _ = pipeline_with(script)
        _, feedbacks = pipeline.run_refiner(manifest, GenerationRequest(content="x"), 1)
        assert all(1 <= v <= 5 for v in feedbacks[0].scores.values())


class TestGenerate:
    def test_playbook_end_to_end(self, playbook_pipeline):
        pipeline, _ = playbook_pipeline
        request = GenerationRequest(content=sample_content("flowchart"))
        manifest, trace = pipeline.generate(request)
        assert validate(manifest) == []
        assert collision_report(manifest) == []
        stages = [(e.stage, e.kind) for e in trace.events]
        assert ("structure", "spec") in stages and ("refine", "manifest") in stages

    def test_two_runs_identical(self):
        request = GenerationRequest(content=sample_content("mind_map"),
                                    diagram_type_override="mind_map")
        outs = []
        for _ in range(2):
            pipeline = Pipeline(Gateway(PlaybookBackend()), use_raster=False)
            manifest, trace = pipeline.generate(request)
            outs.append((serialize_manifest(manifest), trace.to_jsonl()))
        assert outs[0] == outs[1]

    def test_spec_event_precedes_instance_in_every_stage(self, playbook_pipeline):
        pipeline, _ = playbook_pipeline
        _, trace = pipeline.generate(GenerationRequest(content=sample_content("flowchart")))
        for stage in ("structure", "style", "layout"):
            kinds = [e.kind for e in trace.events if e.stage == stage]
            assert kinds.index("spec") < kinds.index("instance")

    def test_coverage_conservation(self, playbook_pipeline):
        pipeline, _ = playbook_pipeline
        request = GenerationRequest(content=sample_content("architecture_diagram"),
                                    diagram_type_override="architecture_diagram")
        manifest, trace = pipeline.generate(request)
        graph_event = next(e for e in trace.events
                           if e.stage == "structure" and e.kind == "instance")
        graph_ids = {n["nodeId"] for n in graph_event.payload["nodes"]}
        graph_ids |= {g["groupId"] for g in graph_event.payload["groups"]}
        graph_ids |= {e["edgeId"] for e in graph_event.payload["edges"]}
        assert graph_ids == {s.id for s in manifest.shapes}

    def test_stage_error_preserves_partial_trace(self):
        pipeline, _ = pipeline_with({"structure": ["not json at all", "still not json"]})
        with pytest.raises(PipelineError) as err:
            pipeline.generate(GenerationRequest(content="x"))
        assert err.value.stage == "structure"
        kinds = [(e.stage, e.kind) for e in err.value.trace.events]
        assert ("structure", "error") in kinds

    def test_seeded_memory_changes_prompts_by_exactly_the_entries(self):
        from evocanvas.memory import KnowledgeEntry, MemoryStore

        request = GenerationRequest(content=sample_content("flowchart"),
                                    diagram_type_override="flowchart")
        backend_empty = PlaybookBackend()
        Pipeline(Gateway(backend_empty), use_raster=False).generate(request)
        store = MemoryStore()
        for i in range(2):
            store.upsert(KnowledgeEntry(
                entry_id=f"k{i}", tier="guideline", agent_role="structure",
                diagram_type="flowchart", domain="universal",
                title=f"Guideline {i}", description="d", content="keep flows linear",
                when_to_use="flowchart structure", provenance=["s-a", "s-b"]))
        backend_seeded = PlaybookBackend()
        Pipeline(Gateway(backend_seeded), memory=store,
                 use_raster=False).generate(request)
        empty_prompt = parse_sections(backend_empty.requests_for("structure")[0].user_text())
        seeded_prompt = parse_sections(backend_seeded.requests_for("structure")[0].user_text())
        assert empty_prompt["Knowledge"] == "(none retrieved)"
        assert "Guideline 0" in seeded_prompt["Knowledge"]
        assert "Guideline 1" in seeded_prompt["Knowledge"]
        for section in ("Task", "Requirements", "ResponseContract"):
            assert empty_prompt[section] == seeded_prompt[section]
