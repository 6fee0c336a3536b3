"""The coordinated agent pipeline: structure -> style -> layout -> assemble
-> render/refine, each stage following the spec-then-instance pattern in a
single model exchange, grounded in retrieved design knowledge.

Stage isolation is structural: style cannot touch graph topology, layout
cannot touch style values, and the refiner goes through validated tools, so
every intermediate and final manifest re-validates.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

from . import geometry, prompts, raster
from .gateway import BackendUnavailable, ContractViolation, Gateway, ModelRequest
from .geometry import BoundingBox
from .render import render
from .schema import (
    DiagramManifest,
    LayoutConfig,
    SemanticGraph,
    StyleSchema,
    assemble_manifest,
    graph_from_obj,
    graph_to_obj,
    ground_graph,
    validate,
    validate_graph,
    validate_style_schema,
)
from .taxonomy import DIAGRAM_TYPES
from .tools import ManifestSession, build_refiner_registry

DEFECT_KINDS = ("semantic-omission", "stylistic-inconsistency", "spatial-overlap",
                "routing-violation")
SCORE_DIMENSIONS = ("content", "visual", "cognitive")

# Types whose reading direction is conventionally fixed; the rest is the
# layout agent's choice. Time-series types run horizontally.
DEFAULT_DIRECTION = {
    "flowchart": "column", "sequence_diagram": "column", "swimlane_diagram": "column",
    "timeline": "row", "gantt_chart": "row",
}


class EmptyGraph(RuntimeError):
    pass


class InfeasibleLayout(RuntimeError):
    def __init__(self, collisions):
        self.collisions = collisions
        super().__init__(f"{len(collisions)} collision(s) remain after re-spacing")


class PipelineError(RuntimeError):
    def __init__(self, stage: str, cause: Exception, trace: "PipelineTrace"):
        self.stage = stage
        self.cause = cause
        self.trace = trace
        super().__init__(f"pipeline failed at {stage}: {cause}")


class RefinerError(RuntimeError):
    """Gateway failure mid-refinement; carries the best manifest so far."""

    def __init__(self, cause: Exception, manifest: DiagramManifest, feedbacks: list):
        self.cause = cause
        self.manifest = manifest
        self.feedbacks = feedbacks
        super().__init__(f"refiner aborted: {cause}")


@dataclass
class GenerationRequest:
    content: str
    requirements: str | None = None
    diagram_type_override: str | None = None
    refine_iterations: int = 1
    domain: str | None = None

    def __post_init__(self):
        if not isinstance(self.content, str) or not self.content.strip():
            raise ValueError("content must be a nonempty string")
        if self.requirements is not None and not isinstance(self.requirements, str):
            raise ValueError("requirements must be a string when present")
        if not isinstance(self.refine_iterations, int) or self.refine_iterations < 0:
            raise ValueError("refineIterations must be a non-negative integer")

    def to_obj(self) -> dict:
        options: dict = {"refineIterations": self.refine_iterations}
        if self.diagram_type_override:
            options["diagramTypeOverride"] = self.diagram_type_override
        if self.domain:
            options["domain"] = self.domain
        return {"content": self.content, "requirements": self.requirements, "options": options}

    @classmethod
    def from_obj(cls, obj: dict) -> "GenerationRequest":
        options = obj.get("options") or {}
        return cls(
            content=obj.get("content", ""),
            requirements=obj.get("requirements"),
            diagram_type_override=options.get("diagramTypeOverride"),
            refine_iterations=options.get("refineIterations", 1),
            domain=options.get("domain"),
        )

    def run_id(self) -> str:
        blob = json.dumps(self.to_obj(), sort_keys=True, ensure_ascii=False)
        return hashlib.sha1(blob.encode("utf-8")).hexdigest()[:12]


@dataclass
class StructureSpec:
    selected_diagram_type: str
    visual_rationale: str
    primary_flow_strategy: str
    grouping_logic: str

    def to_obj(self) -> dict:
        return {"selectedDiagramType": self.selected_diagram_type,
                "visualRationale": self.visual_rationale,
                "primaryFlowStrategy": self.primary_flow_strategy,
                "groupingLogic": self.grouping_logic}


@dataclass
class StyleSpec:
    visual_tone_principle: str
    hierarchy_principle: str
    color_principle: str
    shape_principle: str
    connection_principle: str

    def to_obj(self) -> dict:
        return {"visualTonePrinciple": self.visual_tone_principle,
                "hierarchyPrinciple": self.hierarchy_principle,
                "colorPrinciple": self.color_principle,
                "shapePrinciple": self.shape_principle,
                "connectionPrinciple": self.connection_principle}


@dataclass
class LayoutSpec:
    flow_strategy_principle: str
    spatial_breathing_principle: str
    alignment_balance_principle: str
    depth_layering_principle: str
    structural_rhythm_principle: str
    direction: str

    def to_obj(self) -> dict:
        return {"flowStrategyPrinciple": self.flow_strategy_principle,
                "spatialBreathingPrinciple": self.spatial_breathing_principle,
                "alignmentBalancePrinciple": self.alignment_balance_principle,
                "depthLayeringPrinciple": self.depth_layering_principle,
                "structuralRhythmPrinciple": self.structural_rhythm_principle,
                "direction": self.direction}


@dataclass
class RefinementFeedback:
    critique: str
    defects: list[dict]
    scores: dict[str, int]

    def to_obj(self) -> dict:
        return {"critique": self.critique, "defects": self.defects, "scores": self.scores}


@dataclass
class TraceEvent:
    ts: int
    run_id: str
    stage: str
    kind: str
    payload: dict

    def to_obj(self) -> dict:
        return {"ts": self.ts, "runId": self.run_id, "stage": self.stage,
                "kind": self.kind, "payload": self.payload}


@dataclass
class PipelineTrace:
    run_id: str
    events: list[TraceEvent] = field(default_factory=list)

    def append(self, stage: str, kind: str, payload: dict) -> None:
        self.events.append(TraceEvent(ts=len(self.events), run_id=self.run_id,
                                      stage=stage, kind=kind, payload=payload))

    def to_jsonl(self) -> str:
        return "".join(json.dumps(e.to_obj(), sort_keys=True, ensure_ascii=False) + "\n"
                       for e in self.events)


# ---------------------------------------------------------------------------
# Contract validators (run inside the gateway's retry loop)
# ---------------------------------------------------------------------------

def _spec_fields(payload: dict, names: tuple[str, ...]) -> list[str]:
    problems = []
    spec = payload.get("spec")
    if not isinstance(spec, dict):
        return ["response must carry a top-level 'spec' object"]
    for name in names:
        if not isinstance(spec.get(name), str) or not spec.get(name).strip():
            problems.append(f"spec.{name} must be a nonempty string")
    return problems


def structure_validator(override: str | None):
    def check(payload: dict) -> list[str]:
        problems = _spec_fields(payload, ("selectedDiagramType", "visualRationale",
                                          "primaryFlowStrategy", "groupingLogic"))
        spec = payload.get("spec") or {}
        selected = spec.get("selectedDiagramType")
        if selected not in DIAGRAM_TYPES:
            problems.append(f"spec.selectedDiagramType {selected!r} is not a supported type")
        if override and selected != override:
            problems.append(f"spec.selectedDiagramType must honor the requested {override!r}")
        instance = payload.get("instance")
        if not isinstance(instance, dict):
            problems.append("response must carry a top-level 'instance' object")
            return problems
        graph = ground_graph(graph_from_obj(instance))
        if not graph.nodes:
            problems.append("instance must contain at least one node")
        problems.extend(validate_graph(graph))
        if selected in DIAGRAM_TYPES and graph.diagram_type != selected:
            problems.append("instance.diagramType must match spec.selectedDiagramType")
        return problems

    return check


def style_validator(graph: SemanticGraph):
    def check(payload: dict) -> list[str]:
        problems = _spec_fields(payload, ("visualTonePrinciple", "hierarchyPrinciple",
                                          "colorPrinciple", "shapePrinciple",
                                          "connectionPrinciple"))
        instance = payload.get("instance")
        if not isinstance(instance, dict):
            problems.append("response must carry a top-level 'instance' object")
            return problems
        style = StyleSchema(per_node=dict(instance.get("perNode") or {}),
                            per_edge=dict(instance.get("perEdge") or {}),
                            per_group=dict(instance.get("perGroup") or {}))
        problems.extend(validate_style_schema(style, graph))
        return problems

    return check


def _box_from_obj(obj: object) -> BoundingBox | None:
    if not isinstance(obj, dict):
        return None
    values = []
    for key in ("x", "y", "w", "h"):
        v = obj.get(key)
        if isinstance(v, bool) or not isinstance(v, int):
            return None
        values.append(v)
    return BoundingBox(*values)


def layout_validator(graph: SemanticGraph, min_sizes: dict[str, tuple[int, int]]):
    def check(payload: dict) -> list[str]:
        problems = _spec_fields(payload, ("flowStrategyPrinciple", "spatialBreathingPrinciple",
                                          "alignmentBalancePrinciple", "depthLayeringPrinciple",
                                          "structuralRhythmPrinciple"))
        spec = payload.get("spec") or {}
        if spec.get("direction") not in ("row", "column"):
            problems.append("spec.direction must be 'row' or 'column'")
        instance = payload.get("instance")
        if not isinstance(instance, dict):
            problems.append("response must carry a top-level 'instance' object")
            return problems
        per_node = instance.get("perNode") or {}
        per_group = instance.get("perGroup") or {}
        boxes: dict[str, BoundingBox] = {}
        for nid in graph.node_ids():
            box = _box_from_obj(per_node.get(nid))
            if box is None:
                problems.append(f"perNode[{nid!r}] must give integer x/y/w/h")
                continue
            boxes[nid] = box
            if box.x < 0 or box.y < 0 or box.w <= 0 or box.h <= 0:
                problems.append(f"perNode[{nid!r}] box must sit at non-negative coordinates "
                                "with positive size")
            min_w, min_h = min_sizes[nid]
            if box.w < min_w or box.h < min_h:
                problems.append(f"perNode[{nid!r}] box {box.w}x{box.h} is below the measured "
                                f"minimum {min_w}x{min_h}")
        for gid in graph.group_ids():
            box = _box_from_obj(per_group.get(gid))
            if box is None:
                problems.append(f"perGroup[{gid!r}] must give integer x/y/w/h")
                continue
            boxes[gid] = box
        for node in graph.nodes:
            if node.group_id and node.node_id in boxes and node.group_id in boxes:
                inner, outer = boxes[node.node_id], boxes[node.group_id]
                if not (outer.x <= inner.x and outer.y <= inner.y
                        and inner.right <= outer.right and inner.bottom <= outer.bottom):
                    problems.append(f"group {node.group_id!r} does not contain node "
                                    f"{node.node_id!r}")
        return problems

    return check


def critique_validator(payload: dict) -> list[str]:
    problems = []
    if not isinstance(payload.get("critique"), str):
        problems.append("critique must be a string")
    defects = payload.get("defects")
    if not isinstance(defects, list):
        problems.append("defects must be a list")
    else:
        for d in defects:
            if not isinstance(d, dict) or d.get("kind") not in DEFECT_KINDS:
                problems.append(f"defect kind must be one of {', '.join(DEFECT_KINDS)}")
            elif not isinstance(d.get("targetIds"), list):
                problems.append("defect targetIds must be a list of shape ids")
    scores = payload.get("scores")
    if not isinstance(scores, dict):
        problems.append("scores must be an object")
    else:
        for dim in SCORE_DIMENSIONS:
            v = scores.get(dim)
            if not isinstance(v, int) or isinstance(v, bool) or not 1 <= v <= 5:
                problems.append(f"scores.{dim} must be an integer in [1, 5]")
    return problems


# ---------------------------------------------------------------------------
# Layout rescue
# ---------------------------------------------------------------------------

def respace_layout(graph: SemanticGraph, layout: LayoutConfig, direction: str,
                   gap: int = 32, padding: int = geometry.PADDING) -> LayoutConfig:
    """Deterministic re-spacing: bottom-up, space out each container's
    members along the flow axis and refit group bounds, moving subtrees
    rigidly. Produces a collision-free arrangement by construction."""
    boxes: dict[str, BoundingBox] = {**layout.per_node, **layout.per_group}
    members: dict[str | None, list[str]] = {}
    for node in graph.nodes:
        members.setdefault(node.group_id, []).append(node.node_id)
    for group in graph.groups:
        members.setdefault(group.parent_group_id, []).append(group.group_id)

    def subtree(root: str) -> list[str]:
        out = [root]
        stack = [root]
        while stack:
            for child in members.get(stack.pop(), []):
                out.append(child)
                stack.append(child)
        return out

    axis = "x" if direction == "row" else "y"

    def coord(box: BoundingBox) -> int:
        return box.x if axis == "x" else box.y

    def extent(box: BoundingBox) -> int:
        return box.w if axis == "x" else box.h

    def shift(ids: list[str], delta: int) -> None:
        for sid in ids:
            b = boxes[sid]
            boxes[sid] = BoundingBox(b.x + (delta if axis == "x" else 0),
                                     b.y + (delta if axis == "y" else 0), b.w, b.h)

    def arrange(ids: list[str]) -> None:
        ordered = sorted(ids, key=lambda i: (coord(boxes[i]), i))
        cursor = coord(boxes[ordered[0]])
        for sid in ordered:
            delta = cursor - coord(boxes[sid])
            if delta:
                shift(subtree(sid), delta)
            cursor = coord(boxes[sid]) + extent(boxes[sid]) + gap

    depth: dict[str, int] = {}
    parent = {g.group_id: g.parent_group_id for g in graph.groups}
    for gid in parent:
        d, cur = 0, parent[gid]
        while cur is not None:
            d += 1
            cur = parent.get(cur)
        depth[gid] = d
    for gid in sorted(parent, key=lambda g: (-depth[g], g)):
        inside = members.get(gid, [])
        if not inside:
            continue
        arrange(inside)
        union = geometry.union_bounds([boxes[i] for i in inside]).inflate(padding)
        boxes[gid] = union
    top = members.get(None, [])
    if top:
        arrange(top)
    min_x = min((b.x for b in boxes.values()), default=0)
    min_y = min((b.y for b in boxes.values()), default=0)
    if min_x < 0 or min_y < 0:
        dx, dy = max(0, -min_x), max(0, -min_y)
        boxes = {k: BoundingBox(b.x + dx, b.y + dy, b.w, b.h) for k, b in boxes.items()}
    return LayoutConfig(
        per_node={nid: boxes[nid] for nid in graph.node_ids()},
        per_group={gid: boxes[gid] for gid in graph.group_ids()},
        order_keys=dict(layout.order_keys),
    )


# ---------------------------------------------------------------------------
# Pipeline
# ---------------------------------------------------------------------------

class Pipeline:
    """One generation run is sequential; independent instances may run
    concurrently since all state is per-run."""

    def __init__(self, gateway: Gateway, memory=None, retrieval_k: int = 5,
                 tool_turns: int = 8, temperature: float = 0.7,
                 use_raster: bool | None = None):
        self.gateway = gateway
        self.memory = memory
        self.retrieval_k = retrieval_k
        self.tool_turns = tool_turns
        self.temperature = temperature
        self.use_raster = raster.raster_available() if use_raster is None else use_raster

    # -- knowledge --

    def _knowledge(self, role: str, request: GenerationRequest, diagram_type: str | None):
        if self.memory is None:
            return []
        return self.memory.retrieve_flat(
            agent_role=role,
            diagram_type=diagram_type or "universal",
            domain=request.domain or "universal",
            query_text=f"{request.content}\n{request.requirements or ''}",
            k=self.retrieval_k,
        )

    def _request(self, role: str, system: str, user: str, contract: str | None = None,
                 images: list[bytes] | None = None) -> ModelRequest:
        return ModelRequest(
            agent_role=role,
            messages=[{"role": "system", "content": system},
                      {"role": "user", "content": user}],
            images=images or [],
            contract=contract,
            temperature=self.temperature,
        )

    # -- stages --

    def run_structure_agent(self, request: GenerationRequest, knowledge: list,
                            trace: PipelineTrace | None = None):
        payload = self.gateway.complete_structured(
            self._request("structure", prompts.STRUCTURE_SYSTEM,
                          prompts.structure_user(request, knowledge), contract="structure.v1"),
            validator=structure_validator(request.diagram_type_override),
        )
        spec_obj = payload["spec"]
        spec = StructureSpec(
            selected_diagram_type=spec_obj["selectedDiagramType"],
            visual_rationale=spec_obj["visualRationale"],
            primary_flow_strategy=spec_obj["primaryFlowStrategy"],
            grouping_logic=spec_obj["groupingLogic"],
        )
        graph = ground_graph(graph_from_obj(payload["instance"]))
        if not graph.nodes:
            raise EmptyGraph("structure agent produced an empty graph")
        if trace:
            trace.append("structure", "spec", spec.to_obj())
            trace.append("structure", "instance", graph_to_obj(graph))
        return spec, graph

    def run_style_agent(self, request: GenerationRequest, graph: SemanticGraph,
                        knowledge: list, trace: PipelineTrace | None = None):
        payload = self.gateway.complete_structured(
            self._request("style", prompts.STYLE_SYSTEM,
                          prompts.style_user(request, graph_to_obj(graph), knowledge),
                          contract="style.v1"),
            validator=style_validator(graph),
        )
        spec_obj = payload["spec"]
        spec = StyleSpec(
            visual_tone_principle=spec_obj["visualTonePrinciple"],
            hierarchy_principle=spec_obj["hierarchyPrinciple"],
            color_principle=spec_obj["colorPrinciple"],
            shape_principle=spec_obj["shapePrinciple"],
            connection_principle=spec_obj["connectionPrinciple"],
        )
        instance = payload["instance"]
        style = StyleSchema(per_node=instance["perNode"], per_edge=instance["perEdge"],
                            per_group=instance.get("perGroup") or {})
        if trace:
            trace.append("style", "spec", spec.to_obj())
            trace.append("style", "instance", instance)
        return spec, style

    def measured_sizes(self, graph: SemanticGraph, style: StyleSchema) -> dict[str, tuple[int, int]]:
        sizes: dict[str, tuple[int, int]] = {}
        for node in graph.nodes:
            entry = style.per_node[node.node_id]
            sizes[node.node_id] = geometry.estimate_size(
                node.label, entry["font"], entry["size"], bool(entry.get("icon")))
        return sizes

    def run_layout_agent(self, request: GenerationRequest, graph: SemanticGraph,
                         style: StyleSchema, knowledge: list,
                         trace: PipelineTrace | None = None):
        sizes = self.measured_sizes(graph, style)
        size_obj = {nid: [w, h] for nid, (w, h) in sorted(sizes.items())}
        style_obj = {"perNode": style.per_node, "perEdge": style.per_edge,
                     "perGroup": style.per_group}
        payload = self.gateway.complete_structured(
            self._request("layout", prompts.LAYOUT_SYSTEM,
                          prompts.layout_user(request, graph_to_obj(graph), style_obj,
                                              size_obj, knowledge),
                          contract="layout.v1"),
            validator=layout_validator(graph, sizes),
        )
        spec_obj = payload["spec"]
        spec = LayoutSpec(
            flow_strategy_principle=spec_obj["flowStrategyPrinciple"],
            spatial_breathing_principle=spec_obj["spatialBreathingPrinciple"],
            alignment_balance_principle=spec_obj["alignmentBalancePrinciple"],
            depth_layering_principle=spec_obj["depthLayeringPrinciple"],
            structural_rhythm_principle=spec_obj["structuralRhythmPrinciple"],
            direction=spec_obj["direction"],
        )
        instance = payload["instance"]
        layout = LayoutConfig(
            per_node={nid: _box_from_obj(instance["perNode"][nid]) for nid in graph.node_ids()},
            per_group={gid: _box_from_obj(instance["perGroup"][gid]) for gid in graph.group_ids()},
            order_keys=dict(instance.get("orderKeys") or {}),
        )
        collisions = self._collisions(graph, style, layout, request)
        rescued = False
        if collisions:
            layout = respace_layout(graph, layout, spec.direction)
            rescued = True
            collisions = self._collisions(graph, style, layout, request)
            if collisions:
                raise InfeasibleLayout(collisions)
        if trace:
            trace.append("layout", "spec", spec.to_obj())
            trace.append("layout", "instance", {
                "perNode": {nid: [b.x, b.y, b.w, b.h]
                            for nid, b in sorted(layout.per_node.items())},
                "perGroup": {gid: [b.x, b.y, b.w, b.h]
                             for gid, b in sorted(layout.per_group.items())},
                "orderKeys": dict(sorted(layout.order_keys.items())),
                "rescued": rescued,
            })
        return spec, layout

    def _collisions(self, graph, style, layout, request):
        provisional = assemble_manifest(graph, style, layout,
                                        domain=request.domain or "",
                                        title=_title_of(request))
        return geometry.collision_report(provisional)

    def run_refiner(self, manifest: DiagramManifest, request: GenerationRequest,
                    iterations: int, knowledge: list | None = None,
                    trace: PipelineTrace | None = None):
        """Perception-action refinement. Iteration 0 is the identity."""
        if iterations == 0:
            return manifest, []
        knowledge = knowledge or []
        feedbacks: list[RefinementFeedback] = []
        current = manifest
        for i in range(iterations):
            try:
                artifact = render(current)
                images: list[bytes] = []
                svg_text: str | None = None
                if self.use_raster:
                    images = [raster.render_to_image(current, 1.0)]
                else:
                    svg_text = artifact.svg
                from .evaluation import structural_selfcheck
                from .schema import manifest_to_obj

                selfcheck = structural_selfcheck(current).to_obj()
                critique_payload = self.gateway.complete_structured(
                    self._request("refiner", prompts.REFINER_SYSTEM,
                                  prompts.critique_user(request, manifest_to_obj(current),
                                                        selfcheck, svg_text, knowledge),
                                  contract="critique.v1", images=images),
                    validator=critique_validator,
                )
                feedback = RefinementFeedback(
                    critique=critique_payload["critique"],
                    defects=critique_payload["defects"],
                    scores=critique_payload["scores"],
                )
                feedbacks.append(feedback)
                if trace:
                    trace.append("refine", "feedback", feedback.to_obj())
                session = ManifestSession(current)
                registry = build_refiner_registry(session)
                result = self.gateway.run_tool_loop(
                    self._request("refiner", prompts.REFINER_SYSTEM,
                                  prompts.tool_loop_user(critique_payload,
                                                         manifest_to_obj(current),
                                                         registry.names())),
                    registry, max_turns=self.tool_turns,
                )
                if trace:
                    for executed in result.calls:
                        trace.append("refine", "tool-call", {
                            "tool": executed.call.tool_name,
                            "arguments": executed.call.arguments,
                            "ok": executed.ok,
                            "result": executed.result,
                        })
                    trace.append("refine", "iteration", {
                        "iteration": i + 1, "truncated": result.truncated,
                        "message": result.final_message,
                    })
                current = session.manifest
                assert not validate(current)
            except (ContractViolation, BackendUnavailable) as exc:
                raise RefinerError(exc, current, feedbacks) from exc
        return current, feedbacks

    def generate(self, request: GenerationRequest, on_stage=None):
        """Full run: retrieve knowledge per role, structure -> style ->
        layout -> assemble -> refine, tracing every spec, instance, tool
        call, and feedback."""
        trace = PipelineTrace(run_id=request.run_id())

        def stage(name: str):
            if on_stage:
                on_stage(name)

        def fail(name: str, exc: Exception):
            trace.append(name, "error", {"type": type(exc).__name__, "message": str(exc)})
            raise PipelineError(name, exc, trace) from exc

        stage("structuring")
        k_structure = self._knowledge("structure", request, request.diagram_type_override)
        trace.append("retrieve", "knowledge",
                     {"role": "structure", "entryIds": [e.entry_id for e in k_structure]})
        try:
            spec, graph = self.run_structure_agent(request, k_structure, trace)
        except Exception as exc:
            fail("structure", exc)

        stage("styling")
        k_style = self._knowledge("style", request, graph.diagram_type)
        trace.append("retrieve", "knowledge",
                     {"role": "style", "entryIds": [e.entry_id for e in k_style]})
        try:
            _, style = self.run_style_agent(request, graph, k_style, trace)
        except Exception as exc:
            fail("style", exc)

        stage("laying-out")
        k_layout = self._knowledge("layout", request, graph.diagram_type)
        trace.append("retrieve", "knowledge",
                     {"role": "layout", "entryIds": [e.entry_id for e in k_layout]})
        try:
            _, layout = self.run_layout_agent(request, graph, style, k_layout, trace)
        except Exception as exc:
            fail("layout", exc)

        try:
            manifest = assemble_manifest(graph, style, layout,
                                         domain=request.domain or "",
                                         title=_title_of(request))
        except Exception as exc:
            fail("assemble", exc)
        from .schema import manifest_to_obj

        trace.append("assemble", "manifest", manifest_to_obj(manifest))

        stage("refining")
        k_refiner = self._knowledge("refiner", request, graph.diagram_type)
        trace.append("retrieve", "knowledge",
                     {"role": "refiner", "entryIds": [e.entry_id for e in k_refiner]})
        try:
            manifest, feedbacks = self.run_refiner(manifest, request,
                                                   request.refine_iterations,
                                                   k_refiner, trace)
        except RefinerError as exc:
            fail("refine", exc)
        trace.append("refine", "manifest", manifest_to_obj(manifest))
        return manifest, trace


def _title_of(request: GenerationRequest) -> str:
    first = request.content.strip().splitlines()[0].strip()
    return first[:80]
