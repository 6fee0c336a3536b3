"""Deterministic playbook backend: a scripted stand-in model.

Answers every agent role by parsing the structured sections of the prompt
and synthesizing a valid response with fixed rules, so the whole pipeline
(generation, refinement, evolution, judging) runs bit-reproducibly with no
model in the loop. Content is read through a small notation:

    A -> B: label        edge between nodes A and B (auto-creates them)
    group Name: A, B     a labeled container holding the listed nodes
    - Item               one node
    plain sentences      split into nodes, chained for flow-like types

Anything fancier comes from a real backend; this one exists so tests, demos,
and the CLI work hermetically.
"""

from __future__ import annotations

import json
import re

from . import prompts
from .gateway import BackendResponse, ModelRequest
from .geometry import BoundingBox, union_bounds
from .taxonomy import DIAGRAM_TYPES

NODE_COLORS = ("blue", "green", "orange", "violet", "light-blue", "light-green",
               "yellow", "red")
GROUP_COLORS = ("grey", "light-blue", "light-green", "yellow")

HUB_TYPES = {"mind_map", "concept_map", "org_chart", "tree_diagram", "fishbone_diagram"}
GRID_TYPES = {"swot_analysis", "matrix_chart", "venn_diagram", "hybrid_diagram"}
ROW_TYPES = {"timeline", "gantt_chart", "funnel_chart"}

GROUP_RE = re.compile(r"^group\s+([^:]+):\s*(.+)$", re.IGNORECASE)

GAP = 48
GROUP_PAD = 24
ORIGIN = 64


def parse_content(content: str) -> tuple[list[str], list[tuple[str, str, str]], dict[str, list[str]]]:
    """Returns (node labels in order, edges as (src,dst,label), groups as
    label -> member labels)."""
    nodes: list[str] = []
    edges: list[tuple[str, str, str]] = []
    groups: dict[str, list[str]] = {}
    seen: set[str] = set()

    def add(label: str) -> str:
        label = " ".join(label.split())[:60]
        key = label.casefold()
        if label and key not in seen:
            seen.add(key)
            nodes.append(label)
        return label

    plain: list[str] = []
    for raw in content.splitlines():
        line = raw.strip()
        if not line:
            continue
        group_match = GROUP_RE.match(line)
        if group_match:
            members = [add(m.strip()) for m in group_match.group(2).split(",") if m.strip()]
            groups[" ".join(group_match.group(1).split())] = members
            continue
        if "->" in line:
            # "A -> B: label -> C" chains nodes; a colon after a target names
            # the edge into it.
            names: list[str] = []
            labels: list[str] = []
            for part in (p.strip() for p in line.split("->")):
                name, _, label = part.partition(":")
                names.append(name.strip())
                labels.append(label.strip())
            for i in range(len(names) - 1):
                edges.append((add(names[i]), add(names[i + 1]), labels[i + 1]))
            continue
        if line.startswith(("-", "*")):
            add(line.lstrip("-* "))
            continue
        plain.append(line)
    if not nodes:
        sentences = [s.strip() for s in re.split(r"[.!?;]+", " ".join(plain)) if s.strip()]
        for sentence in sentences[:8]:
            add(sentence)
    if not nodes:
        add(content.strip()[:40] or "Overview")
    return nodes, edges, groups


def _pick_type(sections: dict[str, str]) -> str:
    override = sections.get("TypeOverride")
    if override in DIAGRAM_TYPES:
        return override
    hint = (sections.get("Requirements", "") + " " + sections.get("Task", "")).casefold()
    for dtype in DIAGRAM_TYPES:
        if dtype.replace("_", " ") in hint:
            return dtype
    return "flowchart"


def _graph_payload(sections: dict[str, str]) -> dict:
    dtype = _pick_type(sections)
    labels, raw_edges, raw_groups = parse_content(sections.get("Task", ""))
    ids = {label.casefold(): f"n{i + 1}" for i, label in enumerate(labels)}
    chained = not raw_edges and dtype not in GRID_TYPES and len(labels) > 1
    if chained:
        if dtype in HUB_TYPES:
            raw_edges = [(labels[0], other, "") for other in labels[1:]]
        else:
            raw_edges = [(labels[i], labels[i + 1], "") for i in range(len(labels) - 1)]
    group_of: dict[str, str] = {}
    groups = []
    for gi, (glabel, members) in enumerate(raw_groups.items()):
        gid = f"g{gi + 1}"
        groups.append({"groupId": gid, "label": glabel, "parentGroupId": None})
        for member in members:
            group_of[ids[member.casefold()]] = gid
    nodes = []
    for i, label in enumerate(labels):
        if label.endswith("?"):
            kind = "decision"
        elif i == 0 and dtype in HUB_TYPES:
            kind = "entity"
        else:
            kind = "process" if dtype == "flowchart" else "entity"
        nid = ids[label.casefold()]
        nodes.append({"nodeId": nid, "label": label, "kind": kind,
                      "groupId": group_of.get(nid), "aliases": []})
    edges = [{"from": ids[s.casefold()], "to": ids[d.casefold()], "label": lbl,
              "relation": "flows-to" if chained else "related"}
             for s, d, lbl in raw_edges]
    return {"diagramType": dtype, "nodes": nodes, "edges": edges, "groups": groups}


def _structure_response(sections: dict[str, str]) -> str:
    instance = _graph_payload(sections)
    dtype = instance["diagramType"]
    payload = {
        "spec": {
            "selectedDiagramType": dtype,
            "visualRationale": f"A {dtype.replace('_', ' ')} keeps the extracted entities "
                               "legible and mirrors the source structure.",
            "primaryFlowStrategy": "Follow the order entities appear in the source, "
                                   "linking salient relations only.",
            "groupingLogic": "Containers group entities the source lists together.",
        },
        "instance": instance,
    }
    return "```json\n" + json.dumps(payload, sort_keys=True) + "\n```"


def _style_response(sections: dict[str, str]) -> str:
    graph = prompts.parse_json_section("## Graph\n" + sections["Graph"], "Graph")
    dtype = graph["diagramType"]
    per_node = {}
    group_index = {g["groupId"]: i for i, g in enumerate(graph["groups"])}
    for i, node in enumerate(graph["nodes"]):
        hub = i == 0 and dtype in HUB_TYPES
        if node["kind"] == "decision":
            geo = "diamond"
        elif dtype in HUB_TYPES and not hub:
            geo = "ellipse"
        elif dtype == "venn_diagram":
            geo = "ellipse"
        else:
            geo = "rectangle"
        color_i = group_index.get(node.get("groupId"), i) % len(NODE_COLORS)
        per_node[node["nodeId"]] = {
            "geo": geo,
            "color": "violet" if hub else NODE_COLORS[color_i],
            "fill": "semi",
            "dash": "draw",
            "size": "l" if hub else "m",
            "font": "sans",
            "hierarchyRank": 0 if hub else 1,
        }
    per_edge = {f"e{i + 1}": {"color": "grey", "dash": "solid",
                              "arrowheadStart": "none", "arrowheadEnd": "arrow"}
                for i in range(len(graph["edges"]))}
    per_group = {g["groupId"]: {"color": GROUP_COLORS[i % len(GROUP_COLORS)]}
                 for i, g in enumerate(graph["groups"])}
    payload = {
        "spec": {
            "visualTonePrinciple": "Soft sketch strokes with a restrained palette.",
            "hierarchyPrinciple": "The anchor entity carries the largest size and the "
                                  "accent color; peers stay muted.",
            "colorPrinciple": "One hue per container so membership reads at a glance.",
            "shapePrinciple": "Rectangles for steps, diamonds for decisions, ellipses "
                              "for concepts.",
            "connectionPrinciple": "Thin grey connectors with end arrowheads only.",
        },
        "instance": {"perNode": per_node, "perEdge": per_edge, "perGroup": per_group},
    }
    return "```json\n" + json.dumps(payload, sort_keys=True) + "\n```"


def _layout_response(sections: dict[str, str]) -> str:
    graph = prompts.parse_json_section("## Graph\n" + sections["Graph"], "Graph")
    sizes = prompts.parse_json_section("## Sizes\n" + sections["Sizes"], "Sizes")
    dtype = graph["diagramType"]
    direction = "row" if dtype in ROW_TYPES else "column"
    boxes: dict[str, BoundingBox] = {}
    members: dict[str, list[str]] = {}
    loose: list[str] = []
    for node in graph["nodes"]:
        nid = node["nodeId"]
        if node.get("groupId"):
            members.setdefault(node["groupId"], []).append(nid)
        else:
            loose.append(nid)

    def size_of(nid: str) -> tuple[int, int]:
        w, h = sizes[nid]
        return int(w), int(h)

    # Members stack inside each group along the flow axis.
    group_units: dict[str, list[str]] = {}
    for gid in [g["groupId"] for g in graph["groups"]]:
        cursor = GROUP_PAD
        inner = members.get(gid, [])
        for nid in inner:
            w, h = size_of(nid)
            if direction == "column":
                boxes[nid] = BoundingBox(GROUP_PAD, cursor, w, h)
                cursor += h + GAP
            else:
                boxes[nid] = BoundingBox(cursor, GROUP_PAD, w, h)
                cursor += w + GAP
        group_units[gid] = inner

    def unit_box(uid: str) -> BoundingBox:
        if uid in group_units:
            inner = [boxes[n] for n in group_units[uid]]
            union = union_bounds(inner) or BoundingBox(0, 0, 120, 80)
            return union.inflate(GROUP_PAD)
        w, h = size_of(uid)
        return BoundingBox(0, 0, w, h)

    units = [g["groupId"] for g in graph["groups"] if g.get("parentGroupId") is None] + loose
    unit_boxes = {uid: unit_box(uid) for uid in units}

    def place_unit(uid: str, x: int, y: int) -> None:
        box = unit_boxes[uid]
        if uid in group_units:
            dx, dy = x - box.x, y - box.y
            for nid in group_units[uid]:
                b = boxes[nid]
                boxes[nid] = BoundingBox(b.x + dx, b.y + dy, b.w, b.h)
            boxes[uid] = BoundingBox(x, y, box.w, box.h)
        else:
            boxes[uid] = BoundingBox(x, y, box.w, box.h)

    grid = dtype in GRID_TYPES and not graph["groups"]
    hub = dtype in HUB_TYPES and not graph["groups"] and len(units) > 2
    if grid:
        cols = 2 if len(units) <= 4 else 3
        cell_w = max(unit_boxes[u].w for u in units) + GAP
        cell_h = max(unit_boxes[u].h for u in units) + GAP
        for i, uid in enumerate(units):
            place_unit(uid, ORIGIN + (i % cols) * cell_w, ORIGIN + (i // cols) * cell_h)
    elif hub:
        spokes = units[1:]
        cursor = ORIGIN
        spoke_x = ORIGIN + unit_boxes[units[0]].w + 3 * GAP
        for uid in spokes:
            place_unit(uid, spoke_x, cursor)
            cursor += unit_boxes[uid].h + GAP
        stack_h = cursor - GAP - ORIGIN
        hub_y = max(ORIGIN, ORIGIN + (stack_h - unit_boxes[units[0]].h) // 2)
        place_unit(units[0], ORIGIN, hub_y)
    else:
        cross = max((unit_boxes[u].h if direction == "row" else unit_boxes[u].w)
                    for u in units)
        cursor = ORIGIN
        for uid in units:
            box = unit_boxes[uid]
            if direction == "column":
                place_unit(uid, ORIGIN + (cross - box.w) // 2, cursor)
                cursor += box.h + GAP
            else:
                place_unit(uid, cursor, ORIGIN + (cross - box.h) // 2)
                cursor += box.w + GAP

    payload = {
        "spec": {
            "flowStrategyPrinciple": f"Primary flow runs along the {direction} axis.",
            "spatialBreathingPrinciple": f"Keep at least {GAP} units between sibling "
                                         "boxes and pad containers.",
            "alignmentBalancePrinciple": "Siblings share a centerline along the cross axis.",
            "depthLayeringPrinciple": "Containers sit below their members in stack order.",
            "structuralRhythmPrinciple": "Uniform gaps give the sequence a steady cadence.",
            "direction": direction,
        },
        "instance": {
            "perNode": {n["nodeId"]: {"x": boxes[n["nodeId"]].x, "y": boxes[n["nodeId"]].y,
                                      "w": boxes[n["nodeId"]].w, "h": boxes[n["nodeId"]].h}
                        for n in graph["nodes"]},
            "perGroup": {g["groupId"]: {"x": boxes[g["groupId"]].x, "y": boxes[g["groupId"]].y,
                                        "w": boxes[g["groupId"]].w, "h": boxes[g["groupId"]].h}
                         for g in graph["groups"]},
            "orderKeys": {},
        },
    }
    return "```json\n" + json.dumps(payload, sort_keys=True) + "\n```"


def _critique_response(sections: dict[str, str], score: int) -> str:
    selfcheck = prompts.parse_json_section("## SelfCheck\n" + sections.get("SelfCheck", ""),
                                           "SelfCheck") or {}
    defects = []
    if selfcheck.get("overlapCount", 0) > 0:
        defects.append({"kind": "spatial-overlap", "targetIds": []})
    payload = {
        "critique": "Layout is clean and the palette is consistent."
                    if not defects else "Overlapping elements need re-spacing.",
        "defects": defects,
        "scores": {"content": score, "visual": score, "cognitive": score},
    }
    return "```json\n" + json.dumps(payload, sort_keys=True) + "\n```"


def _variants_response(sections: dict[str, str]) -> str:
    match = re.search(r"Propose (\d+)", sections.get("Instructions", ""))
    count = int(match.group(1)) if match else 2
    stock = [
        "Emphasize the primary path with a bolder accent color.",
        "Group related elements into labeled sections for scanability.",
        "Prefer a compact arrangement that fits one screen.",
        "Use muted colors and reserve saturation for the key entity.",
    ]
    while len(stock) < count:
        stock.append(f"Offer an alternative reading order, variant {len(stock) + 1}.")
    return "```json\n" + json.dumps({"requirements": stock[:count]}, sort_keys=True) + "\n```"


_BREADTH_ROLES = ("layout", "structure", "style")


def _summary_response(sections: dict[str, str]) -> str:
    trace = prompts.parse_json_section("## Trace\n" + sections["Trace"], "Trace") or {}
    kind = trace.get("kind", "depth")
    run_id = trace.get("runId", "run")
    dtype = trace.get("diagramType", "universal")
    domain = trace.get("domain", "universal")
    role = "refiner" if kind == "depth" else _BREADTH_ROLES[trace.get("variantIndex", 0) % 3]
    failed = bool(trace.get("failure"))
    payload = {
        "title": f"{dtype} {kind} strategy {run_id[:6]}",
        "description": ("Failure path: the run aborted and the trace records why."
                        if failed else
                        f"Captures the {kind} exploration path that produced an accepted "
                        f"{dtype} layout."),
        "content": (f"Avoid the failure mode seen in run {run_id}: {trace.get('failureNote', '')[:120]}"
                    if failed else
                    f"Sequence sibling boxes with uniform gaps and keep {dtype} flows on "
                    "one axis; accept only collision-free arrangements."),
        "whenToUse": f"When composing {dtype} diagrams in the {domain} domain.",
        "agentRole": role,
        "diagramType": dtype if dtype in DIAGRAM_TYPES else "universal",
        "domain": domain or "universal",
    }
    return "```json\n" + json.dumps(payload, sort_keys=True) + "\n```"


def _aggregate_response(sections: dict[str, str]) -> str:
    bucket = prompts.parse_json_section("## Bucket\n" + sections["Bucket"], "Bucket") or {}
    samples = prompts.parse_json_section("## Samples\n" + sections["Samples"], "Samples") or []
    existing = prompts.parse_json_section("## ExistingGuidelines\n" + sections["ExistingGuidelines"],
                                          "ExistingGuidelines") or []
    sample_ids = sorted(s["entryId"] for s in samples)
    card = {
        "title": f"{bucket.get('domain')} {bucket.get('diagramType')} handbook rule",
        "description": f"Merged from {len(sample_ids)} recurring sample strategies.",
        "content": f"For {bucket.get('diagramType')} work in {bucket.get('domain')}, keep "
                   "the flow on a single axis, equalize gaps, and fit containers after "
                   "placing members.",
        "whenToUse": f"Whenever the task is a {bucket.get('diagramType')} in "
                     f"{bucket.get('domain')}.",
        "mergedSamples": sample_ids,
        "replacesEntryId": existing[0]["entryId"] if existing else None,
    }
    return "```json\n" + json.dumps({"guidelines": [card], "deletes": []}, sort_keys=True) + "\n```"


def _abstract_response(sections: dict[str, str]) -> str:
    role = sections.get("AgentRole", "layout").strip()
    guidelines = prompts.parse_json_section("## Guidelines\n" + sections["Guidelines"],
                                            "Guidelines") or []
    existing = prompts.parse_json_section("## ExistingPrinciples\n" + sections["ExistingPrinciples"],
                                          "ExistingPrinciples") or []
    first_per_domain: dict[str, str] = {}
    for g in sorted(guidelines, key=lambda g: g["entryId"]):
        first_per_domain.setdefault(g["domain"], g["entryId"])
    sources = sorted(first_per_domain.values())
    if len(sources) < 2:
        return "```json\n" + json.dumps({"principles": []}) + "\n```"
    card = {
        "title": "Single-axis rhythm",
        "description": "Cross-domain pattern: one dominant flow axis with uniform spacing "
                       "reads fastest.",
        "content": "Keep one dominant flow axis, equalize sibling gaps, and reserve visual "
                   "weight for the single most important entity.",
        "whenToUse": f"Any {role} decision, regardless of domain or diagram type.",
        "fromGuidelines": sources,
        "replacesEntryId": existing[0]["entryId"] if existing else None,
    }
    return "```json\n" + json.dumps({"principles": [card]}, sort_keys=True) + "\n```"


def _judge_response(sections: dict[str, str], score: int) -> str:
    contract = prompts.parse_json_section("## ResponseContract\n" + sections["ResponseContract"],
                                          "ResponseContract") or {}
    metrics = sorted((contract.get("scores") or {}).keys())
    payload = {
        "scores": {m: score for m in metrics},
        "rationales": {m: "Consistent with the rubric at a mid level." for m in metrics},
    }
    return "```json\n" + json.dumps(payload, sort_keys=True) + "\n```"


class PlaybookBackend:
    """Drop-in Backend that synthesizes every role's response on demand.

    `judge_score` fixes all judge scores; `critique_score` fixes refiner
    self-scores. The request log mirrors MockBackend's for prompt
    inspection in tests.
    """

    def __init__(self, judge_score: int = 3, critique_score: int = 4):
        self.judge_score = judge_score
        self.critique_score = critique_score
        self.log: list[tuple[str, ModelRequest]] = []

    def requests_for(self, role: str) -> list[ModelRequest]:
        return [req for r, req in self.log if r == role]

    def complete(self, request: ModelRequest) -> BackendResponse:
        self.log.append((request.agent_role, request))
        sections = prompts.parse_sections(request.user_text())
        role = request.agent_role
        if role == "structure":
            return BackendResponse(text=_structure_response(sections))
        if role == "style":
            return BackendResponse(text=_style_response(sections))
        if role == "layout":
            return BackendResponse(text=_layout_response(sections))
        if role == "refiner":
            if "Tools" in sections:
                return BackendResponse(text="No further changes required.")
            return BackendResponse(text=_critique_response(sections, self.critique_score))
        if role == "variants":
            return BackendResponse(text=_variants_response(sections))
        if role == "summarizer":
            return BackendResponse(text=_summary_response(sections))
        if role == "aggregator":
            return BackendResponse(text=_aggregate_response(sections))
        if role == "abstractor":
            return BackendResponse(text=_abstract_response(sections))
        if role == "judge":
            return BackendResponse(text=_judge_response(sections, self.judge_score))
        return BackendResponse(text="{}")


def sample_content(diagram_type: str) -> str:
    """Small demo content per diagram type, used by the golden corpus and
    mock-mode smoke runs."""
    flows = {
        "flowchart": "Collect requirements -> Draft design -> Review design: approve?\n"
                     "Review design -> Ship release: yes",
        "sequence_diagram": "Client -> Gateway: request\nGateway -> Service: forward\n"
                            "Service -> Database: query\nDatabase -> Client: results",
        "state_diagram": "Idle -> Running: start\nRunning -> Paused: pause\n"
                         "Paused -> Running: resume\nRunning -> Stopped: finish",
        "data_flow_diagram": "Sensors -> Ingest queue: events\nIngest queue -> Processor\n"
                             "Processor -> Warehouse: batches",
        "timeline": "Foundation 1998 -> First product 2003 -> Global expansion 2010 "
                    "-> Platform relaunch 2021",
        "gantt_chart": "Discovery phase -> Build phase -> Test phase -> Launch window",
        "funnel_chart": "Visitors -> Signups -> Active users -> Paying customers",
        "entity_relationship": "Customer -> Order: places\nOrder -> Line item: contains\n"
                               "Product -> Line item: priced as",
        "class_diagram": "Vehicle -> Car: extends\nVehicle -> Truck: extends\n"
                         "Car -> Engine: has",
        "architecture_diagram": "group Edge: CDN, Load balancer\n"
                                "group Core: API server, Worker pool\n"
                                "CDN -> Load balancer\nLoad balancer -> API server\n"
                                "API server -> Worker pool",
        "swimlane_diagram": "group Sales: Qualify lead, Close deal\n"
                            "group Delivery: Onboard client, Support client\n"
                            "Qualify lead -> Close deal\nClose deal -> Onboard client\n"
                            "Onboard client -> Support client",
    }
    if diagram_type in flows:
        return flows[diagram_type]
    radial = {
        "mind_map": "Healthy habits\n- Morning exercise\n- Balanced meals\n- Regular sleep\n"
                    "- Weekly planning",
        "concept_map": "Photosynthesis\n- Sunlight capture\n- Carbon fixation\n"
                       "- Oxygen release",
        "org_chart": "Chief executive\n- Head of product\n- Head of engineering\n"
                     "- Head of operations",
        "tree_diagram": "Decision root\n- Expand market?\n- Optimize costs\n- Hold position",
        "fishbone_diagram": "Late deliveries\n- Staffing gaps\n- Route planning\n"
                            "- Vehicle maintenance\n- Weather delays",
        "pyramid_chart": "Self actualization\n- Esteem\n- Belonging\n- Safety\n"
                         "- Physiological needs",
    }
    if diagram_type in radial:
        return radial[diagram_type]
    grids = {
        "swot_analysis": "- Strengths: loyal customers\n- Weaknesses: aging tooling\n"
                         "- Opportunities: new regions\n- Threats: price pressure",
        "matrix_chart": "- Urgent and important\n- Urgent not important\n"
                        "- Important not urgent\n- Neither urgent nor important",
        "venn_diagram": "- Data science skills\n- Domain expertise\n- Communication craft",
        "hybrid_diagram": "- Inputs overview\n- Processing stages\n- Feedback loops\n"
                          "- Outcome metrics",
    }
    return grids.get(diagram_type, "Start -> Middle -> End")
