"""Prompt assembly for the agent pipeline.

Prompts are built from named markdown sections; structured context (graph,
style, sizes) travels as fenced JSON so both real models and the scripted
playbook backend can read it. `parse_sections` is the inverse used by the
playbook and by tests that inspect what an agent was shown.
"""

from __future__ import annotations

import json
import re

SECTION_RE = re.compile(r"^## (\w[\w-]*)\n(.*?)(?=^## |\Z)", re.DOTALL | re.MULTILINE)
FENCE_RE = re.compile(r"```json\n(.*?)\n```", re.DOTALL)


def section(name: str, body: str) -> str:
    return f"## {name}\n{body.rstrip()}\n"

def json_section(name: str, obj: object) -> str:
    return section(name, "```json\n" + json.dumps(obj, sort_keys=True, ensure_ascii=False) + "\n```")


def parse_sections(text: str) -> dict[str, str]:
    return {m.group(1): m.group(2).strip() for m in SECTION_RE.finditer(text)}


def parse_json_section(text: str, name: str) -> object | None:
    body = parse_sections(text).get(name)
    if body is None:
        return None
    fence = FENCE_RE.search(body)
    if fence is None:
        return None
    return json.loads(fence.group(1))


def knowledge_section(entries) -> str:
    """Retrieved design-knowledge cards, one block per entry in retrieval
    order. The block layout is stable: tests assert that seeded entries show
    up verbatim in agent prompts."""
    if not entries:
        return section("Knowledge", "(none retrieved)")
    lines = []
    for e in entries:
        lines.append(f"- [{e.tier}] {e.title} ({e.agent_role}/{e.diagram_type}/{e.domain})")
        lines.append(f"  when to use: {e.when_to_use}")
        lines.append(f"  {e.content}")
    return section("Knowledge", "\n".join(lines))


def base_sections(request, entries) -> str:
    parts = [
        section("Task", request.content),
        section("Requirements", request.requirements or "(none)"),
        knowledge_section(entries),
    ]
    if request.diagram_type_override:
        parts.append(section("TypeOverride", request.diagram_type_override))
    return "".join(parts)


STRUCTURE_SYSTEM = (
    "You are the semantic structure agent of a diagram synthesis pipeline. "
    "Distill the task content into a semantic graph tuned for visual layout: "
    "pick the best diagram type, ground entities into a unique pool (list the "
    "surface forms you collapsed as aliases), nest related entities into "
    "groups, then add edges for the salient relations. First state your "
    "strategy, then emit the instance."
)

STYLE_SYSTEM = (
    "You are the visual style agent. Define one cohesive design language for "
    "the given graph, then map every node, edge, and group onto the closed "
    "property palette. Dominant entities get dominant attributes; peripheral "
    "nodes stay muted. Values outside the supported palette are rejected."
)

LAYOUT_SYSTEM = (
    "You are the spatial layout agent. Using the per-node minimum sizes "
    "computed by the measurement tool, produce a collision-free arrangement: "
    "partition the canvas for top-level groups first, then place members "
    "recursively. Boxes may not shrink below their minimum sizes."
)

REFINER_SYSTEM = (
    "You are the refinement agent. Inspect the rendered diagram against the "
    "original request, name concrete defects, then fix them with the "
    "registered tools. Prefer surgical updates over regeneration."
)


def structure_user(request, entries) -> str:
    contract = {
        "spec": {"selectedDiagramType": "<type>", "visualRationale": "<text>",
                 "primaryFlowStrategy": "<text>", "groupingLogic": "<text>"},
        "instance": {"diagramType": "<type>",
                     "nodes": [{"nodeId": "n1", "label": "", "kind": "entity",
                                "groupId": None, "aliases": []}],
                     "edges": [{"from": "n1", "to": "n2", "label": "", "relation": "related"}],
                     "groups": [{"groupId": "g1", "label": "", "parentGroupId": None}]},
    }
    return base_sections(request, entries) + json_section("ResponseContract", contract)


def style_user(request, graph_obj: dict, entries) -> str:
    contract = {
        "spec": {"visualTonePrinciple": "", "hierarchyPrinciple": "", "colorPrinciple": "",
                 "shapePrinciple": "", "connectionPrinciple": ""},
        "instance": {"perNode": {"<nodeId>": {"geo": "", "color": "", "fill": "", "dash": "",
                                              "size": "", "font": "", "hierarchyRank": 0}},
                     "perEdge": {"<edgeId>": {"color": "", "dash": "", "arrowheadStart": "none",
                                              "arrowheadEnd": "arrow"}},
                     "perGroup": {"<groupId>": {"color": ""}}},
    }
    return (base_sections(request, entries) + json_section("Graph", graph_obj)
            + json_section("ResponseContract", contract))


def layout_user(request, graph_obj: dict, style_obj: dict, sizes: dict, entries) -> str:
    contract = {
        "spec": {"flowStrategyPrinciple": "", "spatialBreathingPrinciple": "",
                 "alignmentBalancePrinciple": "", "depthLayeringPrinciple": "",
                 "structuralRhythmPrinciple": "", "direction": "row|column"},
        "instance": {"perNode": {"<nodeId>": {"x": 0, "y": 0, "w": 0, "h": 0}},
                     "perGroup": {"<groupId>": {"x": 0, "y": 0, "w": 0, "h": 0}},
                     "orderKeys": {}},
    }
    return (base_sections(request, entries) + json_section("Graph", graph_obj)
            + json_section("Style", style_obj) + json_section("Sizes", sizes)
            + json_section("ResponseContract", contract))


def critique_user(request, manifest_obj: dict, selfcheck: dict, svg_text: str | None, entries) -> str:
    contract = {
        "critique": "<overall assessment>",
        "defects": [{"kind": "semantic-omission|stylistic-inconsistency|spatial-overlap"
                             "|routing-violation", "targetIds": ["<shapeId>"]}],
        "scores": {"content": 3, "visual": 3, "cognitive": 3},
    }
    parts = base_sections(request, entries)
    parts += json_section("Manifest", manifest_obj)
    parts += json_section("SelfCheck", selfcheck)
    if svg_text is not None:
        parts += section("RenderedSVG", "```svg\n" + svg_text + "\n```")
    return parts + json_section("ResponseContract", contract)


def tool_loop_user(critique_obj: dict, manifest_obj: dict, tool_names: list[str]) -> str:
    return (
        json_section("Critique", critique_obj)
        + json_section("Manifest", manifest_obj)
        + section("Tools", "\n".join(f"- {name}" for name in tool_names))
        + section(
            "Instructions",
            "Request tool calls to repair the defects; respond with plain text "
            "once the manifest is acceptable.",
        )
    )


def variants_user(content: str, base_requirement: str | None, count: int) -> str:
    contract = {"requirements": ["<requirement text>"] }
    return (
        section("Task", content)
        + section("Requirements", base_requirement or "(none)")
        + section("Instructions",
                  f"Propose {count} additional user requirements exploring different "
                  "presentation angles for the same content.")
        + json_section("ResponseContract", contract)
    )


def summarize_user(trace_obj: dict) -> str:
    contract = {"title": "", "description": "", "content": "", "whenToUse": "",
                "agentRole": "structure|style|layout|refiner",
                "diagramType": "<type or universal>", "domain": "<domain or universal>"}
    return (
        json_section("Trace", trace_obj)
        + section("Instructions",
                  "Distill this execution trace into one reusable strategy card, "
                  "keeping the reasoning path and feedback that drove the outcome. "
                  "If the trace failed, record the failure mode as the lesson.")
        + json_section("ResponseContract", contract)
    )


def aggregate_user(bucket_key: dict, samples_obj: list, existing_obj: list, limit: int) -> str:
    contract = {"guidelines": [{"title": "", "description": "", "content": "", "whenToUse": "",
                                "mergedSamples": ["<sampleEntryId>"],
                                "replacesEntryId": None}],
                "deletes": []}
    return (
        json_section("Bucket", bucket_key)
        + json_section("Samples", samples_obj)
        + json_section("ExistingGuidelines", existing_obj)
        + section("Instructions",
                  f"Merge the repeated patterns in these samples into at most {limit} "
                  "domain guidelines. Update an existing guideline instead of adding a "
                  "near-duplicate; list obsolete guideline ids under deletes.")
        + json_section("ResponseContract", contract)
    )


def abstract_user(agent_role: str, guidelines_obj: list, existing_obj: list) -> str:
    contract = {"principles": [{"title": "", "description": "", "content": "", "whenToUse": "",
                                "fromGuidelines": ["<guidelineEntryId>"],
                                "replacesEntryId": None}]}
    return (
        section("AgentRole", agent_role)
        + json_section("Guidelines", guidelines_obj)
        + json_section("ExistingPrinciples", existing_obj)
        + section("Instructions",
                  "Identify structural patterns shared across at least two domains and "
                  "state them as universal design principles.")
        + json_section("ResponseContract", contract)
    )


JUDGE_SYSTEM = (
    "You are a strict diagram judge. Score each listed metric on a 1-5 scale "
    "using the rubric bullets, and justify each score in one sentence. "
    "Respond with JSON only."
)


def judge_user(dimension: str, metrics: dict[str, list[str]], query: str, content: str,
               svg_text: str | None) -> str:
    rubric = "\n".join(
        f"- {metric}: " + "; ".join(bullets) for metric, bullets in metrics.items()
    )
    contract = {"scores": {m: 3 for m in metrics}, "rationales": {m: "" for m in metrics}}
    parts = (
        section("Dimension", dimension)
        + section("Rubric", rubric)
        + section("UserQuery", query)
        + section("SourceContent", content)
    )
    if svg_text is not None:
        parts += section("RenderedSVG", "```svg\n" + svg_text + "\n```")
    return parts + json_section("ResponseContract", contract)
