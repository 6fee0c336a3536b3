"""Canvas document model: closed style enums, shape records, manifest
parsing/validation, canonical JSON serialization, diffing, and assembly
from a semantic graph plus style and layout.

The manifest is the single interchange format of the system. Its canonical
form is deterministic: object keys sorted, shapes ordered by their
fractional index key, geometry restricted to integers, unknown fields
rejected outright so model output is forced onto the supported manifold.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field, replace

from .fracindex import index_between, is_order_key
from .geometry import BoundingBox
from .taxonomy import DIAGRAM_TYPES

# Closed style vocabularies. Cardinalities are part of the contract.
COLORS = (
    "black", "grey", "light-violet", "violet", "blue", "light-blue", "yellow",
    "orange", "green", "light-green", "light-red", "red", "white",
)
GEOS = (
    "rectangle", "ellipse", "triangle", "diamond", "pentagon", "hexagon",
    "octagon", "star", "cloud", "arrowLeft", "arrowRight", "arrowUp", "arrowDown",
)
SIZES = ("s", "m", "l", "xl")
FILLS = ("none", "semi", "solid", "pattern")
DASHES = ("draw", "solid", "dashed", "dotted")
FONTS = ("draw", "sans", "serif", "mono")
ALIGNS = ("start", "middle", "end")
ARROWHEADS = ("none", "arrow")
SHAPE_KINDS = ("geo", "arrow", "text", "frame")
NODE_KINDS = ("entity", "process", "decision", "note")

STYLE_ENUMS: dict[str, tuple[str, ...]] = {
    "color": COLORS,
    "geo": GEOS,
    "size": SIZES,
    "fill": FILLS,
    "dash": DASHES,
    "font": FONTS,
}

# Per-kind property contracts: name -> (required, optional) key sets.
PROP_FIELDS: dict[str, tuple[frozenset[str], frozenset[str]]] = {
    "geo": (
        frozenset({"geo", "w", "h", "color", "fill", "dash", "size", "font", "text", "align"}),
        frozenset({"icon"}),
    ),
    "arrow": (
        frozenset({"start", "end", "color", "dash", "size", "font", "text",
                   "arrowheadStart", "arrowheadEnd"}),
        frozenset(),
    ),
    "text": (frozenset({"text", "color", "size", "font", "align", "w"}), frozenset()),
    "frame": (frozenset({"w", "h", "text", "color"}), frozenset()),
}

DOC_ID = "$document"


@dataclass(frozen=True)
class Violation:
    shape_id: str
    field: str
    rule: str
    message: str

    def to_obj(self) -> dict:
        return {"shapeId": self.shape_id, "field": self.field, "rule": self.rule,
                "message": self.message}


class ManifestSyntaxError(ValueError):
    """Input is not UTF-8 JSON at all."""


class SchemaError(ValueError):
    """Structurally parsed but violates the document contract."""

    def __init__(self, violations: list[Violation]):
        self.violations = violations
        head = violations[0] if violations else None
        detail = f"{head.shape_id}.{head.field}: {head.message}" if head else "schema violation"
        super().__init__(f"{len(violations)} schema violation(s); first: {detail}")


class CoverageError(ValueError):
    """Style or layout is missing entries for graph ids."""

    def __init__(self, missing: list[str]):
        self.missing = sorted(missing)
        super().__init__(f"missing coverage for: {', '.join(self.missing)}")


@dataclass
class ShapeRecord:
    id: str
    kind: str
    x: int
    y: int
    rotation: int
    index: str
    props: dict
    parent: str | None = None
    opacity: float = 1.0


@dataclass
class DiagramManifest:
    version: int
    shapes: list[ShapeRecord]
    meta: dict

    def shape_map(self) -> dict[str, ShapeRecord]:
        return {s.id: s for s in self.shapes}


def empty_manifest(diagram_type: str = "flowchart", domain: str = "", title: str = "") -> DiagramManifest:
    return DiagramManifest(version=1, shapes=[],
                           meta={"diagramType": diagram_type, "domain": domain, "title": title})


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

def _is_int(v: object) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_number(v: object) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def shape_from_obj(obj: dict, position: int = 0) -> tuple[ShapeRecord, list[Violation]]:
    """Build a record from raw JSON, collecting structural violations.

    Values are kept as-is; `validate` is the single rule engine and flags
    anything out of contract."""
    violations: list[Violation] = []
    sid = obj.get("id")
    name = sid if isinstance(sid, str) and sid else f"#shape{position}"
    allowed = {"id", "kind", "x", "y", "rotation", "index", "props", "parent", "opacity"}
    for key in obj:
        if key not in allowed:
            violations.append(Violation(name, key, "unknown-field", f"unknown shape field {key!r}"))
    props = obj.get("props")
    if not isinstance(props, dict):
        violations.append(Violation(name, "props", "missing-field", "props must be an object"))
        props = {}
    record = ShapeRecord(
        id=sid if isinstance(sid, str) else name,
        kind=obj.get("kind", ""),
        x=obj.get("x", 0),
        y=obj.get("y", 0),
        rotation=obj.get("rotation", 0),
        index=obj.get("index", ""),
        props=dict(props),
        parent=obj.get("parent"),
        opacity=obj.get("opacity", 1.0),
    )
    if "id" not in obj:
        violations.append(Violation(name, "id", "missing-field", "shape id is required"))
    for req in ("kind", "x", "y", "rotation", "index"):
        if req not in obj:
            violations.append(Violation(name, req, "missing-field", f"{req} is required"))
    return record, violations


def manifest_from_obj(obj: object) -> tuple[DiagramManifest, list[Violation]]:
    violations: list[Violation] = []
    if not isinstance(obj, dict):
        return empty_manifest(), [Violation(DOC_ID, "", "bad-type", "document must be a JSON object")]
    for key in obj:
        if key not in ("version", "shapes", "meta"):
            violations.append(Violation(DOC_ID, key, "unknown-field", f"unknown document field {key!r}"))
    if "version" not in obj:
        violations.append(Violation(DOC_ID, "version", "missing-field", "version is required"))
    meta = obj.get("meta")
    if not isinstance(meta, dict):
        violations.append(Violation(DOC_ID, "meta", "missing-field", "meta must be an object"))
        meta = {"diagramType": "", "domain": "", "title": ""}
    shapes_raw = obj.get("shapes")
    if not isinstance(shapes_raw, list):
        violations.append(Violation(DOC_ID, "shapes", "missing-field", "shapes must be an array"))
        shapes_raw = []
    shapes: list[ShapeRecord] = []
    for i, raw in enumerate(shapes_raw):
        if not isinstance(raw, dict):
            violations.append(Violation(f"#shape{i}", "", "bad-type", "shape must be an object"))
            continue
        record, errs = shape_from_obj(raw, i)
        violations.extend(errs)
        shapes.append(record)
    manifest = DiagramManifest(version=obj.get("version", 0), shapes=shapes, meta=dict(meta))
    return manifest, violations


def parse_manifest(data: bytes | str) -> DiagramManifest:
    """Parse UTF-8 JSON into a validated manifest in canonical form.

    Raises ManifestSyntaxError for malformed JSON and SchemaError (carrying
    one Violation per problem, each naming shape id and field) for anything
    off the supported manifold.
    """
    if isinstance(data, bytes):
        try:
            data = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ManifestSyntaxError(f"input is not UTF-8: {exc}") from exc
    try:
        obj = json.loads(data)
    except json.JSONDecodeError as exc:
        raise ManifestSyntaxError(f"malformed JSON: {exc}") from exc
    manifest, violations = manifest_from_obj(obj)
    violations.extend(validate(manifest))
    if violations:
        raise SchemaError(violations)
    return canonicalize(manifest)


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

def _check_enum(out: list[Violation], sid: str, name: str, value: object, members: tuple[str, ...]):
    if value not in members:
        out.append(Violation(sid, name, "closed-enum",
                             f"{name} must be one of {'/'.join(members)}, got {value!r}"))


def _check_endpoint(out: list[Violation], sid: str, name: str, value: object,
                    shapes: dict[str, ShapeRecord]):
    if not isinstance(value, dict):
        out.append(Violation(sid, name, "bad-endpoint", f"{name} must be an object"))
        return
    keys = set(value)
    if "boundTo" in keys:
        if not keys <= {"boundTo", "anchor"}:
            out.append(Violation(sid, name, "bad-endpoint",
                                 f"bound {name} allows only boundTo/anchor"))
        target = value.get("boundTo")
        if not isinstance(target, str) or target not in shapes:
            out.append(Violation(sid, name, "dangling-reference",
                                 f"{name}.boundTo references missing shape {target!r}"))
        elif shapes[target].kind == "arrow":
            out.append(Violation(sid, name, "arrow-bound-to-arrow",
                                 f"{name}.boundTo may not reference another arrow"))
        anchor = value.get("anchor", [0.5, 0.5])
        ok = (isinstance(anchor, list) and len(anchor) == 2
              and all(_is_number(c) and 0 <= c <= 1 for c in anchor))
        if not ok:
            out.append(Violation(sid, name, "bad-anchor",
                                 f"{name}.anchor must be two numbers in [0,1]"))
    elif "point" in keys:
        if keys != {"point"}:
            out.append(Violation(sid, name, "bad-endpoint", f"free {name} allows only point"))
        point = value.get("point")
        ok = (isinstance(point, list) and len(point) == 2
              and all(_is_int(c) and c >= 0 for c in point))
        if not ok:
            out.append(Violation(sid, name, "bad-endpoint",
                                 f"{name}.point must be two non-negative integers"))
    else:
        out.append(Violation(sid, name, "bad-endpoint",
                             f"{name} needs either boundTo or point"))


def _validate_props(out: list[Violation], shape: ShapeRecord, shapes: dict[str, ShapeRecord]):
    required, optional = PROP_FIELDS[shape.kind]
    props = shape.props
    for key in props:
        if key not in required and key not in optional:
            out.append(Violation(shape.id, key, "unknown-field",
                                 f"unknown {shape.kind} prop {key!r}"))
    for key in required:
        if key not in props:
            out.append(Violation(shape.id, key, "missing-field",
                                 f"{shape.kind} prop {key!r} is required"))
    for key in ("w", "h"):
        if key in props and key in required:
            v = props[key]
            if not _is_int(v) or v <= 0:
                out.append(Violation(shape.id, key, "positive-dimensions",
                                     f"{key} must be a positive integer, got {v!r}"))
    for key in ("color", "size", "font", "fill", "dash", "geo"):
        if key in props and key in required:
            _check_enum(out, shape.id, key, props[key], STYLE_ENUMS[key])
    if "align" in required and "align" in props:
        _check_enum(out, shape.id, "align", props["align"], ALIGNS)
    if "text" in props and not isinstance(props["text"], str):
        out.append(Violation(shape.id, "text", "bad-type", "text must be a string"))
    if "icon" in props and not (isinstance(props["icon"], str) and props["icon"]):
        out.append(Violation(shape.id, "icon", "bad-type", "icon must be a nonempty string"))
    if shape.kind == "arrow":
        _check_endpoint(out, shape.id, "start", props.get("start"), shapes)
        _check_endpoint(out, shape.id, "end", props.get("end"), shapes)
        for key in ("arrowheadStart", "arrowheadEnd"):
            if key in props:
                _check_enum(out, shape.id, key, props[key], ARROWHEADS)


def validate(manifest: DiagramManifest) -> list[Violation]:
    """Check every document invariant; violations are data, not errors."""
    out: list[Violation] = []
    if not _is_int(manifest.version) or manifest.version < 1:
        out.append(Violation(DOC_ID, "version", "bad-version", "version must be a positive integer"))
    meta = manifest.meta
    for key in meta:
        if key not in ("diagramType", "domain", "title"):
            out.append(Violation(DOC_ID, key, "unknown-field", f"unknown meta field {key!r}"))
    if meta.get("diagramType") not in DIAGRAM_TYPES:
        out.append(Violation(DOC_ID, "diagramType", "bad-diagram-type",
                             f"diagramType must be one of the {len(DIAGRAM_TYPES)} supported types"))
    for key in ("domain", "title"):
        if not isinstance(meta.get(key), str):
            out.append(Violation(DOC_ID, key, "bad-type", f"meta.{key} must be a string"))

    shapes = {}
    seen_index: dict[str, str] = {}
    for shape in manifest.shapes:
        if not isinstance(shape.id, str) or not shape.id or shape.id.startswith("$"):
            out.append(Violation(str(shape.id), "id", "bad-id", "id must be a nonempty string"))
            continue
        if shape.id in shapes:
            out.append(Violation(shape.id, "id", "duplicate-id", f"duplicate shape id {shape.id!r}"))
            continue
        shapes[shape.id] = shape

    for shape in manifest.shapes:
        sid = shape.id if isinstance(shape.id, str) else str(shape.id)
        if shape.kind not in SHAPE_KINDS:
            out.append(Violation(sid, "kind", "bad-kind", f"unknown shape kind {shape.kind!r}"))
            continue
        for name, value in (("x", shape.x), ("y", shape.y)):
            if not _is_int(value):
                out.append(Violation(sid, name, "bad-type", f"{name} must be an integer"))
            elif value < 0:
                out.append(Violation(sid, name, "negative-coordinate",
                                     f"{name} must be >= 0, got {value}"))
        if not _is_int(shape.rotation):
            out.append(Violation(sid, "rotation", "bad-type", "rotation must be integer degrees"))
        if not is_order_key(shape.index):
            out.append(Violation(sid, "index", "bad-order-key",
                                 f"index must be a [0-9a-z] key not ending in '0', got {shape.index!r}"))
        elif shape.index in seen_index:
            out.append(Violation(sid, "index", "unique-order-key",
                                 f"index {shape.index!r} already used by {seen_index[shape.index]!r}"))
        else:
            seen_index[shape.index] = sid
        if not (_is_number(shape.opacity) and 0 < shape.opacity <= 1):
            out.append(Violation(sid, "opacity", "bad-opacity", "opacity must be in (0, 1]"))
        if shape.parent is not None:
            target = shapes.get(shape.parent)
            if target is None:
                out.append(Violation(sid, "parent", "dangling-reference",
                                     f"parent references missing shape {shape.parent!r}"))
            elif target.kind != "frame":
                out.append(Violation(sid, "parent", "parent-not-frame",
                                     f"parent {shape.parent!r} is not a frame"))
        _validate_props(out, shape, shapes)

    # Parent chains must terminate.
    for shape in manifest.shapes:
        seen = {shape.id}
        cur = shapes.get(shape.id)
        while cur is not None and cur.parent is not None:
            if cur.parent in seen:
                out.append(Violation(shape.id, "parent", "parent-cycle",
                                     f"parent chain of {shape.id!r} loops"))
                break
            seen.add(cur.parent)
            cur = shapes.get(cur.parent)
    return out


# ---------------------------------------------------------------------------
# Canonical serialization
# ---------------------------------------------------------------------------

def shape_to_obj(shape: ShapeRecord) -> dict:
    obj = {
        "id": shape.id,
        "kind": shape.kind,
        "x": shape.x,
        "y": shape.y,
        "rotation": shape.rotation,
        "index": shape.index,
        "opacity": float(shape.opacity),
        "props": copy.deepcopy(shape.props),
    }
    if shape.parent is not None:
        obj["parent"] = shape.parent
    return obj


def manifest_to_obj(manifest: DiagramManifest) -> dict:
    return {
        "version": manifest.version,
        "meta": dict(manifest.meta),
        "shapes": [shape_to_obj(s) for s in manifest.shapes],
    }


def canonicalize(manifest: DiagramManifest) -> DiagramManifest:
    """Canonical form: shapes sorted by order key (the document z-order),
    opacity normalized to float."""
    shapes = sorted(manifest.shapes, key=lambda s: (str(s.index), str(s.id)))
    shapes = [replace(s, opacity=float(s.opacity), props=copy.deepcopy(s.props)) for s in shapes]
    return DiagramManifest(version=manifest.version, shapes=shapes, meta=dict(manifest.meta))


def serialize_manifest(manifest: DiagramManifest) -> str:
    """Canonical JSON text: UTF-8, keys sorted, two-space indent, trailing
    newline. Byte-identical for equal documents."""
    obj = manifest_to_obj(canonicalize(manifest))
    return json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def manifests_equal(a: DiagramManifest, b: DiagramManifest) -> bool:
    return serialize_manifest(a) == serialize_manifest(b)


# ---------------------------------------------------------------------------
# Semantic graph
# ---------------------------------------------------------------------------

@dataclass
class GraphNode:
    node_id: str
    label: str
    kind: str = "entity"
    group_id: str | None = None
    aliases: tuple[str, ...] = ()


@dataclass
class GraphEdge:
    edge_id: str
    source: str
    target: str
    label: str = ""
    relation: str = "related"


@dataclass
class GraphGroup:
    group_id: str
    label: str
    parent_group_id: str | None = None


@dataclass
class SemanticGraph:
    nodes: list[GraphNode]
    edges: list[GraphEdge]
    groups: list[GraphGroup]
    diagram_type: str

    def node_ids(self) -> list[str]:
        return [n.node_id for n in self.nodes]

    def edge_ids(self) -> list[str]:
        return [e.edge_id for e in self.edges]

    def group_ids(self) -> list[str]:
        return [g.group_id for g in self.groups]


def graph_to_obj(graph: SemanticGraph) -> dict:
    return {
        "diagramType": graph.diagram_type,
        "nodes": [
            {"nodeId": n.node_id, "label": n.label, "kind": n.kind,
             **({"groupId": n.group_id} if n.group_id else {}),
             **({"aliases": list(n.aliases)} if n.aliases else {})}
            for n in graph.nodes
        ],
        "edges": [
            {"edgeId": e.edge_id, "from": e.source, "to": e.target,
             "label": e.label, "relation": e.relation}
            for e in graph.edges
        ],
        "groups": [
            {"groupId": g.group_id, "label": g.label,
             **({"parentGroupId": g.parent_group_id} if g.parent_group_id else {})}
            for g in graph.groups
        ],
    }


def graph_from_obj(obj: dict) -> SemanticGraph:
    """Lenient constructor for model output; pair with validate_graph."""
    nodes = [
        GraphNode(
            node_id=str(n.get("nodeId", "")),
            label=str(n.get("label", "")),
            kind=str(n.get("kind", "entity")),
            group_id=n.get("groupId") or None,
            aliases=tuple(str(a) for a in n.get("aliases", [])),
        )
        for n in obj.get("nodes", [])
    ]
    edges = [
        GraphEdge(
            edge_id=str(e.get("edgeId") or f"e{i + 1}"),
            source=str(e.get("from", "")),
            target=str(e.get("to", "")),
            label=str(e.get("label", "")),
            relation=str(e.get("relation", "related")),
        )
        for i, e in enumerate(obj.get("edges", []))
    ]
    groups = [
        GraphGroup(
            group_id=str(g.get("groupId", "")),
            label=str(g.get("label", "")),
            parent_group_id=g.get("parentGroupId") or None,
        )
        for g in obj.get("groups", [])
    ]
    return SemanticGraph(nodes=nodes, edges=edges, groups=groups,
                         diagram_type=str(obj.get("diagramType", "")))


def normalize_label(label: str) -> str:
    return " ".join(label.casefold().split())


def ground_graph(graph: SemanticGraph) -> SemanticGraph:
    """Canonical entity grounding: collapse nodes whose normalized labels or
    aliases collide into the first-seen node, remap edges, drop self-loops
    and duplicate edges the merge produces."""
    owner_by_key: dict[str, str] = {}
    remap: dict[str, str] = {}
    nodes: list[GraphNode] = []
    for node in graph.nodes:
        keys = [normalize_label(node.label)] + [normalize_label(a) for a in node.aliases]
        keys = [k for k in keys if k]
        owner = next((owner_by_key[k] for k in keys if k in owner_by_key), None)
        if owner is None:
            nodes.append(node)
            remap[node.node_id] = node.node_id
            for k in keys:
                owner_by_key[k] = node.node_id
        else:
            remap[node.node_id] = owner
            for k in keys:
                owner_by_key.setdefault(k, owner)
    edges: list[GraphEdge] = []
    seen: set[tuple[str, str, str, str]] = set()
    for edge in graph.edges:
        source = remap.get(edge.source, edge.source)
        target = remap.get(edge.target, edge.target)
        if source == target:
            continue
        key = (source, target, edge.label, edge.relation)
        if key in seen:
            continue
        seen.add(key)
        edges.append(replace(edge, source=source, target=target))
    return SemanticGraph(nodes=nodes, edges=edges, groups=list(graph.groups),
                         diagram_type=graph.diagram_type)


def validate_graph(graph: SemanticGraph) -> list[str]:
    problems: list[str] = []
    if graph.diagram_type not in DIAGRAM_TYPES:
        problems.append(f"diagramType {graph.diagram_type!r} is not a supported type")
    ids: set[str] = set()
    for name, values in (("node", graph.node_ids()), ("group", graph.group_ids()),
                         ("edge", graph.edge_ids())):
        for value in values:
            if not value:
                problems.append(f"{name} with empty id")
            elif value in ids:
                problems.append(f"duplicate id {value!r}")
            ids.add(value)
    labels: set[str] = set()
    node_ids = set(graph.node_ids())
    group_ids = set(graph.group_ids())
    for node in graph.nodes:
        if node.kind not in NODE_KINDS:
            problems.append(f"node {node.node_id!r} has unknown kind {node.kind!r}")
        key = normalize_label(node.label)
        if not key:
            problems.append(f"node {node.node_id!r} has an empty label")
        elif key in labels:
            problems.append(f"nodes share normalized label {key!r}; grounding required")
        labels.add(key)
        if node.group_id is not None and node.group_id not in group_ids:
            problems.append(f"node {node.node_id!r} references missing group {node.group_id!r}")
    for edge in graph.edges:
        for end in (edge.source, edge.target):
            if end not in node_ids:
                problems.append(f"edge {edge.edge_id!r} references missing node {end!r}")
    parent = {g.group_id: g.parent_group_id for g in graph.groups}
    for group in graph.groups:
        if group.parent_group_id is not None and group.parent_group_id not in group_ids:
            problems.append(f"group {group.group_id!r} references missing parent "
                            f"{group.parent_group_id!r}")
        seen = {group.group_id}
        cur = group.parent_group_id
        while cur is not None:
            if cur in seen:
                problems.append(f"group nesting loops at {cur!r}")
                break
            seen.add(cur)
            cur = parent.get(cur)
    return problems


# ---------------------------------------------------------------------------
# Style schema and layout config (the shared coordination payloads)
# ---------------------------------------------------------------------------

@dataclass
class StyleSchema:
    per_node: dict[str, dict]
    per_edge: dict[str, dict]
    per_group: dict[str, dict]


@dataclass
class LayoutConfig:
    per_node: dict[str, BoundingBox]
    per_group: dict[str, BoundingBox]
    order_keys: dict[str, str] = field(default_factory=dict)


NODE_STYLE_FIELDS = ("geo", "color", "fill", "dash", "size", "font")
EDGE_STYLE_FIELDS = ("color", "dash")


def validate_style_schema(style: StyleSchema, graph: SemanticGraph) -> list[str]:
    problems: list[str] = []
    for nid in graph.node_ids():
        entry = style.per_node.get(nid)
        if entry is None:
            problems.append(f"perNode missing {nid!r}")
            continue
        for key in NODE_STYLE_FIELDS:
            if entry.get(key) not in STYLE_ENUMS[key]:
                problems.append(f"perNode[{nid!r}].{key} value {entry.get(key)!r} outside palette")
        rank = entry.get("hierarchyRank")
        if not _is_int(rank) or rank < 0:
            problems.append(f"perNode[{nid!r}].hierarchyRank must be a non-negative integer")
        icon = entry.get("icon")
        if icon is not None and not (isinstance(icon, str) and icon):
            problems.append(f"perNode[{nid!r}].icon must be a nonempty string")
    for eid in graph.edge_ids():
        entry = style.per_edge.get(eid)
        if entry is None:
            problems.append(f"perEdge missing {eid!r}")
            continue
        for key in EDGE_STYLE_FIELDS:
            if entry.get(key) not in STYLE_ENUMS[key]:
                problems.append(f"perEdge[{eid!r}].{key} value {entry.get(key)!r} outside palette")
        for key in ("arrowheadStart", "arrowheadEnd"):
            if entry.get(key, "none") not in ARROWHEADS:
                problems.append(f"perEdge[{eid!r}].{key} must be none or arrow")
    for gid in graph.group_ids():
        entry = style.per_group.get(gid)
        if entry is None:
            problems.append(f"perGroup missing {gid!r}")
        elif entry.get("color") not in COLORS:
            problems.append(f"perGroup[{gid!r}].color outside palette")
    return problems


# ---------------------------------------------------------------------------
# Assembly
# ---------------------------------------------------------------------------

def _topo_groups(graph: SemanticGraph) -> list[GraphGroup]:
    by_id = {g.group_id: g for g in graph.groups}
    done: list[GraphGroup] = []
    seen: set[str] = set()

    def visit(group: GraphGroup):
        if group.group_id in seen:
            return
        if group.parent_group_id and group.parent_group_id in by_id:
            visit(by_id[group.parent_group_id])
        if group.group_id not in seen:
            seen.add(group.group_id)
            done.append(group)

    for group in graph.groups:
        visit(group)
    return done


def assemble_manifest(
    graph: SemanticGraph,
    style: StyleSchema,
    layout: LayoutConfig,
    *,
    domain: str = "",
    title: str = "",
    version: int = 1,
) -> DiagramManifest:
    """Compose graph + style + layout into a manifest: one geo per node, one
    bound arrow per edge, one frame per group (children parented to it),
    frames keyed below their children in z-order."""
    missing = [nid for nid in graph.node_ids()
               if nid not in style.per_node or nid not in layout.per_node]
    missing += [eid for eid in graph.edge_ids() if eid not in style.per_edge]
    missing += [gid for gid in graph.group_ids()
                if gid not in style.per_group or gid not in layout.per_group]
    if missing:
        raise CoverageError(missing)

    groups = _topo_groups(graph)
    ranked_nodes = sorted(
        enumerate(graph.nodes),
        key=lambda pair: (style.per_node[pair[1].node_id].get("hierarchyRank", 0), pair[0]),
    )
    draw_order = [g.group_id for g in groups]
    draw_order += [n.node_id for _, n in ranked_nodes]
    draw_order += [e.edge_id for e in graph.edges]

    keys: dict[str, str] = {}
    if all(sid in layout.order_keys for sid in draw_order):
        keys = {sid: layout.order_keys[sid] for sid in draw_order}
    else:
        prev: str | None = None
        for sid in draw_order:
            prev = index_between(prev, None)
            keys[sid] = prev

    shapes: list[ShapeRecord] = []
    for group in groups:
        box = layout.per_group[group.group_id]
        shapes.append(ShapeRecord(
            id=group.group_id, kind="frame", x=box.x, y=box.y, rotation=0,
            index=keys[group.group_id], parent=group.parent_group_id,
            props={"w": box.w, "h": box.h, "text": group.label,
                   "color": style.per_group[group.group_id]["color"]},
        ))
    for node in graph.nodes:
        box = layout.per_node[node.node_id]
        entry = style.per_node[node.node_id]
        props = {
            "geo": entry["geo"], "w": box.w, "h": box.h, "color": entry["color"],
            "fill": entry["fill"], "dash": entry["dash"], "size": entry["size"],
            "font": entry["font"], "text": node.label, "align": "middle",
        }
        if entry.get("icon"):
            props["icon"] = entry["icon"]
        shapes.append(ShapeRecord(
            id=node.node_id, kind="geo", x=box.x, y=box.y, rotation=0,
            index=keys[node.node_id], parent=node.group_id, props=props,
        ))
    for edge in graph.edges:
        entry = style.per_edge[edge.edge_id]
        shapes.append(ShapeRecord(
            id=edge.edge_id, kind="arrow", x=0, y=0, rotation=0,
            index=keys[edge.edge_id],
            props={
                "start": {"boundTo": edge.source, "anchor": [0.5, 0.5]},
                "end": {"boundTo": edge.target, "anchor": [0.5, 0.5]},
                "color": entry["color"], "dash": entry["dash"], "size": "s",
                "font": "sans", "text": edge.label,
                "arrowheadStart": entry.get("arrowheadStart", "none"),
                "arrowheadEnd": entry.get("arrowheadEnd", "arrow"),
            },
        ))
    manifest = canonicalize(DiagramManifest(
        version=version, shapes=shapes,
        meta={"diagramType": graph.diagram_type, "domain": domain, "title": title},
    ))
    violations = validate(manifest)
    if violations:
        raise SchemaError(violations)
    return manifest


# ---------------------------------------------------------------------------
# Diff / apply
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Modified:
    id: str
    field: str
    before: object
    after: object

    def to_obj(self) -> dict:
        return {"id": self.id, "field": self.field, "before": self.before, "after": self.after}


@dataclass
class EditLog:
    added: list[dict] = field(default_factory=list)
    removed: list[str] = field(default_factory=list)
    modified: list[Modified] = field(default_factory=list)

    def is_empty(self) -> bool:
        return not (self.added or self.removed or self.modified)

    def to_obj(self) -> dict:
        return {"added": copy.deepcopy(self.added), "removed": list(self.removed),
                "modified": [m.to_obj() for m in self.modified]}

    @classmethod
    def from_obj(cls, obj: dict) -> "EditLog":
        return cls(
            added=copy.deepcopy(obj.get("added", [])),
            removed=list(obj.get("removed", [])),
            modified=[Modified(m["id"], m["field"], m.get("before"), m.get("after"))
                      for m in obj.get("modified", [])],
        )


_TOP_FIELDS = ("x", "y", "rotation", "index", "parent", "opacity")


def diff_manifests(a: DiagramManifest, b: DiagramManifest) -> EditLog:
    """Minimal edit log taking canonical(a) to canonical(b). Kind changes
    count as remove+add; document metadata diffs use the reserved id
    "$document"."""
    ca, cb = canonicalize(a), canonicalize(b)
    amap, bmap = ca.shape_map(), cb.shape_map()
    log = EditLog()
    if ca.version != cb.version:
        log.modified.append(Modified(DOC_ID, "version", ca.version, cb.version))
    for key in ("diagramType", "domain", "title"):
        if ca.meta.get(key) != cb.meta.get(key):
            log.modified.append(Modified(DOC_ID, f"meta.{key}", ca.meta.get(key), cb.meta.get(key)))
    for shape in ca.shapes:
        other = bmap.get(shape.id)
        if other is None or other.kind != shape.kind:
            log.removed.append(shape.id)
    for shape in cb.shapes:
        mine = amap.get(shape.id)
        if mine is None or mine.kind != shape.kind:
            log.added.append(shape_to_obj(shape))
            continue
        for name in _TOP_FIELDS:
            before, after = getattr(mine, name), getattr(shape, name)
            if before != after:
                log.modified.append(Modified(shape.id, name, before, after))
        for key in sorted(set(mine.props) | set(shape.props)):
            before, after = mine.props.get(key), shape.props.get(key)
            if before != after:
                log.modified.append(Modified(shape.id, f"props.{key}", before, after))
    return log


def apply_edit_log(log: EditLog, manifest: DiagramManifest) -> DiagramManifest:
    """Replay an edit log onto a manifest, returning the canonical result."""
    base = canonicalize(manifest)
    shapes = {s.id: s for s in base.shapes}
    meta = dict(base.meta)
    version = base.version
    for sid in log.removed:
        shapes.pop(sid, None)
    for obj in log.added:
        record, errs = shape_from_obj(obj)
        if errs:
            raise SchemaError(errs)
        shapes[record.id] = record
    for mod in log.modified:
        if mod.id == DOC_ID:
            if mod.field == "version":
                version = mod.after
            elif mod.field.startswith("meta."):
                meta[mod.field[len("meta."):]] = mod.after
            continue
        shape = shapes.get(mod.id)
        if shape is None:
            continue
        if mod.field.startswith("props."):
            key = mod.field[len("props."):]
            props = dict(shape.props)
            if mod.after is None:
                props.pop(key, None)
            else:
                props[key] = copy.deepcopy(mod.after)
            shapes[mod.id] = replace(shape, props=props)
        elif mod.field in _TOP_FIELDS:
            shapes[mod.id] = replace(shape, **{mod.field: mod.after})
    return canonicalize(DiagramManifest(version=version, shapes=list(shapes.values()), meta=meta))
