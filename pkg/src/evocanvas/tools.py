"""Refiner tool registry: thin, validated wrappers over the document model
and geometry operators.

Tools mutate a ManifestSession. Every mutation re-validates the whole
document and rolls back on violation, so the session manifest is valid
after every call no matter what the model asked for.
"""

from __future__ import annotations

import copy
import json
from dataclasses import replace

from . import geometry
from .gateway import ToolRegistry
from .schema import (
    ALIGNS,
    DiagramManifest,
    FONTS,
    STYLE_ENUMS,
    ShapeRecord,
    canonicalize,
    manifest_to_obj,
    parse_manifest,
    serialize_manifest,
    validate,
)


class ToolError(ValueError):
    pass


_TOP_FIELDS = ("x", "y", "rotation", "index", "parent", "opacity")


class ManifestSession:
    """Holds the manifest under refinement plus an audit trail of applied
    tool mutations."""

    def __init__(self, manifest: DiagramManifest):
        violations = validate(manifest)
        if violations:
            raise ToolError(f"session requires a valid manifest; {len(violations)} violations")
        self.manifest = canonicalize(manifest)
        self.applied: list[str] = []

    def shape(self, shape_id: str) -> ShapeRecord:
        found = self.manifest.shape_map().get(shape_id)
        if found is None:
            raise ToolError(f"no shape with id {shape_id!r}")
        return found

    def commit(self, shapes: list[ShapeRecord], note: str) -> None:
        candidate = canonicalize(DiagramManifest(
            version=self.manifest.version, shapes=shapes, meta=dict(self.manifest.meta)))
        violations = validate(candidate)
        if violations:
            head = violations[0]
            raise ToolError(
                f"rejected ({note}): {head.shape_id}.{head.field} {head.rule}: {head.message}")
        self.manifest = candidate
        self.applied.append(note)

    def replace_shapes(self, updated: dict[str, ShapeRecord], note: str) -> None:
        shapes = [updated.get(s.id, s) for s in self.manifest.shapes]
        self.commit(shapes, note)


def _as_int(value, name: str) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or value != int(value):
        raise ToolError(f"{name} must be an integer, got {value!r}")
    return int(value)


def _descendants(session: ManifestSession, root_id: str) -> list[ShapeRecord]:
    children: dict[str, list[ShapeRecord]] = {}
    for s in session.manifest.shapes:
        if s.parent is not None:
            children.setdefault(s.parent, []).append(s)
    out: list[ShapeRecord] = []
    stack = [root_id]
    while stack:
        for child in children.get(stack.pop(), []):
            out.append(child)
            stack.append(child.id)
    return out


def build_refiner_registry(session: ManifestSession) -> ToolRegistry:
    registry = ToolRegistry()

    def load_manifest(args: dict):
        return manifest_to_obj(session.manifest)

    def save_manifest(args: dict):
        try:
            manifest = parse_manifest(json.dumps(args.get("manifest")))
        except ValueError as exc:
            raise ToolError(f"manifest rejected: {exc}") from exc
        if manifest.meta != session.manifest.meta:
            raise ToolError("save_manifest may not change document metadata")
        session.manifest = manifest
        session.applied.append("save_manifest")
        return {"ok": True, "shapes": len(manifest.shapes)}

    def search_manifest(args: dict):
        kind = args.get("kind")
        needle = str(args.get("text", "")).casefold()
        hits = []
        for s in session.manifest.shapes:
            if kind and s.kind != kind:
                continue
            text = str(s.props.get("text", ""))
            if needle and needle not in text.casefold():
                continue
            hits.append({"id": s.id, "kind": s.kind, "x": s.x, "y": s.y,
                         "text": text, "index": s.index})
        return {"matches": hits}

    def update_shape(args: dict):
        shape = session.shape(str(args.get("id")))
        name = str(args.get("field", ""))
        value = args.get("value")
        if name.startswith("props."):
            name = name[len("props."):]
        if name in _TOP_FIELDS:
            session.replace_shapes({shape.id: replace(shape, **{name: value})},
                                   f"update_shape {shape.id}.{name}")
        else:
            props = dict(shape.props)
            if value is None:
                props.pop(name, None)
            else:
                props[name] = copy.deepcopy(value)
            session.replace_shapes({shape.id: replace(shape, props=props)},
                                   f"update_shape {shape.id}.{name}")
        return {"ok": True, "id": shape.id, "field": name}

    def set_opacity(args: dict):
        shape = session.shape(str(args.get("id")))
        value = args.get("value")
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise ToolError("opacity must be a number in (0, 1]")
        session.replace_shapes({shape.id: replace(shape, opacity=float(value))},
                               f"set_opacity {shape.id}")
        return {"ok": True, "id": shape.id, "opacity": float(value)}

    def set_rotation(args: dict):
        shape = session.shape(str(args.get("id")))
        degrees = _as_int(args.get("degrees"), "degrees")
        session.replace_shapes({shape.id: replace(shape, rotation=degrees)},
                               f"set_rotation {shape.id}")
        return {"ok": True, "id": shape.id, "rotation": degrees}

    def _targets(args: dict) -> list[ShapeRecord]:
        ids = args.get("ids")
        if not isinstance(ids, list) or not ids:
            raise ToolError("ids must be a nonempty list of shape ids")
        return [session.shape(str(i)) for i in ids]

    def align_shapes(args: dict):
        shapes = _targets(args)
        mode = str(args.get("mode", ""))
        try:
            moved = geometry.align(shapes, mode)
        except ValueError as exc:
            raise ToolError(str(exc)) from exc
        session.replace_shapes({s.id: s for s in moved}, f"align {mode}")
        return {"ok": True, "moved": [s.id for s in moved]}

    def distribute_shapes(args: dict):
        shapes = _targets(args)
        axis = str(args.get("axis", ""))
        try:
            moved = geometry.distribute(shapes, axis)
        except ValueError as exc:
            raise ToolError(str(exc)) from exc
        session.replace_shapes({s.id: s for s in moved}, f"distribute {axis}")
        return {"ok": True, "moved": [s.id for s in moved]}

    def move_relative(args: dict):
        shape = session.shape(str(args.get("id")))
        dx = _as_int(args.get("dx", 0), "dx")
        dy = _as_int(args.get("dy", 0), "dy")
        updates = {shape.id: replace(shape, x=max(0, shape.x + dx), y=max(0, shape.y + dy))}
        if shape.kind == "frame":
            for child in _descendants(session, shape.id):
                updates[child.id] = replace(child, x=max(0, child.x + dx), y=max(0, child.y + dy))
        session.replace_shapes(updates, f"move_relative {shape.id}")
        return {"ok": True, "moved": sorted(updates)}

    def set_style(args: dict):
        shape = session.shape(str(args.get("id")))
        prop = str(args.get("prop", ""))
        value = args.get("value")
        if prop not in STYLE_ENUMS:
            raise ToolError(f"unknown style prop {prop!r}; one of {', '.join(sorted(STYLE_ENUMS))}")
        if value not in STYLE_ENUMS[prop]:
            raise ToolError(f"{value!r} is outside the supported {prop} palette")
        props = {**shape.props, prop: value}
        session.replace_shapes({shape.id: replace(shape, props=props)},
                               f"set_style {shape.id}.{prop}")
        return {"ok": True, "id": shape.id, prop: value}

    def set_text_align(args: dict):
        shape = session.shape(str(args.get("id")))
        align_value = args.get("align")
        if align_value not in ALIGNS:
            raise ToolError(f"align must be one of {', '.join(ALIGNS)}")
        props = {**shape.props, "align": align_value}
        session.replace_shapes({shape.id: replace(shape, props=props)},
                               f"set_text_align {shape.id}")
        return {"ok": True, "id": shape.id, "align": align_value}

    def set_font(args: dict):
        shape = session.shape(str(args.get("id")))
        font = args.get("font")
        if font not in FONTS:
            raise ToolError(f"font must be one of {', '.join(FONTS)}")
        props = {**shape.props, "font": font}
        session.replace_shapes({shape.id: replace(shape, props=props)}, f"set_font {shape.id}")
        return {"ok": True, "id": shape.id, "font": font}

    def fit_group_bounds(args: dict):
        frame = session.shape(str(args.get("id")))
        if frame.kind != "frame":
            raise ToolError(f"{frame.id!r} is not a frame")
        padding = _as_int(args.get("padding", geometry.PADDING), "padding")
        direct = [s for s in session.manifest.shapes if s.parent == frame.id]
        new_frame, new_children = geometry.fit_group(frame, direct, padding)
        updates = {new_frame.id: new_frame}
        dx = dy = 0
        if direct:
            dx, dy = new_children[0].x - direct[0].x, new_children[0].y - direct[0].y
        for child in new_children:
            updates[child.id] = child
        if dx or dy:
            direct_ids = {c.id for c in direct}
            for shape in _descendants(session, frame.id):
                if shape.id not in direct_ids:
                    updates[shape.id] = replace(shape, x=shape.x + dx, y=shape.y + dy)
        session.replace_shapes(updates, f"fit_group_bounds {frame.id}")
        return {"ok": True, "frame": frame.id, "children": len(direct)}

    def layout_group(args: dict):
        frame = session.shape(str(args.get("id")))
        if frame.kind != "frame":
            raise ToolError(f"{frame.id!r} is not a frame")
        direction = args.get("direction", "column")
        if direction not in ("row", "column"):
            raise ToolError("direction must be 'row' or 'column'")
        gap = _as_int(args.get("gap", 24), "gap")
        direct = [s for s in session.manifest.shapes
                  if s.parent == frame.id and s.kind != "arrow"]
        if not direct:
            return {"ok": True, "frame": frame.id, "children": 0}
        axis = "x" if direction == "row" else "y"
        direct.sort(key=lambda s: (getattr(s, axis), s.id))
        cursor = getattr(direct[0], axis)
        updates: dict[str, ShapeRecord] = {}
        for shape in direct:
            delta = cursor - getattr(shape, axis)
            if delta:
                updates[shape.id] = replace(shape, **{axis: cursor})
                for child in _descendants(session, shape.id):
                    moved = updates.get(child.id, child)
                    updates[child.id] = replace(moved, **{axis: getattr(moved, axis) + delta})
            box = geometry.shape_bounds(updates.get(shape.id, shape))
            cursor = (box.right if axis == "x" else box.bottom) + gap
        session.replace_shapes(updates, f"layout_group {frame.id}")
        return fit_group_bounds({"id": frame.id})

    def reroute_edge(args: dict):
        shape = session.shape(str(args.get("id")))
        if shape.kind != "arrow":
            raise ToolError(f"{shape.id!r} is not an arrow")
        props = copy.deepcopy(shape.props)
        for key, arg in (("start", "startAnchor"), ("end", "endAnchor")):
            anchor = args.get(arg)
            if anchor is None:
                continue
            if "boundTo" not in props[key]:
                raise ToolError(f"{key} endpoint is a free point; anchors need a bound endpoint")
            props[key]["anchor"] = [float(anchor[0]), float(anchor[1])]
        session.replace_shapes({shape.id: replace(shape, props=props)},
                               f"reroute_edge {shape.id}")
        return {"ok": True, "id": shape.id}

    def resolve_icon_overlap(args: dict):
        shape = session.shape(str(args.get("id")))
        if shape.kind != "geo" or not shape.props.get("icon"):
            raise ToolError(f"{shape.id!r} has no icon to resolve")
        est_w, _ = geometry.estimate_size(
            shape.props["text"], shape.props["font"], shape.props["size"], True)
        if shape.props["w"] >= est_w:
            return {"ok": True, "id": shape.id, "changed": False}
        props = {**shape.props, "w": est_w}
        session.replace_shapes({shape.id: replace(shape, props=props)},
                               f"resolve_icon_overlap {shape.id}")
        return {"ok": True, "id": shape.id, "changed": True, "w": est_w}

    def resize_to_fit_text(args: dict):
        shape = session.shape(str(args.get("id")))
        if shape.kind != "geo":
            raise ToolError("resize_to_fit_text only applies to geo shapes")
        w, h = geometry.estimate_size(
            shape.props["text"], shape.props["font"], shape.props["size"],
            bool(shape.props.get("icon")))
        props = {**shape.props, "w": max(shape.props["w"], w), "h": max(shape.props["h"], h)}
        session.replace_shapes({shape.id: replace(shape, props=props)},
                               f"resize_to_fit_text {shape.id}")
        return {"ok": True, "id": shape.id, "w": props["w"], "h": props["h"]}

    # Entity governance
    registry.register("load_manifest", load_manifest)
    registry.register("save_manifest", save_manifest)
    registry.register("search_manifest", search_manifest)
    registry.register("update_shape", update_shape)
    registry.register("set_opacity", set_opacity)
    registry.register("set_rotation", set_rotation)
    # Spatial alignment
    registry.register("align_shapes", align_shapes)
    registry.register("distribute_shapes", distribute_shapes)
    registry.register("move_relative", move_relative)
    # Aesthetic calibration
    registry.register("set_style", set_style)
    registry.register("set_text_align", set_text_align)
    registry.register("set_font", set_font)
    # Relational optimization
    registry.register("fit_group_bounds", fit_group_bounds)
    registry.register("layout_group", layout_group)
    registry.register("reroute_edge", reroute_edge)
    # Constraint resolution
    registry.register("resolve_icon_overlap", resolve_icon_overlap)
    registry.register("resize_to_fit_text", resize_to_fit_text)
    return registry


def manifest_json(session: ManifestSession) -> str:
    return serialize_manifest(session.manifest)
