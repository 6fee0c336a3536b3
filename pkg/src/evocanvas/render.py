"""Headless deterministic SVG rendering of a manifest.

The renderer is the perception substrate for the refinement loop and the
export path for the CLI/service, so its output must be byte-identical for
identical input. Text is laid out with the same glyph-advance tables the
size estimator uses (emitted via per-line ``textLength``), which keeps the
renderer's geometry in agreement with what the layout planner assumed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from xml.sax.saxutils import escape, quoteattr

from . import geometry
from .geometry import BoundingBox
from .schema import DiagramManifest, SchemaError, ShapeRecord, validate

MARGIN = 32

# Stroke palette, one fixed hue per supported color name.
PALETTE = {
    "black": "#1d1d1d",
    "grey": "#9fa8b2",
    "light-violet": "#e085f4",
    "violet": "#ae3ec9",
    "blue": "#4263eb",
    "light-blue": "#4dabf7",
    "yellow": "#f1ac4b",
    "orange": "#f76707",
    "green": "#099268",
    "light-green": "#40c057",
    "light-red": "#ff8787",
    "red": "#e03131",
    "white": "#f8f9fa",
}

# Light tints used when fill style is "solid".
SOLID_FILL = {
    "black": "#e8e8e8",
    "grey": "#eceef0",
    "light-violet": "#f5eafa",
    "violet": "#ecdcf2",
    "blue": "#dce1f8",
    "light-blue": "#ddedfa",
    "yellow": "#f9f0e6",
    "orange": "#fae9d8",
    "green": "#d3e9e3",
    "light-green": "#dbf0e0",
    "light-red": "#f9e2e2",
    "red": "#f0d2d2",
    "white": "#ffffff",
}

STROKE_WIDTH = {"s": 2, "m": 3.5, "l": 5, "xl": 10}
DASH_ARRAY = {"draw": None, "solid": None, "dashed": "8 4", "dotted": "2 4"}
FONT_FAMILY = {
    "draw": "'Segoe Print', 'Comic Sans MS', cursive",
    "sans": "'Helvetica Neue', Arial, sans-serif",
    "serif": "Georgia, 'Times New Roman', serif",
    "mono": "'Courier New', Menlo, monospace",
}
FRAME_TITLE_PX = 12
BASELINE_FACTOR = 0.75


class InvalidManifest(ValueError):
    def __init__(self, violations):
        self.violations = violations
        super().__init__(f"manifest fails validation with {len(violations)} violation(s)")


@dataclass
class RenderedArtifact:
    svg: str
    view_box: BoundingBox
    shape_anchors: dict[str, BoundingBox]


def _fmt(v: float | int) -> str:
    if isinstance(v, int):
        return str(v)
    r = round(v, 2)
    if r == int(r):
        return str(int(r))
    return f"{r:.2f}".rstrip("0").rstrip(".")


def _lerp(p0: tuple[float, float], p1: tuple[float, float], t: float) -> tuple[float, float]:
    return (p0[0] + (p1[0] - p0[0]) * t, p0[1] + (p1[1] - p0[1]) * t)


def _segment_box_range(p0, p1, box: BoundingBox) -> tuple[float, float] | None:
    """Liang-Barsky: parameter range of segment p0->p1 inside box."""
    t0, t1 = 0.0, 1.0
    dx, dy = p1[0] - p0[0], p1[1] - p0[1]
    for p, q in (
        (-dx, p0[0] - box.x),
        (dx, box.right - p0[0]),
        (-dy, p0[1] - box.y),
        (dy, box.bottom - p0[1]),
    ):
        if p == 0:
            if q < 0:
                return None
            continue
        t = q / p
        if p < 0:
            t0 = max(t0, t)
        else:
            t1 = min(t1, t)
    if t0 > t1:
        return None
    return (t0, t1)


def _polygon_points(geo: str, box: BoundingBox) -> list[tuple[float, float]]:
    x, y, w, h = box.x, box.y, box.w, box.h
    cx, cy = x + w / 2, y + h / 2

    def rel(points):
        return [(x + px * w, y + py * h) for px, py in points]

    if geo == "triangle":
        return rel([(0.5, 0), (1, 1), (0, 1)])
    if geo == "diamond":
        return rel([(0.5, 0), (1, 0.5), (0.5, 1), (0, 0.5)])
    if geo in ("pentagon", "hexagon", "octagon"):
        sides = {"pentagon": 5, "hexagon": 6, "octagon": 8}[geo]
        phase = -math.pi / 2 if sides != 6 else 0.0
        pts = []
        for k in range(sides):
            a = phase + 2 * math.pi * k / sides
            pts.append((cx + math.cos(a) * w / 2, cy + math.sin(a) * h / 2))
        return pts
    if geo == "star":
        pts = []
        for k in range(10):
            a = -math.pi / 2 + math.pi * k / 5
            r = 0.5 if k % 2 == 0 else 0.2
            pts.append((cx + math.cos(a) * w * r, cy + math.sin(a) * h * r))
        return pts
    if geo in ("arrowLeft", "arrowRight", "arrowUp", "arrowDown"):
        stem, head = 0.30, 0.45
        lo, hi = 0.5 - stem / 2, 0.5 + stem / 2
        base = [
            (0, lo), (1 - head, lo), (1 - head, 0), (1, 0.5),
            (1 - head, 1), (1 - head, hi), (0, hi),
        ]
        if geo == "arrowRight":
            pts = base
        elif geo == "arrowLeft":
            pts = [(1 - px, py) for px, py in base]
        elif geo == "arrowDown":
            pts = [(py, px) for px, py in base]
        else:  # arrowUp
            pts = [(py, 1 - px) for px, py in base]
        return rel(pts)
    return rel([(0, 0), (1, 0), (1, 1), (0, 1)])


def _cloud_path(box: BoundingBox) -> str:
    """Scalloped blob: quadratic arcs bulging outward between points on the
    inscribed ellipse."""
    cx, cy = box.x + box.w / 2, box.y + box.h / 2
    rx, ry = box.w / 2, box.h / 2
    n = 8
    pts = [(cx + rx * 0.88 * math.cos(2 * math.pi * k / n - math.pi / 2),
            cy + ry * 0.88 * math.sin(2 * math.pi * k / n - math.pi / 2)) for k in range(n)]
    parts = [f"M {_fmt(pts[0][0])} {_fmt(pts[0][1])}"]
    for k in range(n):
        a, b = pts[k], pts[(k + 1) % n]
        mx, my = (a[0] + b[0]) / 2, (a[1] + b[1]) / 2
        ang = math.atan2(my - cy, mx - cx)
        qx, qy = cx + (rx * 1.22) * math.cos(ang), cy + (ry * 1.22) * math.sin(ang)
        parts.append(f"Q {_fmt(qx)} {_fmt(qy)} {_fmt(b[0])} {_fmt(b[1])}")
    parts.append("Z")
    return " ".join(parts)


def _fill_attrs(fill: str, color: str) -> str:
    if fill == "none":
        return ' fill="none"'
    if fill == "semi":
        return f' fill="{PALETTE[color]}" fill-opacity="0.2"'
    if fill == "solid":
        return f' fill="{SOLID_FILL[color]}"'
    return f' fill="url(#hatch-{color})"'


def _stroke_attrs(color: str, dash: str, size: str) -> str:
    out = f' stroke="{PALETTE[color]}" stroke-width="{_fmt(STROKE_WIDTH[size])}"'
    arr = DASH_ARRAY[dash]
    if arr:
        out += f' stroke-dasharray="{arr}"'
    return out + ' stroke-linejoin="round" stroke-linecap="round"'


def _text_lines(
    out: list[str],
    lines: list[str],
    font: str,
    size: str,
    color: str,
    anchor_x: float,
    top: float,
    text_anchor: str,
) -> None:
    px = geometry.FONT_PX[size]
    lh = geometry.line_height(size)
    cw = geometry.glyph_width(font, size)
    for i, line in enumerate(lines):
        baseline = top + i * lh + BASELINE_FACTOR * lh
        out.append(
            f'<text x="{_fmt(anchor_x)}" y="{_fmt(baseline)}" font-family={quoteattr(FONT_FAMILY[font])} '
            f'font-size="{px}" fill="{PALETTE[color]}" text-anchor="{text_anchor}" '
            f'textLength="{_fmt(len(line) * cw)}">{escape(line)}</text>'
        )


def _geo_text(out: list[str], shape: ShapeRecord, box: BoundingBox) -> None:
    props = shape.props
    text = props["text"]
    if not text.strip():
        return
    pad = geometry.PADDING
    icon_shift = geometry.ICON_SLOT + geometry.ICON_GAP if props.get("icon") else 0
    content_w = max(box.w - 2 * pad - icon_shift, 8)
    lines = geometry.wrap_text(text, props["font"], props["size"], content_w)
    if not lines:
        return
    lh = geometry.line_height(props["size"])
    top = box.y + box.h / 2 - len(lines) * lh / 2
    align = props.get("align", "middle")
    left = box.x + pad + icon_shift
    if align == "start":
        _text_lines(out, lines, props["font"], props["size"], props["color"], left, top, "start")
    elif align == "end":
        _text_lines(out, lines, props["font"], props["size"], props["color"],
                    box.x + box.w - pad, top, "end")
    else:
        _text_lines(out, lines, props["font"], props["size"], props["color"],
                    box.x + icon_shift / 2 + box.w / 2, top, "middle")


def _render_geo(out: list[str], shape: ShapeRecord, box: BoundingBox) -> None:
    props = shape.props
    geo = props["geo"]
    paint = _fill_attrs(props["fill"], props["color"]) + _stroke_attrs(
        props["color"], props["dash"], props["size"])
    if geo == "rectangle":
        out.append(f'<rect x="{box.x}" y="{box.y}" width="{box.w}" height="{box.h}"{paint}/>')
    elif geo == "ellipse":
        out.append(f'<ellipse cx="{_fmt(box.x + box.w / 2)}" cy="{_fmt(box.y + box.h / 2)}" '
                   f'rx="{_fmt(box.w / 2)}" ry="{_fmt(box.h / 2)}"{paint}/>')
    elif geo == "cloud":
        out.append(f'<path d="{_cloud_path(box)}"{paint}/>')
    else:
        pts = " ".join(f"{_fmt(px)},{_fmt(py)}" for px, py in _polygon_points(geo, box))
        out.append(f'<polygon points="{pts}"{paint}/>')
    if props.get("icon"):
        ix, iy = box.x + geometry.PADDING // 2, box.y + box.h / 2 - geometry.ICON_SLOT / 2
        out.append(f'<rect x="{_fmt(ix)}" y="{_fmt(iy)}" width="{geometry.ICON_SLOT}" '
                   f'height="{geometry.ICON_SLOT}" rx="4" fill="none" '
                   f'stroke="{PALETTE[props["color"]]}" stroke-width="1.5" '
                   f'data-icon={quoteattr(props["icon"])}/>')
    _geo_text(out, shape, box)


def _render_frame(out: list[str], shape: ShapeRecord, box: BoundingBox) -> None:
    color = shape.props["color"]
    out.append(f'<rect x="{box.x}" y="{box.y}" width="{box.w}" height="{box.h}" '
               f'fill="#ffffff" fill-opacity="0.5" stroke="{PALETTE[color]}" '
               f'stroke-width="1.5" rx="4"/>')
    title = shape.props["text"]
    if title.strip():
        out.append(f'<text x="{_fmt(box.x + 4)}" y="{_fmt(box.y - 6)}" '
                   f'font-family={quoteattr(FONT_FAMILY["sans"])} font-size="{FRAME_TITLE_PX}" '
                   f'fill="{PALETTE[color]}" text-anchor="start">{escape(title)}</text>')


def _render_text_shape(out: list[str], shape: ShapeRecord, box: BoundingBox) -> None:
    props = shape.props
    content_w = max(box.w - 2 * geometry.PADDING, 8)
    lines = geometry.wrap_text(props["text"], props["font"], props["size"], content_w)
    if not lines:
        return
    align = props["align"]
    if align == "start":
        anchor_x, text_anchor = box.x + geometry.PADDING, "start"
    elif align == "end":
        anchor_x, text_anchor = box.x + box.w - geometry.PADDING, "end"
    else:
        anchor_x, text_anchor = box.x + box.w / 2, "middle"
    _text_lines(out, lines, props["font"], props["size"], props["color"],
                anchor_x, box.y + geometry.PADDING, text_anchor)


def _endpoint_raw(endpoint: dict, shapes: dict[str, ShapeRecord]) -> tuple[float, float]:
    if "point" in endpoint:
        return (float(endpoint["point"][0]), float(endpoint["point"][1]))
    target = geometry.shape_bounds(shapes[endpoint["boundTo"]])
    u, v = endpoint.get("anchor", [0.5, 0.5])
    return (target.x + u * target.w, target.y + v * target.h)


def _arrow_points(shape: ShapeRecord, shapes: dict[str, ShapeRecord]):
    start, end = shape.props["start"], shape.props["end"]
    p0 = _endpoint_raw(start, shapes)
    p1 = _endpoint_raw(end, shapes)
    t_start, t_end = 0.0, 1.0
    if "boundTo" in start:
        rng = _segment_box_range(p0, p1, geometry.shape_bounds(shapes[start["boundTo"]]))
        if rng is not None:
            t_start = rng[1]
    if "boundTo" in end:
        rng = _segment_box_range(p0, p1, geometry.shape_bounds(shapes[end["boundTo"]]))
        if rng is not None:
            t_end = rng[0]
    if not t_start < t_end:
        t_start, t_end = 0.0, 1.0
    return _lerp(p0, p1, t_start), _lerp(p0, p1, t_end)


def _render_arrow(out: list[str], shape: ShapeRecord, shapes: dict[str, ShapeRecord]) -> tuple:
    props = shape.props
    a, b = _arrow_points(shape, shapes)
    color = props["color"]
    attrs = _stroke_attrs(color, props["dash"], props["size"]) + ' fill="none"'
    markers = ""
    if props["arrowheadEnd"] == "arrow":
        markers += f' marker-end="url(#ah-{color})"'
    if props["arrowheadStart"] == "arrow":
        markers += f' marker-start="url(#ahr-{color})"'
    out.append(f'<path d="M {_fmt(a[0])} {_fmt(a[1])} L {_fmt(b[0])} {_fmt(b[1])}"{attrs}{markers}/>')
    label = props["text"]
    if label.strip():
        mx, my = (a[0] + b[0]) / 2, (a[1] + b[1]) / 2
        px = geometry.FONT_PX[props["size"]]
        lw = len(label) * geometry.glyph_width(props["font"], props["size"])
        out.append(f'<rect x="{_fmt(mx - lw / 2 - 4)}" y="{_fmt(my - px / 2 - 3)}" '
                   f'width="{_fmt(lw + 8)}" height="{_fmt(px + 6)}" fill="#ffffff" '
                   f'fill-opacity="0.85" rx="3"/>')
        out.append(f'<text x="{_fmt(mx)}" y="{_fmt(my + px * 0.32)}" '
                   f'font-family={quoteattr(FONT_FAMILY[props["font"]])} font-size="{px}" '
                   f'fill="{PALETTE[color]}" text-anchor="middle" '
                   f'textLength="{_fmt(lw)}">{escape(label)}</text>')
    return a, b


def _arrow_anchor(a, b) -> BoundingBox:
    x0, x1 = sorted((a[0], b[0]))
    y0, y1 = sorted((a[1], b[1]))
    return BoundingBox(math.floor(x0), math.floor(y0),
                       math.ceil(x1) - math.floor(x0), math.ceil(y1) - math.floor(y0))


def _defs(manifest: DiagramManifest) -> list[str]:
    hatch_colors: set[str] = set()
    marker_colors: set[str] = set()
    rev_marker_colors: set[str] = set()
    for shape in manifest.shapes:
        if shape.kind == "geo" and shape.props.get("fill") == "pattern":
            hatch_colors.add(shape.props["color"])
        if shape.kind == "arrow":
            if shape.props.get("arrowheadEnd") == "arrow":
                marker_colors.add(shape.props["color"])
            if shape.props.get("arrowheadStart") == "arrow":
                rev_marker_colors.add(shape.props["color"])
    out: list[str] = []
    for color in sorted(hatch_colors):
        out.append(
            f'<pattern id="hatch-{color}" width="8" height="8" patternUnits="userSpaceOnUse" '
            f'patternTransform="rotate(45)"><line x1="0" y1="0" x2="0" y2="8" '
            f'stroke="{PALETTE[color]}" stroke-width="2"/></pattern>'
        )
    head = "M 0 0 L 8 4 L 0 8 Z"
    for color in sorted(marker_colors):
        out.append(f'<marker id="ah-{color}" markerWidth="8" markerHeight="8" refX="7" refY="4" '
                   f'orient="auto" markerUnits="strokeWidth"><path d="{head}" '
                   f'fill="{PALETTE[color]}"/></marker>')
    for color in sorted(rev_marker_colors):
        out.append(f'<marker id="ahr-{color}" markerWidth="8" markerHeight="8" refX="7" refY="4" '
                   f'orient="auto-start-reverse" markerUnits="strokeWidth"><path d="{head}" '
                   f'fill="{PALETTE[color]}"/></marker>')
    return out


def render(manifest: DiagramManifest) -> RenderedArtifact:
    """Render a valid manifest to SVG, shapes in z-order, deterministic to
    the byte. Anchors map each shape id to its rendered bounding box."""
    violations = validate(manifest)
    if violations:
        raise InvalidManifest(violations)
    ordered = sorted(manifest.shapes, key=lambda s: s.index)
    shapes = {s.id: s for s in ordered}

    anchors: dict[str, BoundingBox] = {}
    body: list[str] = []
    for shape in ordered:
        chunk: list[str] = []
        if shape.kind == "arrow":
            a, b = _render_arrow(chunk, shape, shapes)
            anchors[shape.id] = _arrow_anchor(a, b)
        else:
            box = geometry.shape_bounds(shape)
            if shape.kind == "geo":
                _render_geo(chunk, shape, box)
            elif shape.kind == "frame":
                _render_frame(chunk, shape, box)
            else:
                _render_text_shape(chunk, shape, box)
            anchors[shape.id] = box
        bounds = anchors[shape.id]
        attrs = f'id={quoteattr(shape.id)} data-bounds="{bounds.x} {bounds.y} {bounds.w} {bounds.h}"'
        if shape.opacity != 1.0:
            attrs += f' opacity="{_fmt(shape.opacity)}"'
        if shape.rotation and shape.kind != "arrow":
            cx, cy = bounds.x + bounds.w / 2, bounds.y + bounds.h / 2
            attrs += f' transform="rotate({shape.rotation} {_fmt(cx)} {_fmt(cy)})"'
        body.append(f"<g {attrs}>" + "".join(chunk) + "</g>")

    union = geometry.union_bounds(anchors.values()) or BoundingBox(MARGIN, MARGIN, 0, 0)
    vb = union.inflate(MARGIN)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="{vb.x} {vb.y} {vb.w} {vb.h}" '
        f'width="{vb.w}" height="{vb.h}" font-synthesis="none">'
    ]
    defs = _defs(manifest)
    if defs:
        parts.append("<defs>" + "".join(defs) + "</defs>")
    parts.append(f'<rect x="{vb.x}" y="{vb.y}" width="{vb.w}" height="{vb.h}" fill="#ffffff"/>')
    parts.extend(body)
    parts.append("</svg>")
    return RenderedArtifact(svg="\n".join(parts) + "\n", view_box=vb, shape_anchors=anchors)
