"""Optional PNG rasterization of a manifest.

A lightweight re-draw of the same geometry the SVG renderer emits, meant as
the perception input for vision models. Pixel output is best-effort; the
binding contract is the image dimensions: ceil(viewBox * scale).
"""

from __future__ import annotations

import io
import math

from . import geometry, render
from .schema import DiagramManifest

try:
    from PIL import Image, ImageDraw

    _PIL = True
except ImportError:  # pragma: no cover - PIL is an optional capability
    _PIL = False


def raster_available() -> bool:
    return _PIL


def _hex_rgb(value: str) -> tuple[int, int, int]:
    value = value.lstrip("#")
    return tuple(int(value[i:i + 2], 16) for i in (0, 2, 4))


def _tint(color: str, fill: str) -> tuple[int, int, int] | None:
    if fill == "none":
        return None
    if fill == "solid":
        return _hex_rgb(render.SOLID_FILL[color])
    base = _hex_rgb(render.PALETTE[color])
    # semi/pattern: blend stroke color onto white at 20%.
    return tuple(int(255 * 0.8 + c * 0.2) for c in base)


def render_to_image(manifest: DiagramManifest, scale: float = 1.0) -> bytes:
    """Rasterize at the given scale; dimensions are ceil(viewBox * scale)."""
    if not _PIL:
        raise RuntimeError("rasterization unavailable: Pillow is not installed")
    if scale <= 0:
        raise ValueError("scale must be positive")
    art = render.render(manifest)
    vb = art.view_box
    size = (math.ceil(vb.w * scale), math.ceil(vb.h * scale))
    img = Image.new("RGB", size, (255, 255, 255))
    draw = ImageDraw.Draw(img)

    def tx(x: float, y: float) -> tuple[float, float]:
        return ((x - vb.x) * scale, (y - vb.y) * scale)

    ordered = sorted(manifest.shapes, key=lambda s: s.index)
    shapes = {s.id: s for s in ordered}
    for shape in ordered:
        if shape.kind == "arrow":
            a, b = render._arrow_points(shape, shapes)
            color = _hex_rgb(render.PALETTE[shape.props["color"]])
            width = max(1, round(render.STROKE_WIDTH[shape.props["size"]] * scale))
            draw.line([tx(*a), tx(*b)], fill=color, width=width)
            if shape.props["arrowheadEnd"] == "arrow":
                _head(draw, tx(*a), tx(*b), color, scale)
            if shape.props["arrowheadStart"] == "arrow":
                _head(draw, tx(*b), tx(*a), color, scale)
            continue
        box = geometry.shape_bounds(shape)
        p0, p1 = tx(box.x, box.y), tx(box.right, box.bottom)
        if shape.kind == "frame":
            draw.rectangle([p0, p1], outline=_hex_rgb(render.PALETTE[shape.props["color"]]), width=2)
            continue
        if shape.kind == "text":
            draw.text(p0, shape.props["text"], fill=_hex_rgb(render.PALETTE[shape.props["color"]]))
            continue
        color = _hex_rgb(render.PALETTE[shape.props["color"]])
        fill = _tint(shape.props["color"], shape.props["fill"])
        width = max(1, round(render.STROKE_WIDTH[shape.props["size"]] * scale))
        geo = shape.props["geo"]
        if geo == "ellipse":
            draw.ellipse([p0, p1], fill=fill, outline=color, width=width)
        elif geo in ("rectangle", "cloud"):
            draw.rectangle([p0, p1], fill=fill, outline=color, width=width)
        else:
            pts = [tx(px, py) for px, py in render._polygon_points(geo, box)]
            draw.polygon(pts, fill=fill, outline=color)
        text = shape.props["text"]
        if text.strip():
            tw = min(len(text), 40)
            anchor = tx(box.x + box.w / 2 - tw * 3, box.y + box.h / 2 - 5)
            draw.text(anchor, text[:40], fill=color)

    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def _head(draw, tail, tip, color, scale: float) -> None:
    ang = math.atan2(tip[1] - tail[1], tip[0] - tail[0])
    size = 8 * scale
    left = (tip[0] - size * math.cos(ang - 0.45), tip[1] - size * math.sin(ang - 0.45))
    right = (tip[0] - size * math.cos(ang + 0.45), tip[1] - size * math.sin(ang + 0.45))
    draw.polygon([tip, left, right], fill=color)
