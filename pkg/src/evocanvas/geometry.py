"""Deterministic geometric tooling: size estimation, overlap detection,
alignment/distribution, group fitting, and canvas partitioning.

Everything here is a pure function over value types. The text estimator is
the single source of truth for how much space wrapped text occupies; the
renderer reuses the same tables so perception and planning agree.

Rounding policy: fractional positions floor, fractional sizes ceil. Any
operation that would move a shape to a negative coordinate instead shifts
the whole affected set so the minimum lands on zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

# Text metrics. Frozen constants so estimates are exactly reproducible;
# they approximate a hand-drawn-style canvas font, not a real rasterizer.
FONT_PX = {"s": 16, "m": 20, "l": 28, "xl": 36}
LINE_HEIGHT_FACTOR = 1.35
GLYPH_WIDTH_FACTOR = {"draw": 0.60, "sans": 0.60, "serif": 0.60, "mono": 0.62}
PADDING = 16
ICON_SLOT = 24
ICON_GAP = 8
DEFAULT_WRAP_CONTENT_WIDTH = 280
MIN_BOX = 48

ALIGN_MODES = ("left", "right", "top", "bottom", "center-x", "center-y")


class TooFew(ValueError):
    """Not enough shapes for the requested operation."""


class Infeasible(ValueError):
    """Region cannot hold the requested partitions."""


@dataclass(frozen=True)
class BoundingBox:
    x: int
    y: int
    w: int
    h: int

    @property
    def right(self) -> int:
        return self.x + self.w

    @property
    def bottom(self) -> int:
        return self.y + self.h

    @property
    def area(self) -> int:
        return self.w * self.h

    def union(self, other: "BoundingBox") -> "BoundingBox":
        x = min(self.x, other.x)
        y = min(self.y, other.y)
        return BoundingBox(x, y, max(self.right, other.right) - x, max(self.bottom, other.bottom) - y)

    def inflate(self, amount: int) -> "BoundingBox":
        return BoundingBox(self.x - amount, self.y - amount, self.w + 2 * amount, self.h + 2 * amount)


def glyph_width(font: str, size_class: str) -> float:
    return FONT_PX[size_class] * GLYPH_WIDTH_FACTOR[font]


def line_height(size_class: str) -> float:
    return FONT_PX[size_class] * LINE_HEIGHT_FACTOR


def wrap_text(text: str, font: str, size_class: str, content_width: float) -> list[str]:
    """Greedy word-wrap. All glyphs advance by the same per-font width, so a
    line's width is simply ``len(line) * glyph_width``. Explicit newlines
    force breaks; words longer than the limit are split at glyph boundaries.
    """
    cw = glyph_width(font, size_class)
    max_chars = max(1, int(content_width // cw))
    lines: list[str] = []
    for paragraph in text.split("\n"):
        words = paragraph.split()
        if not words:
            continue
        current = ""
        for word in words:
            candidate = f"{current} {word}" if current else word
            if len(candidate) <= max_chars:
                current = candidate
                continue
            if current:
                lines.append(current)
                current = ""
            while len(word) > max_chars:
                lines.append(word[:max_chars])
                word = word[max_chars:]
            current = word
        if current:
            lines.append(current)
    return lines


def estimate_size(
    text: str,
    font: str = "sans",
    size_class: str = "m",
    has_icon: bool = False,
    max_width: int | None = None,
) -> tuple[int, int]:
    """Estimate the integer box (w, h) a text node needs.

    Width is the ceiled longest wrapped line plus padding on both sides,
    plus an icon slot when requested; height is the ceiled line stack plus
    padding. Empty text yields the 48x48 minimum box.
    """
    cw = glyph_width(font, size_class)
    if max_width is not None and max_width < cw + PADDING:
        raise ValueError(f"max_width {max_width} below one glyph plus padding")
    if not text.strip():
        return (MIN_BOX, MIN_BOX)
    content_width = float(max_width - 2 * PADDING) if max_width is not None else float(DEFAULT_WRAP_CONTENT_WIDTH)
    lines = wrap_text(text, font, size_class, content_width)
    widest = max(len(line) for line in lines) * cw
    w = math.ceil(widest) + 2 * PADDING
    if has_icon:
        w += ICON_SLOT + ICON_GAP
    h = math.ceil(len(lines) * line_height(size_class)) + 2 * PADDING
    return (w, h)


def overlap_area(a: BoundingBox, b: BoundingBox) -> int:
    dx = min(a.right, b.right) - max(a.x, b.x)
    dy = min(a.bottom, b.bottom) - max(a.y, b.y)
    if dx <= 0 or dy <= 0:
        return 0
    return dx * dy


def shape_bounds(shape) -> BoundingBox | None:
    """Rendered bounding box of a shape record; None for arrows, whose
    geometry is derived from their endpoints."""
    if shape.kind == "arrow":
        return None
    if shape.kind == "text":
        w = shape.props["w"]
        cw = glyph_width(shape.props["font"], shape.props["size"])
        wrap_at = max(w, math.ceil(cw + PADDING))
        _, h = estimate_size(
            shape.props["text"], shape.props["font"], shape.props["size"], False, max_width=wrap_at
        )
        return BoundingBox(shape.x, shape.y, w, h)
    return BoundingBox(shape.x, shape.y, shape.props["w"], shape.props["h"])


def _ancestors(manifest) -> dict[str, set[str]]:
    parents = {s.id: s.parent for s in manifest.shapes}
    out: dict[str, set[str]] = {}
    for sid in parents:
        chain: set[str] = set()
        cur = parents.get(sid)
        while cur is not None and cur not in chain:
            chain.add(cur)
            cur = parents.get(cur)
        out[sid] = chain
    return out


def collision_report(manifest) -> list[tuple[str, str, int]]:
    """All unordered pairs of non-arrow shapes with positive overlap, minus
    frame ancestor/descendant pairs (containment is intentional), sorted by
    overlap area descending."""
    boxed = [(s, shape_bounds(s)) for s in manifest.shapes if s.kind != "arrow"]
    ancestors = _ancestors(manifest)
    hits: list[tuple[str, str, int]] = []
    for i in range(len(boxed)):
        for j in range(i + 1, len(boxed)):
            a, abox = boxed[i]
            b, bbox = boxed[j]
            if a.id in ancestors[b.id] or b.id in ancestors[a.id]:
                continue
            area = overlap_area(abox, bbox)
            if area > 0:
                lo, hi = sorted((a.id, b.id))
                hits.append((lo, hi, area))
    hits.sort(key=lambda t: (-t[2], t[0], t[1]))
    return hits


def _require_boxes(shapes: Sequence) -> list[BoundingBox]:
    boxes = []
    for s in shapes:
        box = shape_bounds(s)
        if box is None:
            raise ValueError(f"shape {s.id} has no intrinsic bounds (arrows cannot be aligned)")
        boxes.append(box)
    return boxes


def _shift_nonnegative(shapes: list, axis: str) -> list:
    low = min(getattr(s, axis) for s in shapes)
    if low >= 0:
        return shapes
    return [replace(s, **{axis: getattr(s, axis) - low}) for s in shapes]


def align(shapes: Sequence, mode: str):
    """Align shapes so the named edge or center coordinate coincides.

    Center modes round toward the first shape's center (floor of the exact
    target); every shape moves along a single axis and keeps its size.
    """
    if mode not in ALIGN_MODES:
        raise ValueError(f"unknown align mode {mode!r}")
    if len(shapes) < 2:
        raise TooFew("align needs at least 2 shapes")
    boxes = _require_boxes(shapes)
    if mode == "left":
        target = min(b.x for b in boxes)
        moved = [replace(s, x=target) for s in shapes]
        axis = "x"
    elif mode == "right":
        target = max(b.right for b in boxes)
        moved = [replace(s, x=target - b.w) for s, b in zip(shapes, boxes)]
        axis = "x"
    elif mode == "top":
        target = min(b.y for b in boxes)
        moved = [replace(s, y=target) for s in shapes]
        axis = "y"
    elif mode == "bottom":
        target = max(b.bottom for b in boxes)
        moved = [replace(s, y=target - b.h) for s, b in zip(shapes, boxes)]
        axis = "y"
    elif mode == "center-x":
        center = boxes[0].x + boxes[0].w / 2
        moved = [replace(s, x=math.floor(center - b.w / 2)) for s, b in zip(shapes, boxes)]
        axis = "x"
    else:  # center-y
        center = boxes[0].y + boxes[0].h / 2
        moved = [replace(s, y=math.floor(center - b.h / 2)) for s, b in zip(shapes, boxes)]
        axis = "y"
    return _shift_nonnegative(moved, axis)


def distribute(shapes: Sequence, axis: str):
    """Equalize the gaps between consecutive boxes along ``axis``.

    Extreme shapes stay put; interior gaps differ by at most one unit
    (cumulative floor rounding) and sum exactly to the available space.
    """
    if axis not in ("x", "y"):
        raise ValueError(f"axis must be 'x' or 'y', got {axis!r}")
    if len(shapes) < 3:
        raise TooFew("distribute needs at least 3 shapes")
    boxes = _require_boxes(shapes)
    size_attr = "w" if axis == "x" else "h"
    order = sorted(range(len(shapes)), key=lambda i: (getattr(boxes[i], axis), shapes[i].id))
    first, last = order[0], order[-1]
    middles = order[1:-1]
    free = (
        getattr(boxes[last], axis)
        - (getattr(boxes[first], axis) + getattr(boxes[first], size_attr))
        - sum(getattr(boxes[m], size_attr) for m in middles)
    )
    n_gaps = len(order) - 1
    out = list(shapes)
    cursor = getattr(boxes[first], axis) + getattr(boxes[first], size_attr)
    consumed = 0
    for gap_index, m in enumerate(middles, start=1):
        cum = (gap_index * free) // n_gaps
        pos = cursor + (cum - consumed)
        out[m] = replace(shapes[m], **{axis: pos})
        consumed = cum
        cursor = pos + getattr(boxes[m], size_attr)
    return _shift_nonnegative(out, axis)


def fit_group(frame, children: Sequence, padding: int = PADDING):
    """Refit a frame to the union of its children plus padding.

    Returns ``(frame, children)``. Children keep their coordinates unless
    the padded frame would start at a negative coordinate, in which case
    frame and children shift together so the frame lands at zero.
    """
    child_boxes = [b for b in (shape_bounds(c) for c in children) if b is not None]
    if not child_boxes:
        return frame, list(children)
    union = child_boxes[0]
    for box in child_boxes[1:]:
        union = union.union(box)
    fitted = union.inflate(padding)
    dx = max(0, -fitted.x)
    dy = max(0, -fitted.y)
    new_frame = replace(
        frame,
        x=fitted.x + dx,
        y=fitted.y + dy,
        props={**frame.props, "w": fitted.w, "h": fitted.h},
    )
    if dx or dy:
        children = [replace(c, x=c.x + dx, y=c.y + dy) for c in children]
    else:
        children = list(children)
    return new_frame, children


def partition_canvas(
    region: BoundingBox,
    weights: Sequence[float],
    direction: str = "row",
    gap: int = 0,
) -> list[BoundingBox]:
    """Split a region into weighted sub-regions along one axis.

    Sizes use largest-remainder rounding so the partitions plus gaps tile
    the region extent exactly; ties go to the earlier partition.
    """
    if direction not in ("row", "column"):
        raise ValueError(f"direction must be 'row' or 'column', got {direction!r}")
    if not weights or any(w <= 0 for w in weights):
        raise ValueError("weights must be positive")
    n = len(weights)
    extent = region.w if direction == "row" else region.h
    if extent < (n - 1) * gap:
        raise Infeasible(f"region extent {extent} cannot hold {n - 1} gaps of {gap}")
    available = extent - (n - 1) * gap
    total = float(sum(weights))
    raw = [available * w / total for w in weights]
    sizes = [math.floor(r) for r in raw]
    leftover = available - sum(sizes)
    by_remainder = sorted(range(n), key=lambda i: (-(raw[i] - sizes[i]), i))
    for i in by_remainder[:leftover]:
        sizes[i] += 1
    out: list[BoundingBox] = []
    cursor = region.x if direction == "row" else region.y
    for size in sizes:
        if direction == "row":
            out.append(BoundingBox(cursor, region.y, size, region.h))
        else:
            out.append(BoundingBox(region.x, cursor, region.w, size))
        cursor += size + gap
    return out


def union_bounds(boxes: Iterable[BoundingBox]) -> BoundingBox | None:
    boxes = list(boxes)
    if not boxes:
        return None
    out = boxes[0]
    for box in boxes[1:]:
        out = out.union(box)
    return out
