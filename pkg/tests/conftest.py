from __future__ import annotations

import random

import pytest

from evocanvas.agents import GenerationRequest, Pipeline
from evocanvas.fracindex import key_sequence
from evocanvas.gateway import Gateway
from evocanvas.playbook import PlaybookBackend, sample_content
from evocanvas.schema import (
    COLORS,
    DASHES,
    DiagramManifest,
    FILLS,
    FONTS,
    GEOS,
    SIZES,
    ShapeRecord,
    canonicalize,
)
from evocanvas.taxonomy import DIAGRAM_TYPES


def make_geo(sid: str, index: str, x: int, y: int, w: int = 100, h: int = 60,
             rng: random.Random | None = None, parent: str | None = None,
             text: str = "node") -> ShapeRecord:
    pick = rng.choice if rng else (lambda seq: seq[0])
    return ShapeRecord(
        id=sid, kind="geo", x=x, y=y, rotation=0, index=index, parent=parent,
        props={
            "geo": pick(GEOS), "w": w, "h": h, "color": pick(COLORS), "fill": pick(FILLS),
            "dash": pick(DASHES), "size": pick(SIZES), "font": pick(FONTS),
            "text": text, "align": "middle",
        },
    )


def make_frame(sid: str, index: str, x: int, y: int, w: int, h: int,
               parent: str | None = None) -> ShapeRecord:
    return ShapeRecord(id=sid, kind="frame", x=x, y=y, rotation=0, index=index,
                       parent=parent, props={"w": w, "h": h, "text": sid, "color": "grey"})


def make_arrow(sid: str, index: str, start: dict, end: dict, text: str = "") -> ShapeRecord:
    return ShapeRecord(
        id=sid, kind="arrow", x=0, y=0, rotation=0, index=index,
        props={"start": start, "end": end, "color": "grey", "dash": "solid", "size": "s",
               "font": "sans", "text": text, "arrowheadStart": "none",
               "arrowheadEnd": "arrow"},
    )


def random_manifest(rng: random.Random, n_shapes: int = 12,
                    diagram_type: str = "flowchart") -> DiagramManifest:
    """Valid manifest with frames, geos, texts, and bound/free arrows."""
    keys = key_sequence(n_shapes)
    shapes: list[ShapeRecord] = []
    frame_ids: list[str] = []
    geo_ids: list[str] = []
    for i in range(n_shapes):
        sid = f"s{i}"
        kind = rng.choice(["geo", "geo", "geo", "frame", "text", "arrow"])
        if kind == "frame":
            shapes.append(make_frame(sid, keys[i], rng.randrange(0, 400),
                                     rng.randrange(0, 400), rng.randrange(80, 300),
                                     rng.randrange(80, 300),
                                     parent=rng.choice(frame_ids) if frame_ids and rng.random() < 0.3 else None))
            frame_ids.append(sid)
        elif kind == "text":
            shapes.append(ShapeRecord(
                id=sid, kind="text", x=rng.randrange(0, 400), y=rng.randrange(0, 400),
                rotation=0, index=keys[i],
                props={"text": "label " * rng.randrange(1, 5), "color": rng.choice(COLORS),
                       "size": rng.choice(SIZES), "font": rng.choice(FONTS),
                       "align": rng.choice(("start", "middle", "end")),
                       "w": rng.randrange(60, 240)}))
        elif kind == "arrow":
            def endpoint():
                if geo_ids and rng.random() < 0.7:
                    return {"boundTo": rng.choice(geo_ids),
                            "anchor": [rng.choice([0.0, 0.25, 0.5, 1.0]), 0.5]}
                return {"point": [rng.randrange(0, 500), rng.randrange(0, 500)]}

            shapes.append(make_arrow(sid, keys[i], endpoint(), endpoint(),
                                     text=rng.choice(["", "flows"])))
        else:
            parent = rng.choice(frame_ids) if frame_ids and rng.random() < 0.3 else None
            shapes.append(make_geo(sid, keys[i], rng.randrange(0, 400),
                                   rng.randrange(0, 400), rng.randrange(40, 200),
                                   rng.randrange(40, 160), rng=rng, parent=parent,
                                   text=rng.choice(["node", "a longer node label"])))
            geo_ids.append(sid)
    return canonicalize(DiagramManifest(
        version=1, shapes=shapes,
        meta={"diagramType": diagram_type, "domain": "", "title": "random"}))


@pytest.fixture
def playbook_pipeline():
    backend = PlaybookBackend()
    return Pipeline(Gateway(backend), use_raster=False), backend


@pytest.fixture
def flowchart_manifest(playbook_pipeline):
    pipeline, _ = playbook_pipeline
    request = GenerationRequest(content=sample_content("flowchart"),
                                diagram_type_override="flowchart")
    manifest, _ = pipeline.generate(request)
    return manifest


def all_type_requests():
    return [GenerationRequest(content=sample_content(dt), diagram_type_override=dt)
            for dt in DIAGRAM_TYPES]
