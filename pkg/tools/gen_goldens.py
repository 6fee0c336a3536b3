"""Regenerate the frozen render corpus: one manifest + SVG per diagram type,
produced by the deterministic mock pipeline.

Run from the repo root:  python tools/gen_goldens.py
Tests compare live renders against these files byte-for-byte, so regenerate
only when the renderer's output format intentionally changes.
"""

from __future__ import annotations

import pathlib
import sys

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parents[1] / "src"))

from evocanvas.agents import GenerationRequest, Pipeline
from evocanvas.gateway import Gateway
from evocanvas.playbook import PlaybookBackend, sample_content
from evocanvas.render import render
from evocanvas.schema import serialize_manifest
from evocanvas.taxonomy import DIAGRAM_TYPES

GOLDEN_DIR = pathlib.Path(__file__).resolve().parents[1] / "tests" / "golden"


def main() -> None:
    GOLDEN_DIR.mkdir(parents=True, exist_ok=True)
    for diagram_type in DIAGRAM_TYPES:
        pipeline = Pipeline(Gateway(PlaybookBackend()), use_raster=False)
        request = GenerationRequest(content=sample_content(diagram_type),
                                    diagram_type_override=diagram_type)
        manifest, _ = pipeline.generate(request)
        (GOLDEN_DIR / f"{diagram_type}.json").write_text(
            serialize_manifest(manifest), encoding="utf-8")
        (GOLDEN_DIR / f"{diagram_type}.svg").write_text(
            render(manifest).svg, encoding="utf-8")
        print(f"wrote {diagram_type}: {len(manifest.shapes)} shapes")


if __name__ == "__main__":
    main()
