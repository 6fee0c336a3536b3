"""Closed taxonomies shared across the document model, memory, and benchmark.

21 diagram types crossed with 30 vertical domains. Both sets are closed:
anything outside them is rejected at parse/load time.
"""

from __future__ import annotations

DIAGRAM_TYPES: tuple[str, ...] = (
    "architecture_diagram",
    "class_diagram",
    "concept_map",
    "data_flow_diagram",
    "entity_relationship",
    "fishbone_diagram",
    "flowchart",
    "funnel_chart",
    "gantt_chart",
    "hybrid_diagram",
    "matrix_chart",
    "mind_map",
    "org_chart",
    "pyramid_chart",
    "sequence_diagram",
    "state_diagram",
    "swimlane_diagram",
    "swot_analysis",
    "timeline",
    "tree_diagram",
    "venn_diagram",
)

# Vertical domains grouped by discipline; the flat set is the closed taxonomy.
DOMAIN_GROUPS: dict[str, tuple[str, ...]] = {
    "art_and_design": ("art", "design", "music", "art_theory"),
    "business": ("accounting", "economics", "finance", "management", "marketing"),
    "science": ("biology", "chemistry", "geography", "math", "physics"),
    "health_and_medicine": (
        "basic_medical_science",
        "clinical_medicine",
        "diagnostics",
        "pharmacy",
        "public_health",
    ),
    "humanities": ("history", "literature", "psychology", "sociology"),
    "tech_and_engineering": (
        "agriculture",
        "architecture",
        "computer_science",
        "electronics",
        "energy",
        "materials",
        "mechanical_engineering",
    ),
}

DOMAINS: tuple[str, ...] = tuple(d for group in DOMAIN_GROUPS.values() for d in group)

UNIVERSAL = "universal"


def is_diagram_type(value: object) -> bool:
    return value in DIAGRAM_TYPES


def is_domain(value: object) -> bool:
    return value in DOMAINS
