"""Benchmark harness: dataset loading over the closed 21x30 taxonomy, the
ten-metric judge protocol (three dimensions, one judge exchange each),
judge-free structural self-checks, and score aggregation with CSV/JSON/
figure emitters.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

from . import geometry
from .gateway import Gateway, ModelRequest, first_json_object
from .prompts import JUDGE_SYSTEM, judge_user
from .render import RenderedArtifact
from .schema import DiagramManifest, validate
from .taxonomy import DIAGRAM_TYPES, DOMAINS

# Metric registry: dimension -> ordered metrics; per-metric rubric bullets
# feed the judge prompt for that dimension.
DIMENSIONS = ("content", "visual", "cognitive")
DIMENSION_METRICS: dict[str, tuple[str, ...]] = {
    "content": ("C_CF", "C_CL", "C_SR"),
    "visual": ("V_VA", "V_SC", "V_FC", "V_SB"),
    "cognitive": ("G_CE", "G_CA", "G_SE"),
}
ALL_METRICS: tuple[str, ...] = tuple(m for d in DIMENSIONS for m in DIMENSION_METRICS[d])

METRIC_RUBRIC: dict[str, tuple[str, list[str]]] = {
    "C_CF": ("Content Fidelity",
             ["factual consistency with the source", "hallucination rate",
              "evidence traceability"]),
    "C_CL": ("Concept Logic",
             ["edge correctness", "relation type accuracy", "self-consistency",
              "hierarchy rationality"]),
    "C_SR": ("Semantic Relevance",
             ["coverage of key concepts", "conciseness of node text", "context alignment"]),
    "V_VA": ("Visual Aesthetics",
             ["composition and whitespace", "harmony", "professionalism"]),
    "V_SC": ("Styling Consistency",
             ["font consistency", "line and shape consistency", "color theme consistency"]),
    "V_FC": ("Flow Coherence",
             ["main reading direction", "low path ambiguity", "key path trackability"]),
    "V_SB": ("Space Balance",
             ["spatial equilibrium", "density", "overlap and crossing"]),
    "G_CE": ("Cognitive Ease",
             ["subjective ease", "reading friction", "mental load"]),
    "G_CA": ("Comprehension Accuracy",
             ["factual question answering", "structural question answering",
              "interpretation consistency"]),
    "G_SE": ("Self-contained Explanation",
             ["self-containment", "narrative completeness", "misinterpretation risk"]),
}


class TaxonomyError(ValueError):
    def __init__(self, field_name: str, value: object, line: int):
        self.field = field_name
        self.value = value
        self.line = line
        super().__init__(f"line {line}: {field_name} value {value!r} outside the taxonomy")


class ReportIncomplete(RuntimeError):
    pass


@dataclass
class BenchSample:
    id: str
    diagram_type: str
    domain: str
    query: str
    content: str
    image_path: str | None = None

    def to_obj(self) -> dict:
        return {"id": self.id, "diagram_type": self.diagram_type, "domain": self.domain,
                "query": self.query, "content": self.content, "image_path": self.image_path}


@dataclass
class EvaluationReport:
    sample_id: str
    scores: dict[str, int]
    rationales: dict[str, str]
    judge_model: str
    clamped: list[str] = field(default_factory=list)

    def dimension_means(self) -> dict[str, float]:
        return {
            dim: sum(self.scores[m] for m in DIMENSION_METRICS[dim]) / len(DIMENSION_METRICS[dim])
            for dim in DIMENSIONS
        }

    def to_obj(self) -> dict:
        return {"sampleId": self.sample_id, "scores": dict(self.scores),
                "rationales": dict(self.rationales), "judgeModel": self.judge_model,
                "clamped": list(self.clamped),
                "dimensionMeans": self.dimension_means()}


def load_dataset(path: str, split: str | None = None) -> list[BenchSample]:
    """Parse a JSONL dataset, enforcing the closed type/domain taxonomy.
    split="test" keeps the first 10 samples of each diagram type in file
    order (when a type has fewer, all of them)."""
    samples: list[BenchSample] = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            dtype = obj.get("diagram_type")
            if dtype not in DIAGRAM_TYPES:
                raise TaxonomyError("diagram_type", dtype, line_no)
            domain = obj.get("domain")
            if domain not in DOMAINS:
                raise TaxonomyError("domain", domain, line_no)
            content = obj.get("content")
            if not isinstance(content, str) or not content.strip():
                raise TaxonomyError("content", content, line_no)
            samples.append(BenchSample(
                id=str(obj.get("id", f"sample{line_no}")), diagram_type=dtype, domain=domain,
                query=str(obj.get("query", "")), content=content,
                image_path=obj.get("image_path"),
            ))
    if split == "test":
        per_type: dict[str, int] = {}
        kept = []
        for sample in samples:
            seen = per_type.get(sample.diagram_type, 0)
            if seen < 10:
                kept.append(sample)
                per_type[sample.diagram_type] = seen + 1
        samples = kept
    elif split is not None:
        raise ValueError(f"unknown split {split!r}")
    return samples


def _parse_scores(payload: dict | None, metrics: tuple[str, ...]):
    """Returns (scores, rationales, missing, out_of_range)."""
    scores: dict[str, int] = {}
    rationales: dict[str, str] = {}
    missing: list[str] = []
    out_of_range: list[str] = []
    raw_scores = (payload or {}).get("scores") or {}
    raw_rationales = (payload or {}).get("rationales") or {}
    for metric in metrics:
        value = raw_scores.get(metric)
        if isinstance(value, bool) or not isinstance(value, int):
            missing.append(metric)
            continue
        if not 1 <= value <= 5:
            out_of_range.append(metric)
        scores[metric] = value
        rationales[metric] = str(raw_rationales.get(metric, ""))
    return scores, rationales, missing, out_of_range


def judge(gateway: Gateway, sample: BenchSample, artifact: RenderedArtifact,
          source_content: str, judge_model: str = "judge") -> EvaluationReport:
    """Score one rendered diagram: one structured exchange per dimension
    carrying that dimension's rubric. An out-of-range or missing score gets
    one re-ask; after that out-of-range clamps (flagged) and missing raises
    ReportIncomplete."""
    all_scores: dict[str, int] = {}
    all_rationales: dict[str, str] = {}
    clamped: list[str] = []
    for dim in DIMENSIONS:
        metrics = DIMENSION_METRICS[dim]
        rubric = {m: METRIC_RUBRIC[m][1] for m in metrics}
        user = judge_user(dim, rubric, sample.query, source_content, artifact.svg)
        messages = [{"role": "system", "content": JUDGE_SYSTEM},
                    {"role": "user", "content": user}]
        scores: dict[str, int] = {}
        rationales: dict[str, str] = {}
        missing: list[str] = list(metrics)
        out_of_range: list[str] = []
        for attempt in range(2):
            response = gateway.complete(ModelRequest(agent_role="judge", messages=messages))
            payload = first_json_object(response.text)
            scores, rationales, missing, out_of_range = _parse_scores(payload, metrics)
            if not missing and not out_of_range:
                break
            if attempt == 0:
                issues = [f"{m}: missing integer score" for m in missing]
                issues += [f"{m}: score outside 1-5" for m in out_of_range]
                messages = messages + [
                    {"role": "user",
                     "content": "Your scores were invalid:\n- " + "\n- ".join(issues)
                                + "\nRe-emit the JSON with integer scores from 1 to 5 "
                                  "for every metric."},
                ]
        if missing:
            raise ReportIncomplete(f"judge omitted {', '.join(missing)} for {sample.id}")
        for metric in out_of_range:
            scores[metric] = min(5, max(1, scores[metric]))
            clamped.append(metric)
        all_scores.update(scores)
        all_rationales.update(rationales)
    return EvaluationReport(sample_id=sample.id, scores=all_scores,
                            rationales=all_rationales, judge_model=judge_model,
                            clamped=clamped)


@dataclass
class SelfCheck:
    overlap_count: int
    dangling_arrow_count: int
    style_enum_violations: int
    orphan_node_count: int
    canvas_utilization: float

    def to_obj(self) -> dict:
        return {"overlapCount": self.overlap_count,
                "danglingArrowCount": self.dangling_arrow_count,
                "styleEnumViolations": self.style_enum_violations,
                "orphanNodeCount": self.orphan_node_count,
                "canvasUtilization": round(self.canvas_utilization, 4)}


def structural_selfcheck(manifest: DiagramManifest) -> SelfCheck:
    """Judge-free proxies computed straight from geometry and validation."""
    shape_ids = {s.id for s in manifest.shapes}
    referenced: set[str] = set()
    dangling = 0
    for shape in manifest.shapes:
        if shape.kind != "arrow":
            continue
        for end in ("start", "end"):
            endpoint = shape.props.get(end) or {}
            target = endpoint.get("boundTo")
            if target is None:
                continue
            if target in shape_ids:
                referenced.add(target)
            else:
                dangling += 1
    orphans = sum(
        1 for s in manifest.shapes
        if s.kind == "geo" and s.id not in referenced and s.parent is None
    )
    enum_violations = sum(1 for v in validate(manifest) if v.rule == "closed-enum")
    boxes = [b for b in (geometry.shape_bounds(s) for s in manifest.shapes) if b is not None]
    union = geometry.union_bounds(boxes)
    if union is None:
        utilization = 0.0
    else:
        view = union.inflate(32)
        utilization = (sum(b.area for b in boxes) / view.area) if view.area else 0.0
    return SelfCheck(
        overlap_count=len(geometry.collision_report(manifest)),
        dangling_arrow_count=dangling,
        style_enum_violations=enum_violations,
        orphan_node_count=orphans,
        canvas_utilization=min(1.0, utilization),
    )


def aggregate(reports: list[EvaluationReport]) -> dict:
    """Permutation-invariant summary: per-metric and per-dimension means to
    three decimals plus the sample count."""
    if not reports:
        raise ValueError("aggregate needs at least one report")
    n = len(reports)
    metric_means = {
        metric: round(sum(r.scores[metric] for r in reports) / n, 3)
        for metric in ALL_METRICS
    }
    dim_means = {
        dim: round(sum(r.dimension_means()[dim] for r in reports) / n, 3)
        for dim in DIMENSIONS
    }
    return {"samples": n, "metricMeans": metric_means, "dimensionMeans": dim_means}


def reports_to_csv(reports: list[EvaluationReport], summary: dict) -> str:
    """One row per sample plus a `summary` footer row with the means."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    header = ["sample_id", *ALL_METRICS, *(f"{d}_mean" for d in DIMENSIONS)]
    writer.writerow(header)
    for report in reports:
        dims = report.dimension_means()
        writer.writerow([report.sample_id,
                         *(report.scores[m] for m in ALL_METRICS),
                         *(f"{dims[d]:.3f}" for d in DIMENSIONS)])
    writer.writerow(["summary",
                     *(f"{summary['metricMeans'][m]:.3f}" for m in ALL_METRICS),
                     *(f"{summary['dimensionMeans'][d]:.3f}" for d in DIMENSIONS)])
    return buf.getvalue()


def save_metrics_figure(summary: dict, path: str) -> None:
    """Bar chart of per-metric means grouped by dimension, written next to
    the delimited output."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    colors = {"content": "#4263eb", "visual": "#099268", "cognitive": "#f76707"}
    labels, values, bar_colors = [], [], []
    for dim in DIMENSIONS:
        for metric in DIMENSION_METRICS[dim]:
            labels.append(metric)
            values.append(summary["metricMeans"][metric])
            bar_colors.append(colors[dim])
    fig, ax = plt.subplots(figsize=(9, 4))
    ax.bar(range(len(labels)), values, color=bar_colors)
    ax.set_xticks(range(len(labels)), labels, rotation=30, ha="right")
    ax.set_ylim(0, 5)
    ax.set_ylabel("mean score (1-5)")
    ax.set_title(f"benchmark means over {summary['samples']} samples")
    handles = [plt.Rectangle((0, 0), 1, 1, color=colors[d]) for d in DIMENSIONS]
    ax.legend(handles, DIMENSIONS, loc="upper right")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
