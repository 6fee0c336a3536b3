"""Three-tier evolving design-knowledge store.

Tiers: per-run sample strategies, bucket-aggregated domain guidelines, and
universal principles. Entries are embedded (hashed bag-of-words by default,
pluggable), retrieved by metadata filter + cosine top-k, and grown through
hybrid experience search followed by hierarchical distillation. Persistence
is an append-only JSONL journal replayed on load.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import re
import threading
from dataclasses import dataclass, field, replace

from . import prompts
from .agents import GenerationRequest, Pipeline, PipelineError, RefinerError
from .gateway import ContractViolation, ModelRequest
from .schema import manifest_to_obj
from .taxonomy import DIAGRAM_TYPES, UNIVERSAL

log = logging.getLogger(__name__)

TIERS = ("sample", "guideline", "principle")
AGENT_ROLES = ("structure", "style", "layout", "refiner")
EMBED_DIM = 256


class TierConstraintViolation(ValueError):
    pass


@dataclass
class KnowledgeEntry:
    entry_id: str
    tier: str
    agent_role: str
    diagram_type: str
    domain: str
    title: str
    description: str
    content: str
    when_to_use: str
    provenance: list[str]
    created_round: int = 0
    embedding: list[float] = field(default_factory=list)

    def embed_text(self) -> str:
        return f"{self.title}\n{self.when_to_use}\n{self.content}"

    def to_obj(self) -> dict:
        return {
            "entryId": self.entry_id, "tier": self.tier, "agentRole": self.agent_role,
            "diagramType": self.diagram_type, "domain": self.domain, "title": self.title,
            "description": self.description, "content": self.content,
            "whenToUse": self.when_to_use, "provenance": list(self.provenance),
            "createdRound": self.created_round, "embedding": list(self.embedding),
        }

    @classmethod
    def from_obj(cls, obj: dict) -> "KnowledgeEntry":
        return cls(
            entry_id=obj["entryId"], tier=obj["tier"], agent_role=obj["agentRole"],
            diagram_type=obj["diagramType"], domain=obj["domain"], title=obj["title"],
            description=obj.get("description", ""), content=obj.get("content", ""),
            when_to_use=obj.get("whenToUse", ""), provenance=list(obj.get("provenance", [])),
            created_round=obj.get("createdRound", 0),
            embedding=list(obj.get("embedding", [])),
        )


def check_tier(entry: KnowledgeEntry) -> list[str]:
    problems = []
    if entry.tier not in TIERS:
        problems.append(f"unknown tier {entry.tier!r}")
    if entry.agent_role not in AGENT_ROLES:
        problems.append(f"unknown agent role {entry.agent_role!r}")
    if entry.diagram_type != UNIVERSAL and entry.diagram_type not in DIAGRAM_TYPES:
        problems.append(f"diagramType {entry.diagram_type!r} is neither a supported type "
                        f"nor universal")
    if entry.tier == "principle" and (entry.diagram_type != UNIVERSAL or entry.domain != UNIVERSAL):
        problems.append("principles must be universal/universal")
    if entry.tier == "guideline" and len(entry.provenance) < 2:
        problems.append("guidelines must cite at least 2 merged samples")
    if entry.tier == "sample" and len(entry.provenance) != 1:
        problems.append("samples must cite exactly one run id")
    return problems


@dataclass
class RetrievalQuery:
    agent_role: str
    diagram_type: str = UNIVERSAL
    domain: str = UNIVERSAL
    query_text: str = ""
    k: int = 5

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")


class HashedBowEmbedder:
    """Deterministic bag-of-words embedding: each token hashes (sha256) into
    one of `dim` buckets; the count vector is L2-normalized."""

    def __init__(self, dim: int = EMBED_DIM):
        self.dim = dim

    def __call__(self, text: str) -> list[float]:
        vec = [0.0] * self.dim
        for token in re.findall(r"[a-z0-9]+", text.casefold()):
            digest = hashlib.sha256(token.encode("utf-8")).hexdigest()
            vec[int(digest, 16) % self.dim] += 1.0
        norm = math.sqrt(sum(v * v for v in vec))
        if norm > 0:
            vec = [v / norm for v in vec]
        return vec


def cosine(a: list[float], b: list[float]) -> float:
    return sum(x * y for x, y in zip(a, b))


class MemoryStore:
    """Journal-backed entry store with brute-force cosine retrieval. Writes
    serialize through one lock; reads see consistent snapshots."""

    def __init__(self, journal_path: str | None = None, embedder=None):
        self.journal_path = journal_path
        self.embedder = embedder or HashedBowEmbedder()
        self._entries: dict[str, KnowledgeEntry] = {}
        self._lock = threading.Lock()
        self._seq = 0
        if journal_path and os.path.exists(journal_path):
            self._replay()

    def _replay(self) -> None:
        with open(self.journal_path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                op = json.loads(line)
                self._seq = max(self._seq, op.get("ts", 0) + 1)
                if op["op"] in ("add", "update"):
                    entry = KnowledgeEntry.from_obj(op["entry"])
                    self._entries[entry.entry_id] = entry
                elif op["op"] == "del":
                    self._entries.pop(op.get("entryId"), None)

    def _journal(self, op: dict) -> None:
        if not self.journal_path:
            return
        parent = os.path.dirname(self.journal_path)
        if parent:
            os.makedirs(parent, exist_ok=True)
        with open(self.journal_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(op, sort_keys=True, ensure_ascii=False) + "\n")

    def __len__(self) -> int:
        return len(self._entries)

    def get(self, entry_id: str) -> KnowledgeEntry | None:
        return self._entries.get(entry_id)

    def entries(self, tier: str | None = None) -> list[KnowledgeEntry]:
        out = [e for e in self._entries.values() if tier is None or e.tier == tier]
        return sorted(out, key=lambda e: e.entry_id)

    def upsert(self, entry: KnowledgeEntry, round_no: int | None = None) -> str:
        problems = check_tier(entry)
        if problems:
            raise TierConstraintViolation("; ".join(problems))
        with self._lock:
            entry = replace(entry, embedding=self.embedder(entry.embed_text()),
                            provenance=list(entry.provenance))
            op = "update" if entry.entry_id in self._entries else "add"
            self._entries[entry.entry_id] = entry
            self._journal({"op": op, "entry": entry.to_obj(), "ts": self._seq,
                           "round": entry.created_round if round_no is None else round_no})
            self._seq += 1
        return entry.entry_id

    def delete(self, entry_id: str, round_no: int = 0) -> bool:
        with self._lock:
            existed = entry_id in self._entries
            if existed:
                del self._entries[entry_id]
            else:
                log.warning("delete of absent entry %r is a no-op", entry_id)
            self._journal({"op": "del", "entryId": entry_id, "ts": self._seq,
                           "round": round_no, "noop": not existed})
            self._seq += 1
        return existed

    # -- retrieval --

    def _matches(self, entry: KnowledgeEntry, query: RetrievalQuery) -> bool:
        if entry.agent_role != query.agent_role:
            return False
        if entry.tier == "principle":
            return True
        if entry.diagram_type not in (query.diagram_type, UNIVERSAL):
            return False
        if entry.domain not in (query.domain, UNIVERSAL):
            return False
        return True

    def retrieve(self, query: RetrievalQuery) -> dict[str, list[KnowledgeEntry]]:
        """Per tier: metadata filter, cosine ranking on the query embedding,
        ties broken by entryId ascending, top-k."""
        qvec = self.embedder(query.query_text)
        out: dict[str, list[KnowledgeEntry]] = {}
        for tier in TIERS:
            scored = [
                (-cosine(qvec, e.embedding), e.entry_id, e)
                for e in self._entries.values()
                if e.tier == tier and self._matches(e, query)
            ]
            scored.sort(key=lambda t: (t[0], t[1]))
            out[tier] = [e for _, _, e in scored[:query.k]]
        return out

    def retrieve_flat(self, agent_role: str, diagram_type: str, domain: str,
                      query_text: str, k: int = 5) -> list[KnowledgeEntry]:
        """Principles first, then guidelines, then samples: global heuristics
        frame the local ones in agent prompts."""
        result = self.retrieve(RetrievalQuery(agent_role=agent_role, diagram_type=diagram_type,
                                              domain=domain, query_text=query_text, k=k))
        return result["principle"] + result["guideline"] + result["sample"]

    # -- import/export --

    def export_jsonl(self) -> str:
        return "".join(json.dumps(e.to_obj(), sort_keys=True, ensure_ascii=False) + "\n"
                       for e in self.entries())

    def import_jsonl(self, text: str) -> int:
        count = 0
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            self.upsert(KnowledgeEntry.from_obj(json.loads(line)))
            count += 1
        return count


# ---------------------------------------------------------------------------
# Hybrid experience search
# ---------------------------------------------------------------------------

@dataclass
class ExperienceTrace:
    run_id: str
    kind: str  # "depth" | "breadth"
    request_obj: dict
    diagram_type: str
    domain: str
    content_hash: str
    comparison_set_id: str | None
    variant_index: int
    feedbacks: list[dict]
    manifest_obj: dict | None
    failure: bool = False
    failure_note: str = ""

    def to_obj(self) -> dict:
        return {
            "runId": self.run_id, "kind": self.kind, "request": self.request_obj,
            "diagramType": self.diagram_type, "domain": self.domain,
            "contentHash": self.content_hash, "comparisonSetId": self.comparison_set_id,
            "variantIndex": self.variant_index, "feedbacks": self.feedbacks,
            "failure": self.failure, "failureNote": self.failure_note,
        }


def _content_hash(content: str) -> str:
    return hashlib.sha1(content.encode("utf-8")).hexdigest()[:12]


def depth_first_search(pipeline: Pipeline, request: GenerationRequest,
                       cycles: int = 3) -> list[ExperienceTrace]:
    """Vertical exploration: one instance refined for `cycles` feedback
    turns, capturing the full draft-to-expert path (or the constructive
    failure)."""
    if cycles < 1:
        raise ValueError("cycles must be >= 1")
    base = replace_request(request, refine_iterations=0)
    run_id = request.run_id()
    trace = ExperienceTrace(
        run_id=run_id, kind="depth", request_obj=request.to_obj(),
        diagram_type=request.diagram_type_override or UNIVERSAL,
        domain=request.domain or UNIVERSAL,
        content_hash=_content_hash(request.content), comparison_set_id=None,
        variant_index=0, feedbacks=[], manifest_obj=None,
    )
    try:
        manifest, _ = pipeline.generate(base)
        trace.diagram_type = manifest.meta["diagramType"]
        trace.manifest_obj = manifest_to_obj(manifest)
    except PipelineError as exc:
        trace.failure = True
        trace.failure_note = str(exc)
        return [trace]
    try:
        refined, feedbacks = pipeline.run_refiner(manifest, request, cycles)
        trace.feedbacks = [f.to_obj() for f in feedbacks]
        trace.manifest_obj = manifest_to_obj(refined)
    except RefinerError as exc:
        trace.failure = True
        trace.failure_note = str(exc)
        trace.feedbacks = [f.to_obj() for f in exc.feedbacks]
        trace.manifest_obj = manifest_to_obj(exc.manifest)
    return [trace]


def replace_request(request: GenerationRequest, **changes) -> GenerationRequest:
    obj = {
        "content": request.content,
        "requirements": request.requirements,
        "diagram_type_override": request.diagram_type_override,
        "refine_iterations": request.refine_iterations,
        "domain": request.domain,
    }
    obj.update(changes)
    return GenerationRequest(**obj)


def synthesize_requirements(pipeline: Pipeline, content: str, base_requirement: str | None,
                            count: int) -> list[str]:
    payload = pipeline.gateway.complete_structured(
        ModelRequest(
            agent_role="variants",
            messages=[{"role": "system",
                       "content": "You propose alternative presentation requirements."},
                      {"role": "user",
                       "content": prompts.variants_user(content, base_requirement, count)}],
            contract="variants.v1",
            temperature=pipeline.temperature,
        ),
        validator=lambda p: (
            [] if isinstance(p.get("requirements"), list)
            and len(p["requirements"]) >= count
            and all(isinstance(r, str) and r.strip() for r in p["requirements"][:count])
            else [f"requirements must list at least {count} nonempty strings"]),
    )
    return [r.strip() for r in payload["requirements"][:count]]


def breadth_first_search(pipeline: Pipeline, content: str,
                         base_requirement: str | None = None,
                         extra_requirements: int = 2,
                         template: GenerationRequest | None = None) -> list[ExperienceTrace]:
    """Horizontal exploration: the same content generated under the base
    requirement plus synthesized variants, tagged as one comparison set."""
    if extra_requirements < 1:
        raise ValueError("extraRequirements must be >= 1")
    variants = synthesize_requirements(pipeline, content, base_requirement, extra_requirements)
    requirements = [base_requirement] + list(variants)
    comparison_set_id = _content_hash(content)
    traces: list[ExperienceTrace] = []
    for i, requirement in enumerate(requirements):
        if template is not None:
            request = replace_request(template, content=content, requirements=requirement)
        else:
            request = GenerationRequest(content=content, requirements=requirement)
        trace = ExperienceTrace(
            run_id=request.run_id(), kind="breadth", request_obj=request.to_obj(),
            diagram_type=request.diagram_type_override or UNIVERSAL,
            domain=request.domain or UNIVERSAL,
            content_hash=comparison_set_id, comparison_set_id=comparison_set_id,
            variant_index=i, feedbacks=[], manifest_obj=None,
        )
        try:
            manifest, ptrace = pipeline.generate(request)
            trace.diagram_type = manifest.meta["diagramType"]
            trace.manifest_obj = manifest_to_obj(manifest)
            trace.feedbacks = [e.payload for e in ptrace.events
                               if e.stage == "refine" and e.kind == "feedback"]
        except PipelineError as exc:
            trace.failure = True
            trace.failure_note = str(exc)
        traces.append(trace)
    return traces


# ---------------------------------------------------------------------------
# Hierarchical distillation
# ---------------------------------------------------------------------------

_CARD_FIELDS = ("title", "description", "content", "whenToUse")


def _card_validator(payload: dict) -> list[str]:
    problems = []
    for name in _CARD_FIELDS:
        if not isinstance(payload.get(name), str) or not payload[name].strip():
            problems.append(f"{name} must be a nonempty string")
    if payload.get("agentRole") not in AGENT_ROLES:
        problems.append(f"agentRole must be one of {', '.join(AGENT_ROLES)}")
    dtype = payload.get("diagramType")
    if dtype != UNIVERSAL and dtype not in DIAGRAM_TYPES:
        problems.append("diagramType must be a supported type or universal")
    if not isinstance(payload.get("domain"), str) or not payload["domain"].strip():
        problems.append("domain must be a nonempty string")
    return problems


def summarize_traces(store: MemoryStore, pipeline: Pipeline,
                     traces: list[ExperienceTrace], round_no: int = 0) -> list[KnowledgeEntry]:
    """One summarizer exchange per trace, producing a sample-tier card whose
    provenance is exactly the trace's run id. Contract failures skip the
    trace with a warning."""
    if not traces:
        raise ValueError("summarize_traces needs at least one trace")
    out: list[KnowledgeEntry] = []
    for trace in traces:
        try:
            payload = pipeline.gateway.complete_structured(
                ModelRequest(
                    agent_role="summarizer",
                    messages=[{"role": "system",
                               "content": "You distill execution traces into reusable "
                                          "design strategy cards."},
                              {"role": "user", "content": prompts.summarize_user(trace.to_obj())}],
                    contract="card.v1",
                    temperature=pipeline.temperature,
                ),
                validator=_card_validator,
            )
        except ContractViolation as exc:
            log.warning("summarizer skipped trace %s: %s", trace.run_id, exc)
            continue
        description = payload["description"]
        if trace.failure and "failure" not in description.casefold():
            description = f"Constructive failure: {description}"
        # A depth trace and the breadth base trace may share a run id (same
        # request); the entry id carries the exploration kind to stay unique.
        entry = KnowledgeEntry(
            entry_id=f"s-{trace.kind}{trace.variant_index}-{trace.run_id}",
            tier="sample",
            agent_role=payload["agentRole"],
            diagram_type=payload["diagramType"],
            domain=payload["domain"],
            title=payload["title"],
            description=description,
            content=payload["content"],
            when_to_use=payload["whenToUse"],
            provenance=[trace.run_id],
            created_round=round_no,
        )
        store.upsert(entry, round_no)
        out.append(entry)
    return out


def _bucket_key(entry: KnowledgeEntry) -> tuple[str, str, str]:
    return (entry.agent_role, entry.diagram_type, entry.domain)


def aggregate_guidelines(store: MemoryStore, pipeline: Pipeline, round_no: int,
                         max_guidelines: int = 3) -> dict[str, list]:
    """Per (role, type, domain) bucket holding >= 2 samples, one aggregator
    exchange merging them into at most `max_guidelines` guidelines. The
    aggregator may update or delete guidelines only inside its own bucket."""
    buckets: dict[tuple[str, str, str], list[KnowledgeEntry]] = {}
    for entry in store.entries("sample"):
        buckets.setdefault(_bucket_key(entry), []).append(entry)
    added: list[KnowledgeEntry] = []
    updated: list[KnowledgeEntry] = []
    deleted: list[str] = []
    for key in sorted(buckets):
        samples = buckets[key]
        if len(samples) < 2:
            continue
        role, dtype, domain = key
        existing = [g for g in store.entries("guideline") if _bucket_key(g) == key]
        try:
            payload = pipeline.gateway.complete_structured(
                ModelRequest(
                    agent_role="aggregator",
                    messages=[{"role": "system",
                               "content": "You merge repeated sample strategies into "
                                          "domain guidelines."},
                              {"role": "user", "content": prompts.aggregate_user(
                                  {"agentRole": role, "diagramType": dtype, "domain": domain},
                                  [s.to_obj() | {"embedding": []} for s in samples],
                                  [g.to_obj() | {"embedding": []} for g in existing],
                                  max_guidelines)}],
                    contract="guidelines.v1",
                    temperature=pipeline.temperature,
                ),
                validator=_merge_validator("guidelines", {s.entry_id for s in samples},
                                           max_guidelines),
            )
        except ContractViolation as exc:
            log.warning("aggregator skipped bucket %s: %s", key, exc)
            continue
        existing_ids = {g.entry_id for g in existing}
        produced_ids: set[str] = set()
        for i, card in enumerate(payload["guidelines"][:max_guidelines]):
            merged = card.get("mergedSamples") or [s.entry_id for s in samples]
            replaces = card.get("replacesEntryId")
            if replaces and replaces in existing_ids:
                entry_id = replaces
            else:
                entry_id = f"g-{role}-{dtype}-{domain}-r{round_no}-{i + 1}"
            entry = KnowledgeEntry(
                entry_id=entry_id, tier="guideline", agent_role=role,
                diagram_type=dtype, domain=domain, title=card["title"],
                description=card["description"], content=card["content"],
                when_to_use=card["whenToUse"], provenance=sorted(merged),
                created_round=round_no,
            )
            fresh = store.get(entry_id) is None
            store.upsert(entry, round_no)
            produced_ids.add(entry_id)
            (added if fresh else updated).append(entry)
        for stale in payload.get("deletes") or []:
            if stale in existing_ids and stale not in produced_ids:
                if store.delete(stale, round_no):
                    deleted.append(stale)
    return {"added": added, "updated": updated, "deleted": deleted}


def _merge_validator(key: str, sample_ids: set[str], limit: int):
    def check(payload: dict) -> list[str]:
        problems = []
        cards = payload.get(key)
        if not isinstance(cards, list) or not 1 <= len(cards):
            return [f"{key} must be a nonempty list"]
        for card in cards[:limit]:
            if not isinstance(card, dict):
                problems.append(f"each {key} entry must be an object")
                continue
            for name in _CARD_FIELDS:
                if not isinstance(card.get(name), str) or not card[name].strip():
                    problems.append(f"{key}[].{name} must be a nonempty string")
            merged = card.get("mergedSamples")
            if merged is not None:
                if (not isinstance(merged, list) or len(merged) < 2
                        or not set(merged) <= sample_ids):
                    problems.append(f"{key}[].mergedSamples must list >= 2 bucket sample ids")
        return problems

    return check


def abstract_principles(store: MemoryStore, pipeline: Pipeline,
                        round_no: int) -> list[KnowledgeEntry]:
    """Per agent role with guidelines spanning >= 2 domains, one abstractor
    exchange distilling universal principles whose provenance crosses
    domains."""
    out: list[KnowledgeEntry] = []
    guidelines = store.entries("guideline")
    for role in AGENT_ROLES:
        mine = [g for g in guidelines if g.agent_role == role]
        domains = {g.domain for g in mine}
        if len(domains) < 2:
            continue
        existing = [p for p in store.entries("principle") if p.agent_role == role]
        by_id = {g.entry_id: g for g in mine}

        def validator(payload: dict) -> list[str]:
            problems = []
            cards = payload.get("principles")
            if not isinstance(cards, list):
                return ["principles must be a list"]
            for card in cards:
                if not isinstance(card, dict):
                    problems.append("each principle must be an object")
                    continue
                for name in _CARD_FIELDS:
                    if not isinstance(card.get(name), str) or not card[name].strip():
                        problems.append(f"principles[].{name} must be a nonempty string")
                sources = card.get("fromGuidelines")
                if (not isinstance(sources, list) or len(sources) < 2
                        or not set(sources) <= set(by_id)):
                    problems.append("principles[].fromGuidelines must cite known guideline ids")
                elif len({by_id[s].domain for s in sources}) < 2:
                    problems.append("principles[].fromGuidelines must span >= 2 domains")
            return problems

        try:
            payload = pipeline.gateway.complete_structured(
                ModelRequest(
                    agent_role="abstractor",
                    messages=[{"role": "system",
                               "content": "You abstract domain guidelines into universal "
                                          "design principles."},
                              {"role": "user", "content": prompts.abstract_user(
                                  role,
                                  [g.to_obj() | {"embedding": []} for g in mine],
                                  [p.to_obj() | {"embedding": []} for p in existing])}],
                    contract="principles.v1",
                    temperature=pipeline.temperature,
                ),
                validator=validator,
            )
        except ContractViolation as exc:
            log.warning("abstractor skipped role %s: %s", role, exc)
            continue
        existing_ids = {p.entry_id for p in existing}
        for i, card in enumerate(payload["principles"]):
            replaces = card.get("replacesEntryId")
            if replaces and replaces in existing_ids:
                entry_id = replaces
            else:
                entry_id = f"p-{role}-r{round_no}-{i + 1}"
            entry = KnowledgeEntry(
                entry_id=entry_id, tier="principle", agent_role=role,
                diagram_type=UNIVERSAL, domain=UNIVERSAL, title=card["title"],
                description=card["description"], content=card["content"],
                when_to_use=card["whenToUse"], provenance=sorted(card["fromGuidelines"]),
                created_round=round_no,
            )
            store.upsert(entry, round_no)
            out.append(entry)
    return out


# ---------------------------------------------------------------------------
# Evolution rounds
# ---------------------------------------------------------------------------

@dataclass
class RoundReport:
    round: int
    items: int
    samples_added: int
    guidelines_added: int
    guidelines_updated: int
    guidelines_deleted: int
    principles_added: int

    def to_obj(self) -> dict:
        return {"round": self.round, "items": self.items, "samplesAdded": self.samples_added,
                "guidelinesAdded": self.guidelines_added,
                "guidelinesUpdated": self.guidelines_updated,
                "guidelinesDeleted": self.guidelines_deleted,
                "principlesAdded": self.principles_added}


@dataclass
class CorpusItem:
    content: str
    requirement: str | None = None
    diagram_type: str | None = None
    domain: str | None = None

    @classmethod
    def from_obj(cls, obj: dict) -> "CorpusItem":
        return cls(content=obj["content"], requirement=obj.get("requirement"),
                   diagram_type=obj.get("diagram_type") or obj.get("diagramType"),
                   domain=obj.get("domain"))


def run_evolution_round(pipeline: Pipeline, store: MemoryStore, corpus: list[CorpusItem],
                        round_no: int, cycles: int = 3, extra_requirements: int = 2,
                        max_guidelines: int = 3) -> RoundReport:
    """One retrieve -> explore -> distill -> merge cycle over a corpus.
    Per-item failures are logged and the round completes."""
    if not corpus:
        raise ValueError("corpus must be nonempty")
    traces: list[ExperienceTrace] = []
    for item in corpus:
        request = GenerationRequest(
            content=item.content, requirements=item.requirement,
            diagram_type_override=item.diagram_type, refine_iterations=0,
            domain=item.domain,
        )
        try:
            traces.extend(depth_first_search(pipeline, request, cycles=cycles))
            traces.extend(breadth_first_search(
                pipeline, item.content, base_requirement=item.requirement,
                extra_requirements=extra_requirements, template=request))
        except Exception:
            log.exception("exploration failed for corpus item; continuing round")
    samples = summarize_traces(store, pipeline, traces, round_no) if traces else []
    merged = aggregate_guidelines(store, pipeline, round_no, max_guidelines)
    principles = abstract_principles(store, pipeline, round_no)
    return RoundReport(
        round=round_no, items=len(corpus), samples_added=len(samples),
        guidelines_added=len(merged["added"]), guidelines_updated=len(merged["updated"]),
        guidelines_deleted=len(merged["deleted"]), principles_added=len(principles),
    )


def load_corpus(path: str) -> list[CorpusItem]:
    items = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                items.append(CorpusItem.from_obj(json.loads(line)))
    return items
