"""HTTP surface for the webapp and automation: job submission with polling,
manifest retrieval and human edits, refinement, memory search, and evolution
rounds. Jobs persist one directory each (request/manifest/trace/feedback/
edits) so a restarted service reloads every finished job byte-identically.
"""

from __future__ import annotations

import json
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from uuid import uuid4

from fastapi import Body, FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse, PlainTextResponse, Response, StreamingResponse

from .agents import GenerationRequest, Pipeline, PipelineError, RefinerError
from .config import ServiceConfig, build_pipeline
from .gateway import BackendUnavailable
from .memory import CorpusItem, MemoryStore, RetrievalQuery, run_evolution_round
from .render import render
from .schema import (
    DiagramManifest,
    ManifestSyntaxError,
    SchemaError,
    diff_manifests,
    manifest_to_obj,
    parse_manifest,
    serialize_manifest,
)

ACTIVE_STATES = ("queued", "structuring", "styling", "laying-out", "refining")
TERMINAL_STATES = ("done", "failed")
STATE_ORDER = {state: i for i, state in enumerate((*ACTIVE_STATES, *TERMINAL_STATES))}


@dataclass
class JobRecord:
    job_id: str
    state: str
    request: GenerationRequest
    manifest: DiagramManifest | None = None
    error: str | None = None
    created_at: float = 0.0
    updated_at: float = 0.0
    edit_count: int = 0

    def to_obj(self, include_manifest: bool = True) -> dict:
        obj = {
            "jobId": self.job_id,
            "state": self.state,
            "request": self.request.to_obj(),
            "error": self.error,
            "createdAt": self.created_at,
            "updatedAt": self.updated_at,
            "editCount": self.edit_count,
            "trace": f"/v1/diagrams/{self.job_id}/trace",
        }
        if include_manifest and self.manifest is not None and self.state == "done":
            obj["manifest"] = manifest_to_obj(self.manifest)
        return obj


class JobStore:
    """Directory-backed job registry. State moves forward only (failed is
    reachable from any active state); per-job mutation is serialized."""

    def __init__(self, root: str):
        self.root = root
        os.makedirs(root, exist_ok=True)
        self._jobs: dict[str, JobRecord] = {}
        self._lock = threading.Lock()
        self._reload()

    def _dir(self, job_id: str) -> str:
        return os.path.join(self.root, job_id)

    def _reload(self) -> None:
        for job_id in sorted(os.listdir(self.root)):
            state_path = os.path.join(self._dir(job_id), "state.json")
            if not os.path.isfile(state_path):
                continue
            with open(state_path, encoding="utf-8") as fh:
                obj = json.load(fh)
            record = JobRecord(
                job_id=job_id,
                state=obj["state"],
                request=GenerationRequest.from_obj(obj["request"]),
                error=obj.get("error"),
                created_at=obj.get("createdAt", 0.0),
                updated_at=obj.get("updatedAt", 0.0),
                edit_count=obj.get("editCount", 0),
            )
            manifest_path = os.path.join(self._dir(job_id), "manifest.json")
            if os.path.isfile(manifest_path):
                with open(manifest_path, "rb") as fh:
                    record.manifest = parse_manifest(fh.read())
            if record.state not in TERMINAL_STATES:
                record.state = "failed"
                record.error = "service restarted while job was active"
            self._jobs[job_id] = record
        for record in self._jobs.values():
            self._persist_state(record)

    def _persist_state(self, record: JobRecord) -> None:
        os.makedirs(self._dir(record.job_id), exist_ok=True)
        payload = {
            "state": record.state,
            "request": record.request.to_obj(),
            "error": record.error,
            "createdAt": record.created_at,
            "updatedAt": record.updated_at,
            "editCount": record.edit_count,
        }
        with open(os.path.join(self._dir(record.job_id), "state.json"), "w",
                  encoding="utf-8") as fh:
            json.dump(payload, fh, sort_keys=True, indent=2)

    def create(self, request: GenerationRequest) -> JobRecord:
        job_id = uuid4().hex[:16]
        now = time.time()
        record = JobRecord(job_id=job_id, state="queued", request=request,
                           created_at=now, updated_at=now)
        with self._lock:
            self._jobs[job_id] = record
            self._persist_state(record)
        return record

    def get(self, job_id: str) -> JobRecord | None:
        return self._jobs.get(job_id)

    def advance(self, job_id: str, state: str, error: str | None = None) -> None:
        with self._lock:
            record = self._jobs[job_id]
            if record.state in TERMINAL_STATES and state != record.state:
                if not (record.state == "done" and state == "refining"):
                    return
            if (state in STATE_ORDER and record.state in STATE_ORDER
                    and state != "failed" and record.state != "done"
                    and STATE_ORDER[state] < STATE_ORDER[record.state]):
                return
            record.state = state
            record.error = error
            record.updated_at = time.time()
            self._persist_state(record)

    def store_manifest(self, job_id: str, manifest: DiagramManifest) -> None:
        record = self._jobs[job_id]
        record.manifest = manifest
        with open(os.path.join(self._dir(job_id), "manifest.json"), "w",
                  encoding="utf-8") as fh:
            fh.write(serialize_manifest(manifest))
        self._persist_state(record)

    def store_trace(self, job_id: str, trace_jsonl: str) -> None:
        with open(os.path.join(self._dir(job_id), "trace.jsonl"), "w", encoding="utf-8") as fh:
            fh.write(trace_jsonl)

    def store_feedback(self, job_id: str, feedbacks: list[dict]) -> None:
        with open(os.path.join(self._dir(job_id), "feedback.json"), "w",
                  encoding="utf-8") as fh:
            json.dump(feedbacks, fh, sort_keys=True, indent=2)

    def append_edit(self, job_id: str, edit_obj: dict) -> None:
        record = self._jobs[job_id]
        record.edit_count += 1
        with open(os.path.join(self._dir(job_id), "edits.jsonl"), "a", encoding="utf-8") as fh:
            fh.write(json.dumps(edit_obj, sort_keys=True, ensure_ascii=False) + "\n")
        self._persist_state(record)

    def read_trace(self, job_id: str) -> str | None:
        path = os.path.join(self._dir(job_id), "trace.jsonl")
        if not os.path.isfile(path):
            return None
        with open(path, encoding="utf-8") as fh:
            return fh.read()


def _violations_payload(violations) -> dict:
    return {"violations": [v.to_obj() for v in violations]}


def create_app(config: ServiceConfig | None = None, pipeline: Pipeline | None = None,
               memory: MemoryStore | None = None, job_root: str | None = None) -> FastAPI:
    config = config or ServiceConfig()
    memory = memory if memory is not None else MemoryStore(config.memory_path)
    pipeline = pipeline or build_pipeline(config, memory=memory)
    jobs = JobStore(job_root or config.data_dir)
    executor = ThreadPoolExecutor(max_workers=max(1, config.workers))
    # One worker mutates a job at a time; refine takes the same lock.
    job_locks: dict[str, threading.Lock] = {}

    app = FastAPI(title="evocanvas", version="0.1.0")
    app.state.jobs = jobs
    app.state.memory = memory
    app.state.pipeline = pipeline
    app.state.executor = executor

    @app.exception_handler(RequestValidationError)
    async def bad_body(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"error": "invalid request body",
                                                      "detail": exc.errors()[:5]})

    def _lock_for(job_id: str) -> threading.Lock:
        return job_locks.setdefault(job_id, threading.Lock())

    def _run_job(job_id: str) -> None:
        record = jobs.get(job_id)
        with _lock_for(job_id):
            try:
                manifest, trace = pipeline.generate(
                    record.request, on_stage=lambda s: jobs.advance(job_id, s))
                feedbacks = [e.payload for e in trace.events
                             if e.stage == "refine" and e.kind == "feedback"]
                jobs.store_manifest(job_id, manifest)
                jobs.store_trace(job_id, trace.to_jsonl())
                jobs.store_feedback(job_id, feedbacks)
                jobs.advance(job_id, "done")
            except PipelineError as exc:
                jobs.store_trace(job_id, exc.trace.to_jsonl())
                jobs.advance(job_id, "failed", error=str(exc))
            except Exception as exc:
                jobs.advance(job_id, "failed", error=f"{type(exc).__name__}: {exc}")

    @app.post("/v1/diagrams", status_code=202)
    def submit(body: dict = Body(...)):
        try:
            request = GenerationRequest.from_obj(body)
        except (ValueError, TypeError) as exc:
            return JSONResponse(status_code=400, content={"error": str(exc)})
        record = jobs.create(request)
        executor.submit(_run_job, record.job_id)
        return {"jobId": record.job_id}

    @app.get("/v1/diagrams/{job_id}")
    def get_job(job_id: str):
        record = jobs.get(job_id)
        if record is None:
            return JSONResponse(status_code=404, content={"error": "unknown job"})
        return record.to_obj()

    @app.get("/v1/diagrams/{job_id}/render.svg")
    def render_svg(job_id: str):
        record = jobs.get(job_id)
        if record is None:
            return JSONResponse(status_code=404, content={"error": "unknown job"})
        if record.state != "done" or record.manifest is None:
            return JSONResponse(status_code=404,
                                content={"error": f"job is {record.state}, not done"})
        artifact = render(record.manifest)
        return Response(content=artifact.svg, media_type="image/svg+xml")

    @app.get("/v1/diagrams/{job_id}/trace")
    def get_trace(job_id: str):
        text = jobs.read_trace(job_id)
        if text is None:
            return JSONResponse(status_code=404, content={"error": "no trace"})
        return PlainTextResponse(text, media_type="application/jsonl")

    @app.put("/v1/diagrams/{job_id}/manifest")
    def put_manifest(job_id: str, body: dict = Body(...)):
        record = jobs.get(job_id)
        if record is None:
            return JSONResponse(status_code=404, content={"error": "unknown job"})
        if record.state != "done":
            return JSONResponse(status_code=409,
                                content={"error": f"job is {record.state}; edits need a "
                                                  "finished job"})
        try:
            edited = parse_manifest(json.dumps(body))
        except SchemaError as exc:
            return JSONResponse(status_code=400, content=_violations_payload(exc.violations))
        except ManifestSyntaxError as exc:
            return JSONResponse(status_code=400, content={"error": str(exc)})
        with _lock_for(job_id):
            log = diff_manifests(record.manifest, edited)
            jobs.append_edit(job_id, {"source": "human", "editLog": log.to_obj(),
                                      "seq": record.edit_count})
            jobs.store_manifest(job_id, edited)
        return record.to_obj()

    @app.post("/v1/diagrams/{job_id}/refine")
    def refine(job_id: str, body: dict = Body(default={})):
        record = jobs.get(job_id)
        if record is None:
            return JSONResponse(status_code=404, content={"error": "unknown job"})
        lock = _lock_for(job_id)
        if record.state != "done" or not lock.acquire(blocking=False):
            return JSONResponse(status_code=409,
                                content={"error": f"job is {record.state}; refine needs a "
                                                  "finished job"})
        try:
            iterations = body.get("iterations", config.refine_iterations)
            if not isinstance(iterations, int) or iterations < 0:
                return JSONResponse(status_code=400,
                                    content={"error": "iterations must be a non-negative "
                                                      "integer"})
            jobs.advance(job_id, "refining")
            try:
                manifest, feedbacks = pipeline.run_refiner(
                    record.manifest, record.request, iterations)
            except RefinerError as exc:
                jobs.store_manifest(job_id, exc.manifest)
                jobs.advance(job_id, "failed", error=str(exc))
                return JSONResponse(status_code=503, content={"error": str(exc)})
            jobs.store_manifest(job_id, manifest)
            jobs.store_feedback(job_id, [f.to_obj() for f in feedbacks])
            jobs.advance(job_id, "done")
            return record.to_obj()
        finally:
            lock.release()

    @app.get("/v1/memory/search")
    def memory_search(role: str, type: str = "universal", domain: str = "universal",
                      q: str = "", k: int = 5):
        try:
            query = RetrievalQuery(agent_role=role, diagram_type=type, domain=domain,
                                   query_text=q, k=k)
        except ValueError as exc:
            return JSONResponse(status_code=400, content={"error": str(exc)})
        result = memory.retrieve(query)
        return {tier: [e.to_obj() | {"embedding": []} for e in entries]
                for tier, entries in result.items()}

    @app.post("/v1/evolve/rounds")
    def evolve(body: dict = Body(...)):
        corpus_path = body.get("corpusPath")
        if not corpus_path or not os.path.isfile(corpus_path):
            return JSONResponse(status_code=400, content={"error": "corpusPath must point "
                                                                   "at a JSONL file"})
        rounds = body.get("rounds", config.rounds)
        from .memory import load_corpus

        corpus = load_corpus(corpus_path)

        def stream():
            for round_no in range(1, rounds + 1):
                try:
                    report = run_evolution_round(
                        pipeline, memory, corpus, round_no,
                        cycles=config.cycles,
                        extra_requirements=config.extra_requirements,
                        max_guidelines=config.guidelines_per_bucket)
                    yield json.dumps(report.to_obj(), sort_keys=True) + "\n"
                except BackendUnavailable as exc:
                    yield json.dumps({"error": str(exc), "round": round_no}) + "\n"
                    return

        return StreamingResponse(stream(), media_type="application/jsonl")

    @app.get("/healthz")
    def health():
        return {"ok": True}

    return app
