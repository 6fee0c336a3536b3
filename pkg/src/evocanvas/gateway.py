"""Model gateway: pluggable chat/vision backends with structured-output
enforcement, bounded retries, a tool-call loop, and a deterministic scripted
mock. All nondeterminism in the system funnels through this module; with the
mock backend every downstream artifact is bit-reproducible.
"""

from __future__ import annotations

import base64
import json
import os
import re
import threading
from dataclasses import dataclass, field
from typing import Callable, Protocol

DEFAULT_TEMPERATURE = 0.7
DEFAULT_CONTRACT_ATTEMPTS = 2  # total structured attempts per call (initial + re-asks)


class BackendUnavailable(RuntimeError):
    """The model backend cannot be reached or refused the request."""


class ScriptExhausted(BackendUnavailable):
    """The scripted mock ran out of responses for a role: a test bug."""


class ContractViolation(RuntimeError):
    """Structured output never satisfied its contract; raw text preserved
    so the failure can be captured as a constructive-failure experience."""

    def __init__(self, contract: str, problems: list[str], raw_text: str):
        self.contract = contract
        self.problems = problems
        self.raw_text = raw_text
        super().__init__(f"contract {contract!r} unsatisfied: {'; '.join(problems[:3])}")


class UnknownTool(KeyError):
    pass


@dataclass
class ToolCall:
    tool_name: str
    arguments: dict
    call_id: str


@dataclass
class ModelRequest:
    agent_role: str
    messages: list[dict]
    images: list[bytes] = field(default_factory=list)
    contract: str | None = None
    temperature: float = DEFAULT_TEMPERATURE
    max_tokens: int | None = None

    def __post_init__(self):
        if not any(m.get("role") == "user" for m in self.messages):
            raise ValueError("request needs at least one user message")
        if not 0 <= self.temperature <= 2:
            raise ValueError(f"temperature {self.temperature} outside [0, 2]")

    def user_text(self) -> str:
        return "\n\n".join(m["content"] for m in self.messages if m.get("role") == "user")


@dataclass
class BackendResponse:
    text: str = ""
    tool_calls: list[ToolCall] = field(default_factory=list)


class Backend(Protocol):
    def complete(self, request: ModelRequest) -> BackendResponse: ...


def first_json_object(text: str) -> dict | None:
    """Extract the first JSON object from model text. Fenced blocks win;
    otherwise scan for the first balanced {...} that parses."""
    for match in re.finditer(r"```(?:json)?\s*\n(.*?)```", text, re.DOTALL):
        try:
            obj = json.loads(match.group(1))
        except json.JSONDecodeError:
            continue
        if isinstance(obj, dict):
            return obj
    start = text.find("{")
    while start != -1:
        depth = 0
        in_str = False
        esc = False
        for i in range(start, len(text)):
            c = text[i]
            if esc:
                esc = False
                continue
            if c == "\\":
                esc = True
                continue
            if c == '"':
                in_str = not in_str
                continue
            if in_str:
                continue
            if c == "{":
                depth += 1
            elif c == "}":
                depth -= 1
                if depth == 0:
                    try:
                        obj = json.loads(text[start:i + 1])
                        if isinstance(obj, dict):
                            return obj
                    except json.JSONDecodeError:
                        break
                    break
        start = text.find("{", start + 1)
    return None


class MockBackend:
    """Ordered script of canned responses keyed by agent role.

    Entries are BackendResponse objects, plain strings (text responses), or
    callables taking the ModelRequest (for request-dependent scripting).
    Running out of entries raises ScriptExhausted. Every request is recorded
    so tests can inspect exactly what each agent was shown.
    """

    def __init__(self, script: dict[str, list] | None = None):
        self.script: dict[str, list] = {role: list(entries) for role, entries in (script or {}).items()}
        self.log: list[tuple[str, ModelRequest]] = []

    def add(self, role: str, *entries) -> "MockBackend":
        self.script.setdefault(role, []).extend(entries)
        return self

    def requests_for(self, role: str) -> list[ModelRequest]:
        return [req for r, req in self.log if r == role]

    def complete(self, request: ModelRequest) -> BackendResponse:
        self.log.append((request.agent_role, request))
        queue = self.script.get(request.agent_role)
        if not queue:
            raise ScriptExhausted(f"mock script exhausted for role {request.agent_role!r} "
                                  f"after {len(self.log)} calls")
        entry = queue.pop(0)
        if callable(entry) and not isinstance(entry, BackendResponse):
            entry = entry(request)
        if isinstance(entry, str):
            return BackendResponse(text=entry)
        if isinstance(entry, BackendResponse):
            return entry
        raise TypeError(f"unsupported mock script entry {type(entry)!r}")


class HTTPBackend:
    """OpenAI-compatible chat-completions client with vision content parts.

    Configured from MODEL_API_BASE / MODEL_API_KEY / MODEL_NAME unless given
    explicitly."""

    def __init__(self, base_url: str | None = None, api_key: str | None = None,
                 model: str | None = None, timeout: float = 120.0):
        self.base_url = (base_url or os.environ.get("MODEL_API_BASE", "")).rstrip("/")
        self.api_key = api_key or os.environ.get("MODEL_API_KEY", "")
        self.model = model or os.environ.get("MODEL_NAME", "")
        self.timeout = timeout
        if not self.base_url:
            raise BackendUnavailable("MODEL_API_BASE is not configured")

    def complete(self, request: ModelRequest) -> BackendResponse:
        import httpx

        messages = []
        for m in request.messages:
            messages.append({"role": m["role"], "content": m["content"]})
        if request.images and messages:
            parts = [{"type": "text", "text": messages[-1]["content"]}]
            for png in request.images:
                encoded = base64.b64encode(png).decode("ascii")
                parts.append({"type": "image_url",
                              "image_url": {"url": f"data:image/png;base64,{encoded}"}})
            messages[-1] = {"role": messages[-1]["role"], "content": parts}
        body = {"model": self.model, "messages": messages, "temperature": request.temperature}
        if request.max_tokens:
            body["max_tokens"] = request.max_tokens
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        try:
            resp = httpx.post(f"{self.base_url}/chat/completions", json=body,
                              headers=headers, timeout=self.timeout)
        except httpx.HTTPError as exc:
            raise BackendUnavailable(f"backend request failed: {exc}") from exc
        if resp.status_code >= 500:
            raise BackendUnavailable(f"backend returned {resp.status_code}")
        if resp.status_code != 200:
            raise BackendUnavailable(f"backend error {resp.status_code}: {resp.text[:200]}")
        payload = resp.json()
        message = payload["choices"][0]["message"]
        calls = [
            ToolCall(tool_name=c["function"]["name"],
                     arguments=json.loads(c["function"].get("arguments") or "{}"),
                     call_id=c.get("id", f"call{i}"))
            for i, c in enumerate(message.get("tool_calls") or [])
        ]
        return BackendResponse(text=message.get("content") or "", tool_calls=calls)


class ToolRegistry:
    """Named tools the refiner may call. Handlers take an arguments dict and
    return a JSON-able result."""

    def __init__(self):
        self._tools: dict[str, Callable[[dict], object]] = {}

    def register(self, name: str, handler: Callable[[dict], object]) -> None:
        self._tools[name] = handler

    def names(self) -> list[str]:
        return sorted(self._tools)

    def __len__(self) -> int:
        return len(self._tools)

    def execute(self, call: ToolCall) -> object:
        if call.tool_name not in self._tools:
            raise UnknownTool(call.tool_name)
        return self._tools[call.tool_name](call.arguments)


@dataclass
class ExecutedCall:
    call: ToolCall
    result: object
    ok: bool


@dataclass
class ToolLoopResult:
    final_message: str
    calls: list[ExecutedCall]
    truncated: bool


class Gateway:
    """Front door for every model exchange: structured completion with
    bounded contract retries, and the perceive/act tool loop."""

    def __init__(self, backend: Backend, contract_attempts: int = DEFAULT_CONTRACT_ATTEMPTS,
                 trace_dir: str | None = None):
        self.backend = backend
        self.contract_attempts = max(1, contract_attempts)
        self._contracts: dict[str, Callable[[dict], list[str]]] = {}
        self._trace_dir = trace_dir if trace_dir is not None else os.environ.get("EVO_TRACE_DIR")
        self._trace_lock = threading.Lock()
        self._trace_seq = 0

    def register_contract(self, name: str, validator: Callable[[dict], list[str]]) -> None:
        self._contracts[name] = validator

    def has_contract(self, name: str) -> bool:
        return name in self._contracts

    def _trace(self, kind: str, payload: dict) -> None:
        if not self._trace_dir:
            return
        os.makedirs(self._trace_dir, exist_ok=True)
        with self._trace_lock:
            seq = self._trace_seq
            self._trace_seq += 1
            with open(os.path.join(self._trace_dir, "gateway.jsonl"), "a", encoding="utf-8") as fh:
                fh.write(json.dumps({"seq": seq, "kind": kind, **payload}, sort_keys=True,
                                    ensure_ascii=False, default=repr) + "\n")

    def complete(self, request: ModelRequest) -> BackendResponse:
        """Plain passthrough with tracing, for callers that run their own
        response protocol (e.g. the judge's re-ask-then-clamp rule)."""
        response = self.backend.complete(request)
        self._trace("complete", {"role": request.agent_role, "text": response.text})
        return response

    def complete_structured(self, request: ModelRequest, validator=None) -> dict:
        """Return the first JSON object in the response once it satisfies the
        contract, re-asking with the violation message up to the attempt
        budget. The validator comes from the registry unless given
        explicitly (agents pass context-bound validators)."""
        if validator is None:
            if request.contract is None or request.contract not in self._contracts:
                raise KeyError(f"contract {request.contract!r} is not registered")
            validator = self._contracts[request.contract]
        messages = list(request.messages)
        last_text = ""
        problems: list[str] = ["no response"]
        for _ in range(self.contract_attempts):
            attempt = ModelRequest(
                agent_role=request.agent_role, messages=messages, images=request.images,
                contract=request.contract, temperature=request.temperature,
                max_tokens=request.max_tokens,
            )
            response = self.backend.complete(attempt)
            last_text = response.text
            self._trace("structured", {"role": request.agent_role,
                                       "contract": request.contract, "text": response.text})
            payload = first_json_object(response.text)
            if payload is None:
                problems = ["response contains no JSON object"]
            else:
                problems = validator(payload)
                if not problems:
                    return payload
            messages = messages + [
                {"role": "user",
                 "content": "Your previous response violated the output contract:\n- "
                            + "\n- ".join(problems)
                            + "\nRespond again with a corrected JSON object only."},
            ]
        raise ContractViolation(request.contract, problems, last_text)

    def run_tool_loop(self, request: ModelRequest, registry: ToolRegistry,
                      max_turns: int) -> ToolLoopResult:
        """Alternate model turns with tool execution until the model stops
        requesting tools or the turn budget runs out. Unknown tools are
        reported back as tool errors, never crashes."""
        if len(registry) == 0:
            raise ValueError("tool registry is empty")
        if max_turns < 1:
            raise ValueError("max_turns must be >= 1")
        messages = list(request.messages)
        executed: list[ExecutedCall] = []
        for turn in range(max_turns):
            attempt = ModelRequest(
                agent_role=request.agent_role, messages=messages,
                images=request.images if turn == 0 else [],
                temperature=request.temperature, max_tokens=request.max_tokens,
            )
            response = self.backend.complete(attempt)
            self._trace("tool-turn", {"role": request.agent_role, "turn": turn,
                                      "text": response.text,
                                      "calls": [c.tool_name for c in response.tool_calls]})
            if not response.tool_calls:
                return ToolLoopResult(final_message=response.text, calls=executed, truncated=False)
            results = []
            for call in response.tool_calls:
                try:
                    result = registry.execute(call)
                    executed.append(ExecutedCall(call=call, result=result, ok=True))
                    results.append({"callId": call.call_id, "tool": call.tool_name,
                                    "result": result})
                except UnknownTool:
                    message = (f"tool error: {call.tool_name!r} is not registered; "
                               f"available: {', '.join(registry.names())}")
                    executed.append(ExecutedCall(call=call, result=message, ok=False))
                    results.append({"callId": call.call_id, "tool": call.tool_name,
                                    "error": message})
                except Exception as exc:
                    message = f"tool error: {exc}"
                    executed.append(ExecutedCall(call=call, result=message, ok=False))
                    results.append({"callId": call.call_id, "tool": call.tool_name,
                                    "error": message})
            messages = messages + [
                {"role": "user",
                 "content": "Tool results:\n```json\n"
                            + json.dumps(results, sort_keys=True, ensure_ascii=False, default=repr)
                            + "\n```"},
            ]
        return ToolLoopResult(final_message="", calls=executed, truncated=True)
