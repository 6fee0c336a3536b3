"""Service configuration.

Config files are flat `key = value` lines (dotted keys namespace related
settings, `#` starts a comment, values are bare strings/ints/floats/bools).
Environment overrides: EVO_CONFIG points at the file; MODEL_API_BASE,
MODEL_API_KEY, MODEL_NAME and EMBED_MODEL_NAME override the model block;
EVO_TRACE_DIR enables gateway request logging.

Every experimental default lives here: refiner invoked once, retrieval
k=5, evolution at 5 rounds x 100 samples x 3 refinement cycles with 2 extra
requirement variants per content piece.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field


@dataclass
class ServiceConfig:
    model_api_base: str = ""
    model_api_key: str = ""
    model_name: str = "mock"
    embed_model_name: str = ""
    temperature: float = 0.7
    contract_attempts: int = 2
    tool_turns: int = 8
    refine_iterations: int = 1
    retrieval_k: int = 5
    rounds: int = 5
    samples_per_round: int = 100
    cycles: int = 3
    extra_requirements: int = 2
    guidelines_per_bucket: int = 3
    workers: int = 4
    data_dir: str = "runs"
    memory_path: str = "memory.jsonl"
    listen_host: str = "127.0.0.1"
    listen_port: int = 8151
    raw: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.retrieval_k < 1:
            raise ValueError("retrieval_k must be >= 1")
        for name in ("refine_iterations", "rounds", "samples_per_round", "cycles",
                     "extra_requirements", "workers"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


_KEY_MAP = {
    "model.api_base": "model_api_base",
    "model.api_key": "model_api_key",
    "model.name": "model_name",
    "model.embed_name": "embed_model_name",
    "model.temperature": "temperature",
    "model.contract_attempts": "contract_attempts",
    "model.tool_turns": "tool_turns",
    "pipeline.refine_iterations": "refine_iterations",
    "pipeline.retrieval_k": "retrieval_k",
    "evolution.rounds": "rounds",
    "evolution.samples_per_round": "samples_per_round",
    "evolution.cycles": "cycles",
    "evolution.extra_requirements": "extra_requirements",
    "evolution.guidelines_per_bucket": "guidelines_per_bucket",
    "service.workers": "workers",
    "service.data_dir": "data_dir",
    "service.memory_path": "memory_path",
    "service.listen_host": "listen_host",
    "service.listen_port": "listen_port",
}


def _coerce(value: str):
    lowered = value.casefold()
    if lowered in ("true", "false"):
        return lowered == "true"
    try:
        return int(value)
    except ValueError:
        pass
    try:
        return float(value)
    except ValueError:
        pass
    return value.strip("\"'")


def parse_config_text(text: str) -> dict:
    out: dict = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {line_no}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        out[key] = _coerce(value)
    return out


def load_config(path: str | None = None, env: dict | None = None) -> ServiceConfig:
    env = os.environ if env is None else env
    path = path or env.get("EVO_CONFIG")
    raw: dict = {}
    if path:
        with open(path, encoding="utf-8") as fh:
            raw = parse_config_text(fh.read())
    kwargs: dict = {}
    for key, value in raw.items():
        attr = _KEY_MAP.get(key)
        if attr:
            kwargs[attr] = value
    if env.get("MODEL_API_BASE"):
        kwargs["model_api_base"] = env["MODEL_API_BASE"]
    if env.get("MODEL_API_KEY"):
        kwargs["model_api_key"] = env["MODEL_API_KEY"]
    if env.get("MODEL_NAME"):
        kwargs["model_name"] = env["MODEL_NAME"]
    if env.get("EMBED_MODEL_NAME"):
        kwargs["embed_model_name"] = env["EMBED_MODEL_NAME"]
    return ServiceConfig(raw=raw, **kwargs)


def build_backend(config: ServiceConfig):
    """mock -> playbook backend; anything else -> HTTP chat client."""
    if config.model_name == "mock" and not config.model_api_base:
        from .playbook import PlaybookBackend

        return PlaybookBackend()
    from .gateway import HTTPBackend

    return HTTPBackend(base_url=config.model_api_base, api_key=config.model_api_key,
                       model=config.model_name)


def build_pipeline(config: ServiceConfig, memory=None, backend=None):
    from .agents import Pipeline
    from .gateway import Gateway

    backend = backend or build_backend(config)
    gateway = Gateway(backend, contract_attempts=config.contract_attempts)
    return Pipeline(gateway, memory=memory, retrieval_k=config.retrieval_k,
                    tool_turns=config.tool_turns, temperature=config.temperature)
