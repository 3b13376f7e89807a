"""Configuration: paths, endpoint table, retrieval defaults, embedder.

Config lives in a JSON file (path via --config or TBGRAPHRAG_CONFIG);
secrets are only ever named environment variables, never values in the
file.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .embeddings import HashedTrigramEmbedder
from .generation import (
    LlmEndpoint,
    MockCannedEndpoint,
    MockEchoEndpoint,
    MockFailingEndpoint,
    MockScriptedEndpoint,
    RemoteChatEndpoint,
)
from .models import canonical_json
from .retrieve import RetrievalConfig

CONFIG_ENV_VAR = "TBGRAPHRAG_CONFIG"

DEFAULT_ENDPOINTS: dict[str, dict[str, Any]] = {
    "mock-echo": {"kind": "mock-echo"},
    "mock-canned": {"kind": "mock-canned"},
    "mock-judge": {
        "kind": "mock-scripted",
        "script": ["accuracy: 4\nfactuality: 4\nrationale: consistent with the reference."],
    },
    "mock-qa": {
        "kind": "mock-scripted",
        "script": [
            "Q: What does this passage describe?\n"
            "A: It summarizes key tuberculosis guidance from the source text."
        ],
    },
}


@dataclass
class AppConfig:
    root_dir: Path = field(default_factory=Path.cwd)
    corpus_dir: Path = Path("corpus")
    chunks_path: Path = Path("corpus/chunks.ndjson")
    dataset_dir: Path = Path("dataset")
    index_dir: Path = Path("index")
    graph_path: Path = Path("graph/graph.json")
    eval_runs_dir: Path = Path("eval_runs")
    gazetteer_path: Path | None = None  # None -> packaged TB gazetteer
    seed: int = 7
    window_tokens: int = 512
    overlap_tokens: int = 64
    embedder_seed: int = 42
    embedder_dimension: int = 256
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    endpoints: dict[str, dict[str, Any]] = field(
        default_factory=lambda: {k: dict(v) for k, v in DEFAULT_ENDPOINTS.items()}
    )
    host: str = "127.0.0.1"
    port: int = 8787

    def __post_init__(self) -> None:
        self.root_dir = Path(self.root_dir)
        for name in ("corpus_dir", "chunks_path", "dataset_dir", "index_dir",
                     "graph_path", "eval_runs_dir"):
            value = Path(getattr(self, name))
            if not value.is_absolute():
                value = self.root_dir / value
            setattr(self, name, value)
        if self.gazetteer_path is not None:
            path = Path(self.gazetteer_path)
            self.gazetteer_path = path if path.is_absolute() else self.root_dir / path

    def embedder(self) -> HashedTrigramEmbedder:
        return HashedTrigramEmbedder(seed=self.embedder_seed, dimension=self.embedder_dimension)

    def endpoint(self, name: str):
        if name not in self.endpoints:
            raise KeyError(
                f"endpoint {name!r} is not configured; known: {sorted(self.endpoints)}"
            )
        return build_endpoint(name, self.endpoints[name])

    def to_dict(self) -> dict[str, Any]:
        return {
            "root_dir": str(self.root_dir),
            "corpus_dir": str(self.corpus_dir),
            "chunks_path": str(self.chunks_path),
            "dataset_dir": str(self.dataset_dir),
            "index_dir": str(self.index_dir),
            "graph_path": str(self.graph_path),
            "eval_runs_dir": str(self.eval_runs_dir),
            "gazetteer_path": str(self.gazetteer_path) if self.gazetteer_path else None,
            "seed": self.seed,
            "window_tokens": self.window_tokens,
            "overlap_tokens": self.overlap_tokens,
            "embedder_seed": self.embedder_seed,
            "embedder_dimension": self.embedder_dimension,
            "retrieval": self.retrieval.to_dict(),
            "endpoints": {k: dict(v) for k, v in sorted(self.endpoints.items())},
            "host": self.host,
            "port": self.port,
        }

    def hash(self) -> str:
        """Hash of the behavior-relevant settings (paths excluded)."""
        payload = self.to_dict()
        for key in ("root_dir", "corpus_dir", "chunks_path", "dataset_dir", "index_dir",
                    "graph_path", "eval_runs_dir", "gazetteer_path", "host", "port"):
            payload.pop(key, None)
        return hashlib.sha256(canonical_json(payload).encode("utf-8")).hexdigest()


def load_config(path: Path | str | None = None) -> AppConfig:
    """Load config from a JSON file, the environment, or defaults."""
    if path is None:
        env_path = os.environ.get(CONFIG_ENV_VAR)
        if env_path:
            path = env_path
    if path is None:
        return AppConfig()
    path = Path(path)
    data = json.loads(path.read_text(encoding="utf-8"))
    retrieval = RetrievalConfig(**data["retrieval"]) if "retrieval" in data else RetrievalConfig()
    endpoints = {k: dict(v) for k, v in DEFAULT_ENDPOINTS.items()}
    endpoints.update(data.get("endpoints", {}))
    kwargs = {
        key: data[key]
        for key in (
            "corpus_dir", "chunks_path", "dataset_dir", "index_dir", "graph_path",
            "eval_runs_dir", "gazetteer_path", "seed", "window_tokens", "overlap_tokens",
            "embedder_seed", "embedder_dimension", "host", "port",
        )
        if key in data
    }
    root = Path(data["root_dir"]) if "root_dir" in data else path.resolve().parent
    return AppConfig(root_dir=root, retrieval=retrieval, endpoints=endpoints, **kwargs)


def build_endpoint(name: str, spec: dict[str, Any]):
    """Instantiate an endpoint object from its config table entry."""
    kind = spec.get("kind", "remote")
    if kind == "mock-echo":
        return MockEchoEndpoint(name=name, prefix=spec.get("prefix", "Echo: "))
    if kind == "mock-canned":
        return MockCannedEndpoint(
            name=name,
            answers=spec.get("answers", {}),
            default=spec.get("default", "I do not know."),
        )
    if kind == "mock-scripted":
        return MockScriptedEndpoint(name=name, script=spec.get("script", ["ok"]))
    if kind == "mock-failing":
        return MockFailingEndpoint(name=name, message=spec.get("message", "simulated outage"))
    if kind == "remote":
        config = LlmEndpoint(
            name=name,
            base_url=spec["base_url"],
            model_id=spec["model_id"],
            auth_env=spec.get("auth_env"),
            timeout_seconds=spec.get("timeout_seconds", 60.0),
            max_parallel_requests=spec.get("max_parallel_requests", 4),
        )
        return RemoteChatEndpoint(config, audit_path=spec.get("audit_path"))
    raise ValueError(f"unknown endpoint kind {kind!r} for {name!r}")
