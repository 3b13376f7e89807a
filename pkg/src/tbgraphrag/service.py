"""HTTP facade: query answering, graph inspection, ingestion jobs, reports.

Read endpoints are side-effect-free. Ingestion builds a whole new
retriever generation off the request path and swaps it in atomically
(single reference assignment), so queries never observe a half-built
index; one ingestion job runs at a time and later submissions queue.
"""

from __future__ import annotations

import json
import logging
import queue
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .config import AppConfig
from .generation import RAG_TEMPLATE, GenerationError, GenerationRequest, generate
from .graph import default_gazetteer, load_gazetteer
from .ingest import chunk_corpus, load_corpus
from .retrieve import HybridRetriever, RetrievalConfig

logger = logging.getLogger(__name__)


@dataclass
class Generation:
    generation_id: str
    retriever: HybridRetriever
    n_chunks: int


class QueryBody(BaseModel):
    question: str
    top_k: int = 5
    use_graph: bool = True
    endpoint_name: str = "mock-echo"


class IngestBody(BaseModel):
    corpus_dir: str


def build_generation(config: AppConfig, corpus_dir: Path, generation_id: str) -> Generation:
    docs = load_corpus(corpus_dir)
    if not docs:
        raise ValueError(f"no documents found under {corpus_dir}")
    chunks = chunk_corpus(docs, config.window_tokens, config.overlap_tokens)
    if not chunks:
        raise ValueError(f"documents under {corpus_dir} produced no chunks")
    gazetteer = (
        load_gazetteer(config.gazetteer_path)
        if config.gazetteer_path
        else default_gazetteer()
    )
    retriever = HybridRetriever(
        embedder=config.embedder(),
        config=config.retrieval,
        gazetteer=gazetteer,
    ).fit(chunks)
    return Generation(generation_id=generation_id, retriever=retriever, n_chunks=len(chunks))


class GenerationStore:
    """Holds the serving generation and runs ingestion jobs one at a time."""

    def __init__(self, config: AppConfig):
        self.config = config
        self.current: Generation | None = None
        self.jobs: dict[str, dict[str, Any]] = {}
        self._counter = 0
        self._queue: queue.Queue[tuple[str, Path]] = queue.Queue()
        self._worker: threading.Thread | None = None
        self._lock = threading.Lock()

    def next_generation_id(self) -> str:
        with self._lock:
            self._counter += 1
            return f"gen-{self._counter}"

    def submit_ingest(self, corpus_dir: Path) -> str:
        with self._lock:
            job_id = f"job-{len(self.jobs) + 1:04d}"
            self.jobs[job_id] = {"job_id": job_id, "status": "queued", "message": ""}
        self._queue.put((job_id, corpus_dir))
        self._ensure_worker()
        return job_id

    def _ensure_worker(self) -> None:
        with self._lock:
            if self._worker is None or not self._worker.is_alive():
                self._worker = threading.Thread(target=self._run_jobs, daemon=True)
                self._worker.start()

    def _run_jobs(self) -> None:
        while True:
            try:
                job_id, corpus_dir = self._queue.get(timeout=0.5)
            except queue.Empty:
                return
            job = self.jobs[job_id]
            job["status"] = "running"
            try:
                generation = build_generation(
                    self.config, corpus_dir, self.next_generation_id()
                )
            except Exception as exc:
                logger.warning("ingest job %s failed: %s", job_id, exc)
                job["status"] = "failed"
                job["message"] = str(exc)
                continue
            self.current = generation  # atomic swap
            job["status"] = "done"
            job["generation_id"] = generation.generation_id
            job["n_chunks"] = generation.n_chunks


def _context_payload(generation: Generation, retrieval) -> list[dict[str, Any]]:
    contexts = []
    for item in retrieval.chunks:
        chunk = generation.retriever.chunk(item.chunk_id)
        contexts.append(
            {
                "chunk_id": chunk.chunk_id,
                "doc_id": chunk.doc_id,
                "section_heading": chunk.section_heading,
                "text": chunk.text,
                "fused_score": item.fused_score,
                "via_entities": list(item.via_entities),
            }
        )
    return contexts


def create_app(config: AppConfig | None = None, autoload: bool = False) -> FastAPI:
    config = config or AppConfig()
    app = FastAPI(title="tbgraphrag")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )
    store = GenerationStore(config)
    app.state.store = store
    app.state.config = config

    if autoload:
        try:
            store.current = build_generation(
                config, config.corpus_dir, store.next_generation_id()
            )
        except Exception as exc:
            logger.warning("startup corpus load skipped: %s", exc)

    @app.get("/health")
    def health() -> dict[str, Any]:
        generation = store.current
        return {
            "status": "ok",
            "generation_id": generation.generation_id if generation else None,
        }

    @app.post("/api/query")
    def query(body: QueryBody):
        generation = store.current  # one generation per request, never torn
        if generation is None:
            return JSONResponse(status_code=503, content={"error": "no index generation loaded"})
        if body.top_k < 1:
            return JSONResponse(
                status_code=400, content={"error": f"top_k must be >= 1, got {body.top_k}"}
            )
        if not body.question.strip():
            return JSONResponse(status_code=400, content={"error": "question must be non-empty"})
        try:
            endpoint = config.endpoint(body.endpoint_name)
        except KeyError as exc:
            return JSONResponse(status_code=400, content={"error": str(exc)})

        base = config.retrieval
        retrieval_config = RetrievalConfig(
            k=body.top_k,
            k_rrf=base.k_rrf,
            channel_weights=dict(base.channel_weights),
            expansion_depth=base.expansion_depth,
            max_expanded_chunks=base.max_expanded_chunks,
            graph_enabled=body.use_graph,
        )
        echo = {
            "top_k": body.top_k,
            "use_graph": body.use_graph,
            "generator": body.endpoint_name,
            "generation_id": generation.generation_id,
        }
        retrieval = generation.retriever.retrieve(body.question, config=retrieval_config)
        context = RAG_TEMPLATE.context_separator.join(
            generation.retriever.chunk(c.chunk_id).text for c in retrieval.chunks
        )
        request = GenerationRequest(
            messages=RAG_TEMPLATE.render(body.question, context=context),
            temperature=0.0,
            want_logprobs=False,
        )
        try:
            response = generate(endpoint, request)
        except GenerationError as exc:
            return JSONResponse(
                status_code=502,
                content={
                    "error": str(exc),
                    "contexts": _context_payload(generation, retrieval),
                    "entities_used": retrieval.entities_used,
                    "latency_seconds": retrieval.latency_seconds,
                    "config": echo,
                },
            )
        return {
            "answer": response.text,
            "contexts": _context_payload(generation, retrieval),
            "entities_used": retrieval.entities_used,
            "latency_seconds": retrieval.latency_seconds + response.latency_seconds,
            "config": echo,
        }

    @app.get("/api/graph/entity/{entity_id}")
    def entity_card(entity_id: str):
        generation = store.current
        if generation is None:
            return JSONResponse(status_code=503, content={"error": "no index generation loaded"})
        graph = generation.retriever.graph_
        if graph is None or not graph.has_entity(entity_id):
            return JSONResponse(status_code=404, content={"error": f"unknown entity {entity_id!r}"})
        entity = graph.entity(entity_id)
        neighbor_ids = sorted(graph.neighbors(entity_id, depth=1))
        chunk_count, total_mentions = graph.mention_stats(entity_id)
        return {
            "entity_id": entity.entity_id,
            "canonical_name": entity.canonical_name,
            "category": entity.category,
            "aliases": entity.aliases,
            "neighbors": [
                {
                    "entity_id": nid,
                    "canonical_name": graph.entity(nid).canonical_name if graph.entity(nid) else nid,
                }
                for nid in neighbor_ids
            ],
            "mention_chunk_count": chunk_count,
            "mention_total": total_mentions,
        }

    @app.post("/api/ingest")
    def ingest(body: IngestBody):
        job_id = store.submit_ingest(Path(body.corpus_dir))
        return {"job_id": job_id}

    @app.get("/api/jobs/{job_id}")
    def job_status(job_id: str):
        job = store.jobs.get(job_id)
        if job is None:
            return JSONResponse(status_code=404, content={"error": f"unknown job {job_id!r}"})
        return job

    @app.get("/api/reports")
    def list_reports():
        runs = []
        root = config.eval_runs_dir
        if root.is_dir():
            runs = sorted(p.name for p in root.iterdir() if (p / "report.json").is_file())
        return {"runs": runs}

    @app.get("/api/reports/{run_id}")
    def get_report(run_id: str):
        if "/" in run_id or ".." in run_id:
            return JSONResponse(status_code=404, content={"error": "unknown run"})
        path = config.eval_runs_dir / run_id / "report.json"
        if not path.is_file():
            return JSONResponse(status_code=404, content={"error": f"unknown run {run_id!r}"})
        return json.loads(path.read_text(encoding="utf-8"))

    return app
