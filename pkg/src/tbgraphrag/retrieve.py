"""Hybrid retrieval: BM25 + dense channels fused by weighted reciprocal-rank
fusion, with knowledge-graph entity expansion as a third channel.

Rank fusion is used because BM25 scores and cosine similarities live on
incomparable scales; only rank positions are combined. Retrieval is a pure
function of (query, indexes, graph, config) apart from the measured latency.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Collection, Mapping, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .embeddings import EmbeddingProvider
from .graph import Entity, KnowledgeGraph, KnowledgeGraphBuilder, Mention, extract_entities
from .index import Bm25Index, DenseIndex
from .models import Chunk

DEFAULT_RRF_K = 60.0
DEFAULT_RELEVANCE_THRESHOLD = 0.2
CHANNELS = ("lexical", "dense", "graph")


@dataclass
class RetrievalConfig:
    k: int = 5
    k_rrf: float = DEFAULT_RRF_K
    channel_weights: dict[str, float] = field(
        default_factory=lambda: {"lexical": 1.0, "dense": 1.0, "graph": 1.0}
    )
    expansion_depth: int = 1
    max_expanded_chunks: int | None = None  # None -> 2 * k
    graph_enabled: bool = True

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if not self.k_rrf > 0:
            raise ValueError(f"k_rrf must be > 0, got {self.k_rrf}")
        unknown = set(self.channel_weights) - set(CHANNELS)
        if unknown:
            raise ValueError(f"unknown channels in weights: {sorted(unknown)}")
        if any(w < 0 for w in self.channel_weights.values()):
            raise ValueError("channel weights must be non-negative")

    def weight(self, channel: str) -> float:
        return self.channel_weights.get(channel, 1.0)

    def expansion_limit(self) -> int:
        return self.max_expanded_chunks if self.max_expanded_chunks is not None else 2 * self.k

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "k_rrf": self.k_rrf,
            "channel_weights": dict(sorted(self.channel_weights.items())),
            "expansion_depth": self.expansion_depth,
            "max_expanded_chunks": self.max_expanded_chunks,
            "graph_enabled": self.graph_enabled,
        }


@dataclass
class RetrievedChunk:
    chunk_id: str
    fused_score: float
    lexical_rank: int | None = None
    dense_rank: int | None = None
    via_entities: list[str] = field(default_factory=list)
    channels: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "chunk_id": self.chunk_id,
            "fused_score": self.fused_score,
            "lexical_rank": self.lexical_rank,
            "dense_rank": self.dense_rank,
            "via_entities": list(self.via_entities),
            "channels": list(self.channels),
        }


@dataclass
class RetrievalResult:
    query: str
    chunks: list[RetrievedChunk]
    entities_used: int
    latency_seconds: float

    def chunk_ids(self) -> list[str]:
        return [c.chunk_id for c in self.chunks]

    def to_dict(self) -> dict:
        return {
            "query": self.query,
            "chunks": [c.to_dict() for c in self.chunks],
            "entities_used": self.entities_used,
            "latency_seconds": self.latency_seconds,
        }


def fuse_rrf(
    rankings: Sequence[Sequence[str]],
    weights: Sequence[float] | None = None,
    k_rrf: float = DEFAULT_RRF_K,
) -> list[tuple[str, float]]:
    """Weighted reciprocal-rank fusion over ranked id lists.

    fused(d) = sum over channels of weight / (k_rrf + rank(d)), ranks
    1-based; an id absent from a channel contributes nothing there.
    """
    if not rankings:
        raise ValueError("rankings must be non-empty")
    if weights is None:
        weights = [1.0] * len(rankings)
    if len(weights) != len(rankings):
        raise ValueError("weights must align with rankings")
    scores: dict[str, float] = {}
    for ranking, weight in zip(rankings, weights):
        for rank, item in enumerate(ranking, start=1):
            scores[item] = scores.get(item, 0.0) + weight / (k_rrf + rank)
    fused = sorted(scores.items(), key=lambda item: (-item[1], item[0]))
    return fused


def graph_expand(
    query_mentions: Sequence[Mention],
    graph: KnowledgeGraph,
    depth: int = 1,
    limit: int = 10,
    allowed_chunks: Collection[str] | None = None,
) -> list[tuple[str, list[str]]]:
    """Chunks reachable through entity neighborhoods of the query entities.

    For every query entity, its graph neighbors (within ``depth``) vote for
    the chunks that mention them. Output is ordered by supporting-entity
    count (desc) then chunk_id, truncated to ``limit``.
    """
    query_entities = sorted({m.entity_id for m in query_mentions})
    if not query_entities:
        return []
    neighbor_ids: set[str] = set()
    for entity_id in query_entities:
        neighbor_ids |= graph.neighbors(entity_id, depth=depth)
    supporters: dict[str, set[str]] = {}
    for neighbor in sorted(neighbor_ids):
        for chunk_id in graph.chunks_mentioning(neighbor):
            if allowed_chunks is not None and chunk_id not in allowed_chunks:
                continue
            supporters.setdefault(chunk_id, set()).add(neighbor)
    ordered = sorted(supporters.items(), key=lambda item: (-len(item[1]), item[0]))
    return [(chunk_id, sorted(entities)) for chunk_id, entities in ordered[:limit]]


class HybridRetriever(BaseEstimator):
    """Fit BM25 + dense indexes and the knowledge graph over one chunk corpus,
    then answer queries with fused, provenance-rich rankings.
    """

    def __init__(
        self,
        embedder: EmbeddingProvider | None = None,
        config: RetrievalConfig | None = None,
        gazetteer: Sequence[Entity] | None = None,
        k1: float = 1.2,
        b: float = 0.75,
        linking_threshold: float = 0.85,
    ):
        self.embedder = embedder
        self.config = config
        self.gazetteer = gazetteer
        self.k1 = k1
        self.b = b
        self.linking_threshold = linking_threshold

    def fit(self, chunks: Sequence[Chunk]) -> "HybridRetriever":
        builder = KnowledgeGraphBuilder(
            gazetteer=self.gazetteer,
            embedder=self.embedder,
            linking_threshold=self.linking_threshold,
        ).fit(chunks)
        self._attach(
            chunks=chunks,
            bm25=Bm25Index(k1=self.k1, b=self.b).fit(chunks),
            dense=DenseIndex(embedder=self.embedder).fit(chunks),
            graph=builder.graph_,
            gazetteer=builder.graph_.entities,
        )
        return self

    @classmethod
    def from_artifacts(
        cls,
        chunks: Sequence[Chunk],
        bm25: Bm25Index,
        dense: DenseIndex,
        graph: KnowledgeGraph | None = None,
        gazetteer: Sequence[Entity] | None = None,
        config: RetrievalConfig | None = None,
        embedder: EmbeddingProvider | None = None,
    ) -> "HybridRetriever":
        """Assemble a retriever from separately built / loaded artifacts."""
        retriever = cls(embedder=embedder or dense.embedder, config=config)
        retriever._attach(
            chunks=chunks,
            bm25=bm25,
            dense=dense,
            graph=graph,
            gazetteer=gazetteer if gazetteer is not None else (graph.entities if graph else []),
        )
        return retriever

    def _attach(self, chunks, bm25, dense, graph, gazetteer) -> None:
        self.chunks_ = {c.chunk_id: c for c in chunks}
        self.bm25_ = bm25
        self.dense_ = dense
        self.graph_ = graph
        self.gazetteer_ = list(gazetteer)

    def chunk(self, chunk_id: str) -> Chunk:
        return self.chunks_[chunk_id]

    def query_mentions(self, query: str) -> list[Mention]:
        if not self.gazetteer_:
            return []
        probe = Chunk(
            chunk_id="__query__", doc_id="__query__", section_heading="",
            text=query, token_count=max(1, len(query.split())), position=0,
        )
        return extract_entities(probe, self.gazetteer_)

    def retrieve(
        self,
        query: str,
        config: RetrievalConfig | None = None,
        clock: Callable[[], float] | None = None,
    ) -> RetrievalResult:
        if not hasattr(self, "bm25_"):
            raise NotFittedError("HybridRetriever is not fitted; call fit() first")
        cfg = config or self.config or RetrievalConfig()
        clock = clock or time.perf_counter
        started = clock()

        pool = 2 * cfg.k
        lexical = [cid for cid, _ in self.bm25_.top_k(query, pool)]
        dense = [cid for cid, _ in self.dense_.top_k(self.dense_.embed_query(query), pool)]

        rankings = [lexical, dense]
        weights = [cfg.weight("lexical"), cfg.weight("dense")]
        mentions: list[Mention] = []
        via: dict[str, list[str]] = {}
        graph_ranked: list[str] = []
        if cfg.graph_enabled and self.graph_ is not None:
            mentions = self.query_mentions(query)
            expansion = graph_expand(
                mentions,
                self.graph_,
                depth=cfg.expansion_depth,
                limit=cfg.expansion_limit(),
                allowed_chunks=self.chunks_.keys(),
            )
            graph_ranked = [cid for cid, _ in expansion]
            via = {cid: entities for cid, entities in expansion}
            rankings.append(graph_ranked)
            weights.append(cfg.weight("graph"))

        fused = fuse_rrf(rankings, weights, cfg.k_rrf)[:cfg.k]

        retrieved = []
        for chunk_id, score in fused:
            channels = []
            lexical_rank = lexical.index(chunk_id) + 1 if chunk_id in lexical else None
            dense_rank = dense.index(chunk_id) + 1 if chunk_id in dense else None
            if lexical_rank is not None:
                channels.append("lexical")
            if dense_rank is not None:
                channels.append("dense")
            via_entities = via.get(chunk_id, []) if chunk_id in graph_ranked else []
            if chunk_id in graph_ranked:
                channels.append("graph")
            retrieved.append(
                RetrievedChunk(
                    chunk_id=chunk_id,
                    fused_score=score,
                    lexical_rank=lexical_rank,
                    dense_rank=dense_rank,
                    via_entities=via_entities,
                    channels=channels,
                )
            )

        used = {m.entity_id for m in mentions}
        for item in retrieved:
            used.update(item.via_entities)

        return RetrievalResult(
            query=query,
            chunks=retrieved,
            entities_used=len(used),
            latency_seconds=clock() - started,
        )


def recall_at_k(
    results: Mapping[str, RetrievalResult],
    gold: Mapping[str, Collection[str]],
    k: int,
) -> float:
    """Fraction of queries whose top-k contains any gold chunk."""
    if not results:
        raise ValueError("no retrieval results to score")
    hits = 0
    for record_id, result in results.items():
        if record_id not in gold:
            raise ValueError(f"no gold chunks for record {record_id}")
        gold_ids = set(gold[record_id])
        if any(c.chunk_id in gold_ids for c in result.chunks[:k]):
            hits += 1
    return hits / len(results)


def context_relevance(
    result: RetrievalResult,
    query_vector: np.ndarray,
    dense_index: DenseIndex,
    threshold: float = DEFAULT_RELEVANCE_THRESHOLD,
) -> float:
    """Fraction of retrieved chunks whose cosine to the query exceeds the threshold.

    This is an artifact-defined proxy (threshold fraction over the shared
    embedding space) and is labeled as such in reports.
    """
    if not result.chunks:
        return 0.0
    query_vector = np.asarray(query_vector, dtype=np.float64)
    norm = np.linalg.norm(query_vector)
    if norm > 0:
        query_vector = query_vector / norm
    relevant = 0
    for item in result.chunks:
        sim = float(np.dot(dense_index.vector(item.chunk_id).astype(np.float64), query_vector))
        if sim > threshold:
            relevant += 1
    return relevant / len(result.chunks)
