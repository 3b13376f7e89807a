"""Knowledge graph over gazetteer entities and corpus chunks.

Entity extraction is dictionary matching (case-insensitive, word-boundary,
longest-match-wins) against a curated TB gazetteer; entity-entity links
come from same-chunk co-occurrence and from embedding similarity at a
configurable threshold. The built graph is immutable and safe for
concurrent readers.
"""

from __future__ import annotations

import json
import re
from collections import Counter, deque
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from sklearn.base import BaseEstimator

from .embeddings import EmbeddingProvider
from .models import Chunk, canonical_json

GRAPH_FORMAT_VERSION = 1
ENTITY_CATEGORIES = ("disease", "drug", "symptom", "organism", "procedure", "other")
DEFAULT_LINKING_THRESHOLD = 0.85


class GraphFormatError(Exception):
    """Persisted graph file is corrupted or has an unsupported version."""


@dataclass
class Entity:
    entity_id: str
    canonical_name: str
    aliases: list[str] = field(default_factory=list)
    category: str = "other"
    embedding: list[float] | None = None

    def __post_init__(self) -> None:
        self.canonical_name = self.canonical_name.lower()
        if self.category not in ENTITY_CATEGORIES:
            raise ValueError(f"unknown entity category: {self.category!r}")
        seen: dict[str, None] = {}
        for alias in self.aliases:
            seen.setdefault(alias, None)
        self.aliases = list(seen)

    def surface_forms(self) -> list[str]:
        forms = {self.canonical_name: None}
        for alias in self.aliases:
            forms.setdefault(alias, None)
        return list(forms)

    def to_dict(self) -> dict:
        return {
            "entity_id": self.entity_id,
            "canonical_name": self.canonical_name,
            "aliases": list(self.aliases),
            "category": self.category,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Entity":
        return cls(
            entity_id=data["entity_id"],
            canonical_name=data["canonical_name"],
            aliases=list(data.get("aliases", [])),
            category=data.get("category", "other"),
        )


@dataclass(frozen=True)
class Mention:
    entity_id: str
    chunk_id: str
    char_start: int
    char_end: int


@dataclass(frozen=True)
class GraphEdge:
    src: str
    dst: str
    kind: str  # mentions | cooccurs | similar_to
    weight: float

    def to_list(self) -> list:
        return [self.src, self.dst, self.kind, self.weight]


@dataclass
class GraphConfig:
    linking_threshold: float = DEFAULT_LINKING_THRESHOLD
    cooccur_window: str = "same_chunk"

    def __post_init__(self) -> None:
        if not (0.0 <= self.linking_threshold <= 1.0):
            raise ValueError(
                f"linking_threshold must be in [0, 1], got {self.linking_threshold}"
            )
        if self.cooccur_window != "same_chunk":
            raise ValueError(f"unsupported cooccur_window: {self.cooccur_window!r}")


@dataclass
class KnowledgeGraph:
    entities: list[Entity] = field(default_factory=list)
    chunk_ids: list[str] = field(default_factory=list)
    edges: list[GraphEdge] = field(default_factory=list)

    @cached_property
    def _entity_map(self) -> dict[str, Entity]:
        return {e.entity_id: e for e in self.entities}

    @cached_property
    def _adjacency(self) -> dict[str, set[str]]:
        adj: dict[str, set[str]] = {}
        for edge in self.edges:
            if edge.kind in ("cooccurs", "similar_to"):
                adj.setdefault(edge.src, set()).add(edge.dst)
                adj.setdefault(edge.dst, set()).add(edge.src)
        return adj

    @cached_property
    def _entity_chunks(self) -> dict[str, dict[str, float]]:
        by_entity: dict[str, dict[str, float]] = {}
        for edge in self.edges:
            if edge.kind == "mentions":
                by_entity.setdefault(edge.src, {})[edge.dst] = edge.weight
        return by_entity

    def entity(self, entity_id: str) -> Entity | None:
        return self._entity_map.get(entity_id)

    def has_entity(self, entity_id: str) -> bool:
        return entity_id in self._entity_map

    def neighbors(self, entity_id: str, depth: int = 1) -> set[str]:
        """Entities reachable via <= depth cooccurs/similar_to edges, seed excluded.

        Unknown entities yield an empty set: query entities may simply be
        absent from the graph.
        """
        if depth < 1:
            raise ValueError(f"depth must be >= 1, got {depth}")
        if entity_id not in self._entity_map:
            return set()
        seen = {entity_id}
        frontier = deque([(entity_id, 0)])
        result: set[str] = set()
        while frontier:
            node, dist = frontier.popleft()
            if dist == depth:
                continue
            for nxt in self._adjacency.get(node, ()):
                if nxt not in seen:
                    seen.add(nxt)
                    result.add(nxt)
                    frontier.append((nxt, dist + 1))
        return result

    def chunks_mentioning(self, entity_id: str) -> dict[str, float]:
        """chunk_id -> mention count for one entity."""
        return dict(self._entity_chunks.get(entity_id, {}))

    def mention_stats(self, entity_id: str) -> tuple[int, int]:
        """(number of chunks with a mention, total mention count)."""
        chunks = self._entity_chunks.get(entity_id, {})
        return len(chunks), int(sum(chunks.values()))


# ---------------------------------------------------------------------------
# Entity extraction

_WORD_RE = re.compile(r"\w", re.UNICODE)


def _compile_surface_patterns(gazetteer: Sequence[Entity]) -> list[tuple[re.Pattern, str, int]]:
    patterns = []
    for entity in gazetteer:
        for form in entity.surface_forms():
            if not form.strip():
                continue
            patterns.append(
                (re.compile(rf"\b{re.escape(form)}\b", re.IGNORECASE), entity.entity_id, len(form))
            )
    return patterns


def extract_entities(chunk: Chunk, gazetteer: Sequence[Entity]) -> list[Mention]:
    """Gazetteer mentions in a chunk, longest match wins, leftmost on ties."""
    if not gazetteer:
        raise ValueError("gazetteer must be non-empty")
    candidates: list[tuple[int, int, str]] = []
    for pattern, entity_id, _ in _compile_surface_patterns(gazetteer):
        for match in pattern.finditer(chunk.text):
            candidates.append((match.start(), match.end(), entity_id))
    # Longest span first, then leftmost, then entity id for determinism.
    candidates.sort(key=lambda c: (-(c[1] - c[0]), c[0], c[2]))
    accepted: list[tuple[int, int, str]] = []
    for start, end, entity_id in candidates:
        if all(end <= a_start or start >= a_end for a_start, a_end, _ in accepted):
            accepted.append((start, end, entity_id))
    accepted.sort(key=lambda c: c[0])
    return [
        Mention(entity_id=eid, chunk_id=chunk.chunk_id, char_start=s, char_end=e)
        for s, e, eid in accepted
    ]


def link_entities(
    entities: Sequence[Entity],
    embedder: EmbeddingProvider,
    threshold: float = DEFAULT_LINKING_THRESHOLD,
) -> list[GraphEdge]:
    """similar_to edges between entities whose name embeddings reach the threshold.

    Edges are undirected; each qualifying pair appears once with src < dst
    and weight equal to the cosine similarity.
    """
    if not (0.0 <= threshold <= 1.0):
        raise ValueError(f"threshold must be in [0, 1], got {threshold}")
    if not entities:
        return []
    names = [e.canonical_name for e in entities]
    try:
        vectors = embedder.embed(names)
    except Exception as exc:
        for entity in entities:
            try:
                embedder.embed([entity.canonical_name])
            except Exception:
                raise ValueError(
                    f"embedding failed for entity {entity.entity_id}"
                ) from exc
        raise
    norms = np.linalg.norm(vectors, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    unit = vectors / norms
    sims = unit @ unit.T
    edges = []
    for i in range(len(entities)):
        for j in range(i + 1, len(entities)):
            sim = float(sims[i, j])
            if sim >= threshold:
                a, b = sorted((entities[i].entity_id, entities[j].entity_id))
                edges.append(GraphEdge(src=a, dst=b, kind="similar_to", weight=sim))
    edges.sort(key=lambda e: (e.src, e.dst))
    return edges


def build_graph(
    chunks: Sequence[Chunk],
    mentions: Sequence[Mention],
    similar_edges: Sequence[GraphEdge] = (),
    entities: Sequence[Entity] = (),
) -> KnowledgeGraph:
    """Assemble the graph: mention edges, same-chunk co-occurrence, similarity links."""
    chunk_ids = sorted({c.chunk_id for c in chunks})
    chunk_set = set(chunk_ids)
    dangling = sorted({m.chunk_id for m in mentions if m.chunk_id not in chunk_set})
    if dangling:
        raise ValueError(f"mentions reference unknown chunks: {dangling}")

    mention_counts: Counter[tuple[str, str]] = Counter()
    entities_by_chunk: dict[str, set[str]] = {}
    for mention in mentions:
        mention_counts[(mention.entity_id, mention.chunk_id)] += 1
        entities_by_chunk.setdefault(mention.chunk_id, set()).add(mention.entity_id)

    cooccur: Counter[tuple[str, str]] = Counter()
    for chunk_entities in entities_by_chunk.values():
        ordered = sorted(chunk_entities)
        for i in range(len(ordered)):
            for j in range(i + 1, len(ordered)):
                cooccur[(ordered[i], ordered[j])] += 1

    edges = [
        GraphEdge(src=eid, dst=cid, kind="mentions", weight=float(n))
        for (eid, cid), n in mention_counts.items()
    ]
    edges.extend(
        GraphEdge(src=a, dst=b, kind="cooccurs", weight=float(n))
        for (a, b), n in cooccur.items()
    )
    edges.extend(similar_edges)
    edges.sort(key=lambda e: (e.kind, e.src, e.dst))

    graph_entities = sorted(
        (
            Entity(
                entity_id=e.entity_id,
                canonical_name=e.canonical_name,
                aliases=list(e.aliases),
                category=e.category,
            )
            for e in entities
        ),
        key=lambda e: e.entity_id,
    )
    return KnowledgeGraph(entities=graph_entities, chunk_ids=chunk_ids, edges=edges)


class KnowledgeGraphBuilder(BaseEstimator):
    """Extract mentions over a chunk corpus and fit the knowledge graph."""

    def __init__(
        self,
        gazetteer: Sequence[Entity] | None = None,
        embedder: EmbeddingProvider | None = None,
        linking_threshold: float = DEFAULT_LINKING_THRESHOLD,
    ):
        self.gazetteer = gazetteer
        self.embedder = embedder
        self.linking_threshold = linking_threshold

    def fit(self, chunks: Sequence[Chunk]) -> "KnowledgeGraphBuilder":
        gazetteer = list(self.gazetteer) if self.gazetteer is not None else default_gazetteer()
        mentions: list[Mention] = []
        for chunk in sorted(chunks, key=lambda c: c.chunk_id):
            mentions.extend(extract_entities(chunk, gazetteer))
        similar = (
            link_entities(gazetteer, self.embedder, self.linking_threshold)
            if self.embedder is not None
            else []
        )
        self.mentions_ = mentions
        self.graph_ = build_graph(chunks, mentions, similar, gazetteer)
        return self


# ---------------------------------------------------------------------------
# Persistence

def save_graph(graph: KnowledgeGraph, path: Path | str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format_version": GRAPH_FORMAT_VERSION,
        "entities": [e.to_dict() for e in graph.entities],
        "chunk_ids": list(graph.chunk_ids),
        "edges": [e.to_list() for e in graph.edges],
    }
    path.write_text(canonical_json(payload) + "\n", encoding="utf-8")
    return path


def load_graph(path: Path | str) -> KnowledgeGraph:
    path = Path(path)
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise GraphFormatError(f"corrupted graph file {path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("format_version") != GRAPH_FORMAT_VERSION:
        raise GraphFormatError(
            f"unsupported graph format version in {path}: "
            f"{payload.get('format_version') if isinstance(payload, dict) else payload!r}"
        )
    return KnowledgeGraph(
        entities=[Entity.from_dict(e) for e in payload["entities"]],
        chunk_ids=list(payload["chunk_ids"]),
        edges=[
            GraphEdge(src=src, dst=dst, kind=kind, weight=float(weight))
            for src, dst, kind, weight in payload["edges"]
        ],
    )


# ---------------------------------------------------------------------------
# Gazetteer files (newline-delimited JSON, one entity per line)

def load_gazetteer(path: Path | str) -> list[Entity]:
    entities = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                entities.append(Entity.from_dict(json.loads(line)))
    entities.sort(key=lambda e: e.entity_id)
    return entities


def save_gazetteer(entities: Iterable[Entity], path: Path | str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for entity in sorted(entities, key=lambda e: e.entity_id):
            fh.write(canonical_json(entity.to_dict()) + "\n")


def default_gazetteer() -> list[Entity]:
    """The TB gazetteer shipped with the package."""
    data = resources.files("tbgraphrag").joinpath("data/tb_gazetteer.ndjson").read_text("utf-8")
    entities = [Entity.from_dict(json.loads(line)) for line in data.splitlines() if line.strip()]
    entities.sort(key=lambda e: e.entity_id)
    return entities
