"""Search substrates: Okapi BM25 inverted index and exact dense vector index.

Both are fit-once, then immutable; concurrent read-only queries are safe.
Persistence is a directory with ``bm25.json`` and ``vectors.bin`` whose
bytes are identical across rebuilds from the same inputs.
"""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .embeddings import EmbeddingProvider
from .models import Chunk, canonical_json
from .tokenization import tokenize

BM25_FILE = "bm25.json"
VECTORS_FILE = "vectors.bin"
INDEX_FORMAT_VERSION = 1


class IndexFormatError(Exception):
    """Persisted index file is corrupted or has an unsupported version."""


def _check_fitted(estimator, attribute: str) -> None:
    if not hasattr(estimator, attribute):
        raise NotFittedError(
            f"{type(estimator).__name__} is not fitted; call fit() first"
        )


class Bm25Index(BaseEstimator):
    """Okapi BM25 over chunk texts.

    IDF uses the non-negative ln((N - n + 0.5)/(n + 0.5) + 1) form so tiny
    corpora cannot produce negative scores.
    """

    def __init__(self, k1: float = 1.2, b: float = 0.75):
        self.k1 = k1
        self.b = b

    def fit(self, chunks: Sequence[Chunk]) -> "Bm25Index":
        if not (self.k1 > 0):
            raise ValueError(f"k1 must be > 0, got {self.k1}")
        if not (0.0 <= self.b <= 1.0):
            raise ValueError(f"b must be in [0, 1], got {self.b}")
        if not chunks:
            raise ValueError("cannot build a BM25 index over an empty corpus")
        ordered = sorted(chunks, key=lambda c: c.chunk_id)
        if len({c.chunk_id for c in ordered}) != len(ordered):
            raise ValueError("duplicate chunk ids in corpus")

        postings: dict[str, dict[str, int]] = {}
        doc_lengths: dict[str, int] = {}
        for chunk in ordered:
            terms = tokenize(chunk.text)
            doc_lengths[chunk.chunk_id] = len(terms)
            for term in terms:
                postings.setdefault(term, {})
                postings[term][chunk.chunk_id] = postings[term].get(chunk.chunk_id, 0) + 1

        self.postings_ = {term: postings[term] for term in sorted(postings)}
        self.doc_lengths_ = doc_lengths
        self.n_docs_ = len(doc_lengths)
        self.avgdl_ = sum(doc_lengths.values()) / self.n_docs_
        return self

    def idf(self, term: str) -> float:
        _check_fitted(self, "postings_")
        n = len(self.postings_.get(term, {}))
        return math.log((self.n_docs_ - n + 0.5) / (n + 0.5) + 1.0)

    def score(self, query_terms: Sequence[str], chunk_id: str) -> float:
        _check_fitted(self, "postings_")
        if chunk_id not in self.doc_lengths_:
            raise ValueError(f"unknown chunk: {chunk_id}")
        dl = self.doc_lengths_[chunk_id]
        total = 0.0
        for term in query_terms:
            tf = self.postings_.get(term, {}).get(chunk_id, 0)
            if tf == 0:
                continue
            denom = tf + self.k1 * (1.0 - self.b + self.b * dl / self.avgdl_)
            total += self.idf(term) * tf * (self.k1 + 1.0) / denom
        return total

    def top_k(self, query: str, k: int) -> list[tuple[str, float]]:
        """Top-k chunks by BM25 score, descending, ties broken by chunk_id."""
        _check_fitted(self, "postings_")
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        terms = tokenize(query)
        candidates: set[str] = set()
        for term in terms:
            candidates.update(self.postings_.get(term, {}))
        scored = [(cid, self.score(terms, cid)) for cid in candidates]
        scored.sort(key=lambda item: (-item[1], item[0]))
        return scored[:k]

    def save(self, index_dir: Path | str) -> Path:
        _check_fitted(self, "postings_")
        path = Path(index_dir) / BM25_FILE
        path.parent.mkdir(parents=True, exist_ok=True)
        payload = {
            "format_version": INDEX_FORMAT_VERSION,
            "params": {"k1": self.k1, "b": self.b},
            "postings": {
                term: [[cid, tf] for cid, tf in sorted(by_chunk.items())]
                for term, by_chunk in self.postings_.items()
            },
            "doc_lengths": dict(sorted(self.doc_lengths_.items())),
        }
        path.write_text(canonical_json(payload) + "\n", encoding="utf-8")
        return path

    @classmethod
    def load(cls, index_dir: Path | str) -> "Bm25Index":
        path = Path(index_dir) / BM25_FILE
        try:
            payload = json.loads(path.read_text(encoding="utf-8"))
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise IndexFormatError(f"corrupted BM25 index at {path}: {exc}") from exc
        if payload.get("format_version") != INDEX_FORMAT_VERSION:
            raise IndexFormatError(
                f"unsupported BM25 index version {payload.get('format_version')!r}"
            )
        index = cls(k1=payload["params"]["k1"], b=payload["params"]["b"])
        index.postings_ = {
            term: {cid: int(tf) for cid, tf in entries}
            for term, entries in payload["postings"].items()
        }
        index.doc_lengths_ = {cid: int(n) for cid, n in payload["doc_lengths"].items()}
        index.n_docs_ = len(index.doc_lengths_)
        index.avgdl_ = sum(index.doc_lengths_.values()) / index.n_docs_
        return index


class DenseIndex(BaseEstimator):
    """Exact (brute-force) cosine top-k over unit-normalized chunk embeddings.

    Brute force is the normative backend; an approximate backend must match
    it exactly on corpora of the sizes tested here.
    """

    def __init__(self, embedder: EmbeddingProvider | None = None):
        self.embedder = embedder

    def fit(self, chunks: Sequence[Chunk]) -> "DenseIndex":
        if self.embedder is None:
            raise ValueError("DenseIndex requires an embedder")
        if self.embedder.dimension <= 0:
            raise ValueError("embedder dimension must be positive")
        ordered = sorted(chunks, key=lambda c: c.chunk_id)
        if len({c.chunk_id for c in ordered}) != len(ordered):
            raise ValueError("duplicate chunk ids in corpus")
        try:
            vectors = self.embedder.embed([c.text for c in ordered])
        except Exception:
            self._embed_one_by_one(ordered)  # names the offending chunk
            raise
        norms = np.linalg.norm(vectors, axis=1)
        for chunk, norm in zip(ordered, norms):
            if norm == 0.0:
                raise ValueError(f"embedding failed for chunk {chunk.chunk_id}: zero vector")
        vectors = vectors / norms[:, None]
        self.chunk_ids_ = [c.chunk_id for c in ordered]
        self.matrix_ = vectors.astype(np.float32)
        self.dimension_ = int(self.matrix_.shape[1])
        return self

    def _embed_one_by_one(self, chunks: Sequence[Chunk]) -> None:
        for chunk in chunks:
            try:
                self.embedder.embed([chunk.text])
            except Exception as exc:
                raise ValueError(f"embedding failed for chunk {chunk.chunk_id}: {exc}") from exc

    def __len__(self) -> int:
        _check_fitted(self, "chunk_ids_")
        return len(self.chunk_ids_)

    def vector(self, chunk_id: str) -> np.ndarray:
        _check_fitted(self, "chunk_ids_")
        try:
            row = self.chunk_ids_.index(chunk_id)
        except ValueError:
            raise ValueError(f"unknown chunk: {chunk_id}") from None
        return self.matrix_[row]

    def embed_query(self, text: str) -> np.ndarray:
        if self.embedder is None:
            raise ValueError("no embedder attached to this index")
        vec = self.embedder.embed([text])[0]
        norm = np.linalg.norm(vec)
        return vec / norm if norm > 0 else vec

    def top_k(self, query_vector: np.ndarray, k: int) -> list[tuple[str, float]]:
        """Exact top-k by cosine, descending, ties broken by chunk_id."""
        _check_fitted(self, "matrix_")
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        query_vector = np.asarray(query_vector, dtype=np.float64)
        if query_vector.shape != (self.dimension_,):
            raise ValueError(
                f"query vector dimension {query_vector.shape} != index dimension {self.dimension_}"
            )
        norm = np.linalg.norm(query_vector)
        if norm > 0:
            query_vector = query_vector / norm
        sims = self.matrix_.astype(np.float64) @ query_vector
        scored = sorted(
            zip(self.chunk_ids_, sims.tolist()), key=lambda item: (-item[1], item[0])
        )
        return scored[:k]

    def save(self, index_dir: Path | str) -> Path:
        _check_fitted(self, "matrix_")
        path = Path(index_dir) / VECTORS_FILE
        path.parent.mkdir(parents=True, exist_ok=True)
        header = {
            "format_version": INDEX_FORMAT_VERSION,
            "dimension": self.dimension_,
            "chunk_ids": self.chunk_ids_,
            "dtype": "<f4",
            "embedder": getattr(self.embedder, "name", None),
        }
        with open(path, "wb") as fh:
            fh.write(canonical_json(header).encode("utf-8") + b"\n")
            fh.write(np.ascontiguousarray(self.matrix_, dtype="<f4").tobytes())
        return path

    @classmethod
    def load(cls, index_dir: Path | str, embedder: EmbeddingProvider | None = None) -> "DenseIndex":
        path = Path(index_dir) / VECTORS_FILE
        with open(path, "rb") as fh:
            header_line = fh.readline()
            blob = fh.read()
        try:
            header = json.loads(header_line.decode("utf-8"))
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise IndexFormatError(f"corrupted vector index at {path}: {exc}") from exc
        if header.get("format_version") != INDEX_FORMAT_VERSION:
            raise IndexFormatError(
                f"unsupported vector index version {header.get('format_version')!r}"
            )
        dimension = int(header["dimension"])
        chunk_ids = list(header["chunk_ids"])
        expected = dimension * len(chunk_ids) * 4
        if len(blob) != expected:
            raise IndexFormatError(
                f"vector payload is {len(blob)} bytes, expected {expected}"
            )
        if embedder is not None and header.get("embedder") not in (None, embedder.name):
            raise IndexFormatError(
                f"index was built with embedder {header.get('embedder')!r}, "
                f"got {embedder.name!r}"
            )
        index = cls(embedder=embedder)
        index.matrix_ = np.frombuffer(blob, dtype="<f4").reshape(len(chunk_ids), dimension)
        index.chunk_ids_ = chunk_ids
        index.dimension_ = dimension
        return index
