"""Embedding providers.

The deterministic local embedder (hashed character trigrams pushed
through a seeded random projection) keeps every test and offline run
network-free; remote/biomedical embedding models plug in behind the same
contract.
"""

from __future__ import annotations

import hashlib
from typing import Protocol, Sequence, runtime_checkable

import numpy as np


@runtime_checkable
class EmbeddingProvider(Protocol):
    name: str
    dimension: int

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        """Return one vector per text, shape (len(texts), dimension)."""
        ...


class HashedTrigramEmbedder:
    """Deterministic character-trigram embedder.

    Trigram counts are hashed into ``n_buckets`` and projected through a
    seeded Gaussian random matrix, then unit-normalized. Same text always
    maps to the same vector; texts sharing trigrams land closer than
    unrelated texts.
    """

    def __init__(self, seed: int = 42, dimension: int = 256, n_buckets: int = 4096):
        if dimension < 16:
            raise ValueError(f"dimension must be >= 16, got {dimension}")
        self.seed = seed
        self.dimension = dimension
        self.n_buckets = n_buckets
        self.name = f"hashed-trigram(seed={seed},dim={dimension})"
        self._projection: np.ndarray | None = None

    def _matrix(self) -> np.ndarray:
        if self._projection is None:
            rng = np.random.default_rng(self.seed)
            self._projection = rng.standard_normal((self.n_buckets, self.dimension))
        return self._projection

    def _bucket(self, trigram: str) -> int:
        digest = hashlib.blake2b(trigram.encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "big") % self.n_buckets

    def counts(self, text: str) -> np.ndarray:
        # Double boundary markers guarantee at least one trigram for any text.
        padded = f"^^{text.lower()}$$"
        counts = np.zeros(self.n_buckets, dtype=np.float64)
        for i in range(len(padded) - 2):
            counts[self._bucket(padded[i:i + 3])] += 1.0
        return counts

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        if not len(texts):
            return np.zeros((0, self.dimension), dtype=np.float64)
        counts = np.stack([self.counts(t) for t in texts])
        vectors = counts @ self._matrix()
        norms = np.linalg.norm(vectors, axis=1, keepdims=True)
        norms[norms == 0.0] = 1.0
        return vectors / norms


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = float(np.linalg.norm(a)), float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))
