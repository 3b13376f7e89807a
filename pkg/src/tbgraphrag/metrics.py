"""Text-generation metrics: ROUGE-L, bag-of-tokens F1, embedding-based
token-matching F1, and predicted-sequence perplexity.
"""

from __future__ import annotations

import logging
import math
from collections import Counter
from typing import Sequence

import numpy as np

from .embeddings import EmbeddingProvider
from .tokenization import tokenize

logger = logging.getLogger(__name__)


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    """Longest common subsequence length, O(len(a) * len(b))."""
    if not a or not b:
        return 0
    previous = [0] * (len(b) + 1)
    for token_a in a:
        current = [0] * (len(b) + 1)
        for j, token_b in enumerate(b, start=1):
            if token_a == token_b:
                current[j] = previous[j - 1] + 1
            else:
                current[j] = max(previous[j], current[j - 1])
        previous = current
    return previous[-1]


def rouge_l(candidate: str, reference: str) -> float:
    """LCS F-measure over tokens: P = LCS/|cand|, R = LCS/|ref|, F = 2PR/(P+R)."""
    cand = tokenize(candidate)
    ref = tokenize(reference)
    if not cand or not ref:
        return 0.0
    lcs = lcs_length(cand, ref)
    if lcs == 0:
        return 0.0
    precision = lcs / len(cand)
    recall = lcs / len(ref)
    return 2 * precision * recall / (precision + recall)


def token_f1(candidate: str, reference: str) -> float:
    """Harmonic mean of multiset token overlap precision and recall."""
    cand = Counter(tokenize(candidate))
    ref = Counter(tokenize(reference))
    total_cand = sum(cand.values())
    total_ref = sum(ref.values())
    if total_cand == 0 or total_ref == 0:
        return 0.0
    overlap = sum((cand & ref).values())
    if overlap == 0:
        return 0.0
    precision = overlap / total_cand
    recall = overlap / total_ref
    return 2 * precision * recall / (precision + recall)


def bert_f1(candidate: str, reference: str, embedder: EmbeddingProvider) -> float:
    """Greedy token-level embedding match, aggregated as an F-measure.

    Precision is the mean over candidate tokens of the best cosine against
    reference tokens; recall is symmetric; the result is clamped to [0, 1].
    Empty texts score 0 with a warning, mirroring strict metrics.
    """
    cand = tokenize(candidate)
    ref = tokenize(reference)
    if not cand or not ref:
        logger.warning("empty text in semantic F1; scoring 0.0")
        return 0.0
    vocabulary = sorted(set(cand) | set(ref))
    vectors = embedder.embed(vocabulary)
    norms = np.linalg.norm(vectors, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    unit = vectors / norms
    rows = {token: unit[i] for i, token in enumerate(vocabulary)}
    cand_matrix = np.stack([rows[t] for t in cand])
    ref_matrix = np.stack([rows[t] for t in ref])
    similarity = cand_matrix @ ref_matrix.T
    precision = float(similarity.max(axis=1).mean())
    recall = float(similarity.max(axis=0).mean())
    if precision + recall <= 0:
        return 0.0
    score = 2 * precision * recall / (precision + recall)
    return min(1.0, max(0.0, score))


def ppl_pred(token_logprobs: Sequence[float]) -> float:
    """exp of the mean negative log-probability of the generated tokens."""
    if not token_logprobs:
        raise ValueError("token_logprobs must be non-empty")
    positive = [lp for lp in token_logprobs if lp > 0]
    if positive:
        raise ValueError(f"logprobs must be <= 0, got {positive[:3]}")
    return math.exp(-math.fsum(token_logprobs) / len(token_logprobs))
