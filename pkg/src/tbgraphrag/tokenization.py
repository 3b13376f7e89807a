"""Shared tokenizer for token counting, BM25, and text metrics.

Lowercase, split on non-alphanumeric runs, no stemming, no stopword
removal. Clinical vocabulary ("RIPE", "MDR-TB") is brittle under stemmers,
so none is applied.
"""

from __future__ import annotations

import re

# Maximal alphanumeric runs; underscore is not alphanumeric.
_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


def tokenize(text: str) -> list[str]:
    # Match on the original text, then lowercase: lowercasing first can
    # change string length for some Unicode and desync character offsets.
    return [m.group(0).lower() for m in _TOKEN_RE.finditer(text)]


def token_spans(text: str) -> list[tuple[int, int]]:
    """Character (start, end) spans of each token in the original text."""
    return [m.span() for m in _TOKEN_RE.finditer(text)]
