"""Corpus ingestion: cleaning, chunking, benchmark filtering, split assignment.

Guideline sources enter as UTF-8 text that may retain page breaks (form
feed) and line-break hyphenation from upstream extraction; ``clean_text``
repairs both. Chunking is section-aligned with sliding token windows for
oversized sections.
"""

from __future__ import annotations

import json
import random
import re
import unicodedata
from collections import Counter
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .models import (
    BenchmarkItem,
    Chunk,
    Section,
    SourceDocument,
    Split,
    SplitAssignment,
    canonical_json,
    content_checksum,
)
from .tokenization import token_spans

DEFAULT_WINDOW_TOKENS = 512
DEFAULT_OVERLAP_TOKENS = 64

# Lines repeating on at least this many pages are treated as headers/footers.
HEADER_PAGE_THRESHOLD = 3

_DEHYPHEN_RE = re.compile(r"(?<=\w)-[ \t]*\n[ \t]*(?=\w)")
_HSPACE_RE = re.compile(r"[ \t]+")
_SPACE_AROUND_NL_RE = re.compile(r"[ \t]*\n[ \t]*")
_BLANK_RUN_RE = re.compile(r"\n{3,}")


def _strip_repeated_page_lines(text: str) -> str:
    """Drop lines that repeat on >= HEADER_PAGE_THRESHOLD pages (form-feed pages)."""
    if "\f" not in text:
        return text
    pages = text.split("\f")
    page_counts: Counter[str] = Counter()
    for page in pages:
        page_counts.update({line.strip() for line in page.split("\n") if line.strip()})
    repeated = {line for line, n in page_counts.items() if n >= HEADER_PAGE_THRESHOLD}
    kept_pages = []
    for page in pages:
        kept = [line for line in page.split("\n") if line.strip() not in repeated]
        kept_pages.append("\n".join(kept))
    return "\n".join(kept_pages)


def clean_text(raw: str) -> str:
    """Normalize a raw extracted text. Total and idempotent.

    Steps: NFC normalization, line-ending normalization, removal of lines
    repeating across pages (header/footer heuristic), de-hyphenation of
    line-break splits, whitespace collapse.
    """
    text = unicodedata.normalize("NFC", raw)
    text = text.replace("\r\n", "\n").replace("\r", "\n")
    text = _strip_repeated_page_lines(text)
    text = _DEHYPHEN_RE.sub("", text)
    text = _HSPACE_RE.sub(" ", text)
    text = _SPACE_AROUND_NL_RE.sub("\n", text)
    text = _BLANK_RUN_RE.sub("\n\n", text)
    return text.strip()


def chunk_document(
    doc: SourceDocument,
    window_tokens: int = DEFAULT_WINDOW_TOKENS,
    overlap_tokens: int = DEFAULT_OVERLAP_TOKENS,
) -> list[Chunk]:
    """Chunk a document into token windows, never crossing section boundaries.

    A section that fits in one window becomes exactly one chunk; longer
    sections are covered by sliding windows with the declared overlap.
    Chunk positions are contiguous from 0 within the document.
    """
    if not window_tokens > overlap_tokens >= 0:
        raise ValueError(
            f"require window_tokens > overlap_tokens >= 0, "
            f"got window={window_tokens} overlap={overlap_tokens}"
        )
    stride = window_tokens - overlap_tokens
    chunks: list[Chunk] = []
    position = 0
    for section in doc.sections:
        spans = token_spans(section.body)
        n = len(spans)
        if n == 0:
            continue
        start = 0
        while True:
            end = min(start + window_tokens, n)
            text = section.body[spans[start][0]:spans[end - 1][1]]
            chunks.append(
                Chunk(
                    chunk_id=f"{doc.doc_id}:{position:05d}",
                    doc_id=doc.doc_id,
                    section_heading=section.heading,
                    text=text,
                    token_count=end - start,
                    position=position,
                )
            )
            position += 1
            if end == n:
                break
            start += stride
    return chunks


def filter_benchmark_items(
    items: Sequence[BenchmarkItem], keywords: Sequence[str]
) -> list[BenchmarkItem]:
    """Keep items whose question or answer contains any keyword.

    Matching is case-insensitive on word boundaries, so "TB" does not
    match "TBD". Input order is preserved.
    """
    if not keywords:
        raise ValueError("keywords must be non-empty")
    pattern = re.compile(
        r"\b(?:" + "|".join(re.escape(k) for k in keywords) + r")\b",
        re.IGNORECASE,
    )
    return [
        item
        for item in items
        if pattern.search(item.question) or pattern.search(item.answer)
    ]


def assign_splits(
    record_ids: Sequence[str],
    ratios: Mapping[str, float],
    seed: int,
    full_text_ids: Iterable[str] = (),
    rag_test_ids: Iterable[str] = (),
) -> list[SplitAssignment]:
    """Partition record ids into splits, deterministically for a given seed.

    ``full_text_ids`` are forced to rag_corpus (full-text literature feeds
    retrieval, not fine-tuning) and ``rag_test_ids`` to rag_test; the rest
    are shuffled and divided per ``ratios`` (keys ft_train/ft_val/ft_test),
    with counts within one record of the exact proportions.
    """
    dupes = [rid for rid, n in Counter(record_ids).items() if n > 1]
    if dupes:
        raise ValueError(f"duplicate record ids: {sorted(dupes)}")
    ratio_keys = ("ft_train", "ft_val", "ft_test")
    if set(ratios) != set(ratio_keys):
        raise ValueError(f"ratios must have keys {ratio_keys}, got {sorted(ratios)}")
    total = sum(ratios[k] for k in ratio_keys)
    if abs(total - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1.0, got {total}")

    full_text = set(full_text_ids)
    rag_test = set(rag_test_ids)
    overlap = full_text & rag_test
    if overlap:
        raise ValueError(f"ids forced to both rag_corpus and rag_test: {sorted(overlap)}")

    assignments = [
        SplitAssignment(rid, Split.RAG_CORPUS, seed) for rid in record_ids if rid in full_text
    ] + [
        SplitAssignment(rid, Split.RAG_TEST, seed) for rid in record_ids if rid in rag_test
    ]

    remaining = sorted(r for r in record_ids if r not in full_text and r not in rag_test)
    rng = random.Random(seed)
    rng.shuffle(remaining)

    n = len(remaining)
    exact = [n * ratios[k] for k in ratio_keys]
    counts = [int(x) for x in exact]
    for _ in range(n - sum(counts)):
        # Largest remainder wins; ties resolved in ft_train/ft_val/ft_test order.
        remainders = [e - c for e, c in zip(exact, counts)]
        counts[remainders.index(max(remainders))] += 1

    offset = 0
    for key, count in zip(ratio_keys, counts):
        for rid in remaining[offset:offset + count]:
            assignments.append(SplitAssignment(rid, Split(key), seed))
        offset += count

    assignments.sort(key=lambda a: a.record_id)
    return assignments


# ---------------------------------------------------------------------------
# Guideline text files

_HEADING_NUMBER_RE = re.compile(r"^\d+(\.\d+)*\.?\s+\S")
_YEAR_RE = re.compile(r"(19|20)\d{2}")


def _looks_like_heading(line: str) -> bool:
    line = line.strip()
    if not line or len(line) > 80 or not any(ch.isalpha() for ch in line):
        return False
    if _HEADING_NUMBER_RE.match(line):
        return True
    letters = [ch for ch in line if ch.isalpha()]
    return all(ch.isupper() for ch in letters) and len(letters) >= 3


def parse_guideline_text(raw: str, doc_id: str, origin: str = "") -> SourceDocument:
    """Split a guideline text file into headed sections.

    Heading heuristic: short lines that are numbered ("2.1 Treatment") or
    fully upper-case start a new section; everything else accumulates into
    the current section body. The document title is the first heading, or
    the first line when nothing looks like a heading.
    """
    cleaned = clean_text(raw)
    sections: list[Section] = []
    heading = ""
    body_lines: list[str] = []

    def flush() -> None:
        body = "\n".join(body_lines).strip()
        if body or heading:
            sections.append(Section(heading=heading, body=body, order=len(sections)))

    for line in cleaned.split("\n"):
        if _looks_like_heading(line):
            flush()
            heading = line.strip()
            body_lines = []
        else:
            body_lines.append(line)
    flush()

    title = next((s.heading for s in sections if s.heading), "")
    if not title:
        first_line = cleaned.split("\n", 1)[0].strip()
        title = first_line[:120] if first_line else doc_id
    year_match = _YEAR_RE.search(doc_id)
    return SourceDocument(
        doc_id=doc_id,
        source_kind="guideline",
        title=title,
        sections=sections,
        year=int(year_match.group()) if year_match else None,
        origin=origin,
        checksum=content_checksum(raw.encode("utf-8")),
    )


# ---------------------------------------------------------------------------
# Corpus on disk: one JSON document per SourceDocument under
# corpus/<source_kind>/<doc_id>.json, chunks as chunks.ndjson.

def clean_document(doc: SourceDocument) -> SourceDocument:
    """Return a copy with every section body cleaned (idempotent)."""
    return SourceDocument(
        doc_id=doc.doc_id,
        source_kind=doc.source_kind,
        title=clean_text(doc.title),
        sections=[
            Section(heading=clean_text(s.heading), body=clean_text(s.body), order=s.order)
            for s in doc.sections
        ],
        year=doc.year,
        origin=doc.origin,
        checksum=doc.checksum,
    )


def chunk_corpus(
    docs: Sequence[SourceDocument],
    window_tokens: int = DEFAULT_WINDOW_TOKENS,
    overlap_tokens: int = DEFAULT_OVERLAP_TOKENS,
) -> list[Chunk]:
    """Clean and chunk a corpus; output ordered by doc_id then position."""
    chunks: list[Chunk] = []
    for doc in sorted(docs, key=lambda d: d.doc_id):
        if doc.source_kind == "benchmark_qa":
            continue
        chunks.extend(chunk_document(clean_document(doc), window_tokens, overlap_tokens))
    return chunks


def save_document(doc: SourceDocument, corpus_dir: Path | str) -> Path:
    kind_dir = Path(corpus_dir) / doc.source_kind
    kind_dir.mkdir(parents=True, exist_ok=True)
    path = kind_dir / f"{doc.doc_id}.json"
    path.write_text(canonical_json(doc.to_dict()) + "\n", encoding="utf-8")
    return path


def load_corpus(corpus_dir: Path | str) -> list[SourceDocument]:
    """Load every document JSON under the corpus directory, sorted by doc_id."""
    docs = []
    root = Path(corpus_dir)
    for path in sorted(root.glob("*/*.json")):
        docs.append(SourceDocument.from_dict(json.loads(path.read_text(encoding="utf-8"))))
    docs.sort(key=lambda d: d.doc_id)
    return docs


def write_chunks(chunks: Iterable[Chunk], path: Path | str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for chunk in chunks:
            fh.write(canonical_json(chunk.to_dict()) + "\n")


def read_chunks(path: Path | str) -> list[Chunk]:
    chunks = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                chunks.append(Chunk.from_dict(json.loads(line)))
    return chunks
