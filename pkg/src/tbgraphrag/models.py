"""Shared domain records: source documents, chunks, instruction data, splits."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

SOURCE_KINDS = ("guideline", "pubmed_abstract", "pmc_fulltext", "benchmark_qa")
TASK_KINDS = ("qa_long_form", "summarization", "heading_ift", "benchmark_qa")


class Split(str, Enum):
    FT_TRAIN = "ft_train"
    FT_VAL = "ft_val"
    FT_TEST = "ft_test"
    RAG_CORPUS = "rag_corpus"
    RAG_TEST = "rag_test"


@dataclass
class Section:
    """One document section; ``order`` is contiguous from 0 within a document."""

    heading: str
    body: str
    order: int


@dataclass
class SourceDocument:
    doc_id: str
    source_kind: str
    title: str
    sections: list[Section]
    year: int | None = None
    origin: str = ""
    checksum: str = ""

    def __post_init__(self) -> None:
        if self.source_kind not in SOURCE_KINDS:
            raise ValueError(f"unknown source_kind: {self.source_kind!r}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "doc_id": self.doc_id,
            "source_kind": self.source_kind,
            "title": self.title,
            "sections": [
                {"heading": s.heading, "body": s.body, "order": s.order}
                for s in self.sections
            ],
            "year": self.year,
            "origin": self.origin,
            "checksum": self.checksum,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "SourceDocument":
        return cls(
            doc_id=data["doc_id"],
            source_kind=data["source_kind"],
            title=data["title"],
            sections=[
                Section(heading=s["heading"], body=s["body"], order=s["order"])
                for s in data["sections"]
            ],
            year=data.get("year"),
            origin=data.get("origin", ""),
            checksum=data.get("checksum", ""),
        )


@dataclass
class Chunk:
    """Atomic retrievable text unit with document/section provenance."""

    chunk_id: str
    doc_id: str
    section_heading: str
    text: str
    token_count: int
    position: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "chunk_id": self.chunk_id,
            "doc_id": self.doc_id,
            "section_heading": self.section_heading,
            "text": self.text,
            "token_count": self.token_count,
            "position": self.position,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Chunk":
        return cls(**{k: data[k] for k in (
            "chunk_id", "doc_id", "section_heading", "text", "token_count", "position")})


@dataclass
class SplitAssignment:
    record_id: str
    split: Split
    seed: int


@dataclass
class Provenance:
    doc_id: str
    chunk_ids: list[str] = field(default_factory=list)


@dataclass
class InstructionRecord:
    """Instruction/input/output triple with source-chunk provenance.

    For qa_long_form records the provenance chunk ids are the gold labels
    used by retrieval recall scoring.
    """

    record_id: str
    task_kind: str
    instruction: str
    input: str
    output: str
    provenance: Provenance

    def __post_init__(self) -> None:
        if self.task_kind not in TASK_KINDS:
            raise ValueError(f"unknown task_kind: {self.task_kind!r}")
        if not self.output:
            raise ValueError(f"record {self.record_id}: output must be non-empty")
        if self.task_kind == "qa_long_form" and not self.provenance.chunk_ids:
            raise ValueError(
                f"record {self.record_id}: qa_long_form requires provenance chunk_ids"
            )

    def to_dict(self) -> dict[str, Any]:
        return {
            "record_id": self.record_id,
            "task_kind": self.task_kind,
            "instruction": self.instruction,
            "input": self.input,
            "output": self.output,
            "provenance": {
                "doc_id": self.provenance.doc_id,
                "chunk_ids": list(self.provenance.chunk_ids),
            },
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "InstructionRecord":
        prov = data["provenance"]
        return cls(
            record_id=data["record_id"],
            task_kind=data["task_kind"],
            instruction=data["instruction"],
            input=data.get("input", ""),
            output=data["output"],
            provenance=Provenance(doc_id=prov["doc_id"], chunk_ids=list(prov["chunk_ids"])),
        )


@dataclass
class BenchmarkItem:
    """A question/answer item from an external benchmark file."""

    question: str
    answer: str
    source_benchmark: str
    options: list[dict[str, str]] | None = None  # [{"label": "A", "text": "..."}]

    def resolve_answer_text(self) -> str:
        """Return the answer text; for MCQ items, resolve a bare label to its option text.

        Raises ValueError when options are present but the answer matches
        neither a label nor an option text.
        """
        if not self.options:
            return self.answer
        for opt in self.options:
            if self.answer == opt["label"] or self.answer == opt["text"]:
                return opt["text"]
        raise ValueError(
            f"answer {self.answer!r} not among options of {self.question[:40]!r}"
        )


def content_checksum(raw: bytes) -> str:
    """Deterministic hex checksum of raw document bytes."""
    return hashlib.sha256(raw).hexdigest()


def canonical_json(obj: Any) -> str:
    """Stable JSON used wherever byte-identical artifacts are required."""
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":"))
