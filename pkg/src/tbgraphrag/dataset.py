"""Instruction-dataset construction from the ingested corpus.

Four record kinds: heading-derived instructions from guideline sections,
title/abstract summarization pairs, generator-assisted long-form QA with
chunk provenance (the gold labels for retrieval recall), and normalized
external benchmark items. Records serialize as newline-delimited JSON.
"""

from __future__ import annotations

import hashlib
import json
import logging
import random
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .generation import GenerationRequest, generate
from .models import (
    BenchmarkItem,
    Chunk,
    InstructionRecord,
    Provenance,
    SourceDocument,
    canonical_json,
)

logger = logging.getLogger(__name__)

SUMMARIZATION_INSTRUCTION = (
    "Write a one-sentence title that summarizes the following abstract."
)

_Q_MARK_RE = re.compile(r"\bQ:\s*")
_A_MARK_RE = re.compile(r"\bA:\s*")
_NEXT_Q_RE = re.compile(r"(?:^|\n)\s*Q:\s*")


class QaGenerationError(Exception):
    """Every chunk failed during QA-pair generation."""


@dataclass
class QAGenTemplate:
    """Prompt template for generator-assisted QA-pair extraction."""

    system_text: str
    user_template: str  # must contain {chunk} exactly once
    domain_modifier: str = ""

    def __post_init__(self) -> None:
        if self.user_template.count("{chunk}") != 1:
            raise ValueError("user_template must contain {chunk} exactly once")

    def render(self, chunk_text: str) -> list[dict[str, str]]:
        system = self.system_text
        if self.domain_modifier:
            system = f"{system}\n{self.domain_modifier}"
        messages = []
        if system:
            messages.append({"role": "system", "content": system})
        messages.append(
            {"role": "user", "content": self.user_template.replace("{chunk}", chunk_text)}
        )
        return messages

    def hash(self) -> str:
        payload = canonical_json(
            {
                "system_text": self.system_text,
                "user_template": self.user_template,
                "domain_modifier": self.domain_modifier,
            }
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


DEFAULT_QA_TEMPLATE = QAGenTemplate(
    system_text=(
        "You write exam-quality question-answer pairs from medical source text. "
        "Reply with exactly two lines:\nQ: <question>\nA: <answer>"
    ),
    user_template="Source text:\n{chunk}\n\nWrite one question-answer pair.",
    domain_modifier=(
        "Focus on tuberculosis care: diagnosis, treatment regimens, "
        "drug resistance, and TB/HIV management in South Africa."
    ),
)


def build_heading_ift(doc: SourceDocument, chunks: Sequence[Chunk]) -> list[InstructionRecord]:
    """One record per headed section: the heading becomes the instruction,
    the section body the output, the section's chunks the provenance.
    """
    by_heading: dict[str, list[str]] = {}
    for chunk in chunks:
        if chunk.doc_id == doc.doc_id:
            by_heading.setdefault(chunk.section_heading, []).append(chunk.chunk_id)
    records = []
    for section in doc.sections:
        if not section.heading.strip() or not section.body.strip():
            continue
        records.append(
            InstructionRecord(
                record_id=f"ift:{doc.doc_id}:{section.order:03d}",
                task_kind="heading_ift",
                instruction=f"Explain: {section.heading}",
                input="",
                output=section.body,
                provenance=Provenance(
                    doc_id=doc.doc_id,
                    chunk_ids=sorted(by_heading.get(section.heading, [])),
                ),
            )
        )
    return records


def build_summarization_pairs(abstracts: Sequence[SourceDocument]) -> list[InstructionRecord]:
    """Abstract body in, title out. Documents without a usable title or body
    are skipped with a warning rather than failing the batch.
    """
    records = []
    for doc in abstracts:
        if not doc.title.strip():
            logger.warning("skipping %s: no title for summarization pair", doc.doc_id)
            continue
        body = doc.sections[0].body if doc.sections else ""
        if not body.strip():
            logger.warning("skipping %s: empty abstract body", doc.doc_id)
            continue
        records.append(
            InstructionRecord(
                record_id=f"sum:{doc.doc_id}",
                task_kind="summarization",
                instruction=SUMMARIZATION_INSTRUCTION,
                input=body,
                output=doc.title,
                provenance=Provenance(doc_id=doc.doc_id, chunk_ids=[]),
            )
        )
    return records


def parse_qa_response(text: str) -> tuple[str, str] | None:
    """Extract the first Q:/A: pair; None when the shape is not present.

    The markers may share a line ("Q: ...? A: ...") or start their own
    lines; the answer runs until the next line-initial Q: or end of text.
    """
    q_match = _Q_MARK_RE.search(text)
    if not q_match:
        return None
    a_match = _A_MARK_RE.search(text, q_match.end())
    if not a_match:
        return None
    question = text[q_match.end():a_match.start()].strip()
    answer_region = text[a_match.end():]
    next_q = _NEXT_Q_RE.search(answer_region)
    if next_q:
        answer_region = answer_region[: next_q.start()]
    answer = answer_region.strip()
    if not question or not answer:
        return None
    return question, answer


@dataclass
class QaGenReport:
    records: list[InstructionRecord] = field(default_factory=list)
    dropped_count: int = 0
    failed_count: int = 0


def generate_qa_pairs(
    chunks: Sequence[Chunk],
    generator,
    template: QAGenTemplate = DEFAULT_QA_TEMPLATE,
    n_per_chunk: int = 1,
    max_chunks: int | None = None,
    seed: int = 0,
    max_parallel: int = 1,
) -> QaGenReport:
    """Produce qa_long_form records, one source chunk per record's provenance.

    Generator outputs without a parsable Q:/A: pair are dropped and counted;
    a generator failure skips the rest of that chunk. Chunk sampling (when
    ``max_chunks`` caps the run) is seeded and output order is always
    (chunk_id, sample index). ``max_parallel`` > 1 fans chunks out over a
    thread pool; with order-dependent mocks (scripted playback) stay at 1
    for record-for-record reproducibility.
    """
    if n_per_chunk < 1:
        raise ValueError(f"n_per_chunk must be >= 1, got {n_per_chunk}")
    ordered = sorted(chunks, key=lambda c: c.chunk_id)
    if max_chunks is not None and max_chunks < len(ordered):
        rng = random.Random(seed)
        ordered = sorted(rng.sample(ordered, max_chunks), key=lambda c: c.chunk_id)

    def process_chunk(chunk: Chunk) -> tuple[list[InstructionRecord], int, int]:
        records: list[InstructionRecord] = []
        dropped = 0
        for sample_index in range(n_per_chunk):
            request = GenerationRequest(
                messages=template.render(chunk.text),
                temperature=0.0,
                seed=seed,
            )
            try:
                response = generate(generator, request)
            except Exception as exc:
                logger.warning("generator failed on %s: %s", chunk.chunk_id, exc)
                return records, dropped, 1
            parsed = parse_qa_response(response.text)
            if parsed is None:
                dropped += 1
                continue
            question, answer = parsed
            records.append(
                InstructionRecord(
                    record_id=f"qa:{chunk.chunk_id}:{sample_index}",
                    task_kind="qa_long_form",
                    instruction=question,
                    input="",
                    output=answer,
                    provenance=Provenance(doc_id=chunk.doc_id, chunk_ids=[chunk.chunk_id]),
                )
            )
        return records, dropped, 0

    if max_parallel > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=max_parallel) as pool:
            outcomes = list(pool.map(process_chunk, ordered))
    else:
        outcomes = [process_chunk(chunk) for chunk in ordered]

    report = QaGenReport()
    chunks_failed = 0
    for records, dropped, failed in outcomes:  # pool.map preserves chunk order
        report.records.extend(records)
        report.dropped_count += dropped
        report.failed_count += failed
        chunks_failed += failed
    if ordered and chunks_failed == len(ordered):
        raise QaGenerationError(
            f"generator failed on all {len(ordered)} chunks "
            f"({report.failed_count} failures)"
        )
    return report


def normalize_benchmarks(
    items: Sequence[BenchmarkItem],
) -> tuple[list[InstructionRecord], list[tuple[BenchmarkItem, str]]]:
    """Turn benchmark items into records; returns (records, rejections).

    Multiple-choice options serialize into the input field and the answer
    label resolves to the option's text, so outputs are always prose.
    """
    records = []
    rejections = []
    counters: Counter[str] = Counter()
    for item in items:
        try:
            answer_text = item.resolve_answer_text()
        except ValueError as exc:
            rejections.append((item, str(exc)))
            continue
        index = counters[item.source_benchmark]
        counters[item.source_benchmark] += 1
        input_text = ""
        if item.options:
            input_text = "Options:\n" + "\n".join(
                f"{opt['label']}. {opt['text']}" for opt in item.options
            )
        records.append(
            InstructionRecord(
                record_id=f"bench:{item.source_benchmark}:{index:05d}",
                task_kind="benchmark_qa",
                instruction=item.question,
                input=input_text,
                output=answer_text,
                provenance=Provenance(doc_id=item.source_benchmark, chunk_ids=[]),
            )
        )
    return records, rejections


# ---------------------------------------------------------------------------
# Dataset files: dataset/<split>.ndjson plus dataset/manifest.json

def write_records(records: Iterable[InstructionRecord], path: Path | str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(canonical_json(record.to_dict()) + "\n")


def read_records(path: Path | str) -> list[InstructionRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(InstructionRecord.from_dict(json.loads(line)))
    return records


def write_manifest(
    dataset_dir: Path | str,
    split_counts: dict[str, int],
    task_kind_counts: dict[str, int],
    seed: int,
    template_hash: str,
) -> Path:
    path = Path(dataset_dir) / "manifest.json"
    payload = {
        "splits": dict(sorted(split_counts.items())),
        "task_kinds": dict(sorted(task_kind_counts.items())),
        "seed": seed,
        "template_hash": template_hash,
    }
    path.write_text(canonical_json(payload) + "\n", encoding="utf-8")
    return path


def load_benchmark_items(path: Path | str) -> list[BenchmarkItem]:
    """Read benchmark items from a simple JSON file (list of objects)."""
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    items = []
    for row in data:
        items.append(
            BenchmarkItem(
                question=row["question"],
                answer=row["answer"],
                source_benchmark=row.get("source_benchmark", Path(path).stem),
                options=row.get("options"),
            )
        )
    return items
