import logging

import pytest

from tbgraphrag.dataset import (
    DEFAULT_QA_TEMPLATE,
    QAGenTemplate,
    QaGenerationError,
    build_heading_ift,
    build_summarization_pairs,
    generate_qa_pairs,
    load_benchmark_items,
    normalize_benchmarks,
    parse_qa_response,
    read_records,
    write_manifest,
    write_records,
)
from tbgraphrag.generation import MockFailingEndpoint, MockScriptedEndpoint
from tbgraphrag.ingest import chunk_document
from tbgraphrag.models import BenchmarkItem, InstructionRecord, Provenance, Section, SourceDocument

from conftest import make_chunk


def guideline_doc(headings_bodies, doc_id="g1"):
    return SourceDocument(
        doc_id=doc_id,
        source_kind="guideline",
        title="Guideline",
        sections=[
            Section(heading=h, body=b, order=i)
            for i, (h, b) in enumerate(headings_bodies)
        ],
    )


class TestHeadingIft:
    def test_one_record_per_headed_section(self):
        doc = guideline_doc([
            ("Diagnosis", "Use Xpert."),
            ("Treatment", "Use RIPE."),
            ("Follow up", "Monthly visits."),
        ])
        records = build_heading_ift(doc, chunk_document(doc))
        assert len(records) == 3
        assert all(r.task_kind == "heading_ift" for r in records)

    def test_instruction_contains_heading_verbatim(self):
        doc = guideline_doc([("Treatment of drug-resistant TB", "Use bedaquiline.")])
        records = build_heading_ift(doc, chunk_document(doc))
        assert "Treatment of drug-resistant TB" in records[0].instruction
        assert records[0].output == "Use bedaquiline."

    def test_unheaded_sections_skipped(self):
        pairs = [(f"H{i}", f"body {i}") for i in range(12)]
        pairs[3] = ("", "unheaded body")
        pairs[9] = ("", "another unheaded")
        doc = guideline_doc(pairs)
        records = build_heading_ift(doc, chunk_document(doc))
        # Oracle: count sections with a non-empty heading.
        expected = sum(1 for h, _ in pairs if h.strip())
        assert expected == 10
        assert len(records) == expected

    def test_no_headed_sections_empty(self):
        doc = guideline_doc([("", "just body")])
        assert build_heading_ift(doc, chunk_document(doc)) == []

    def test_provenance_carries_section_chunks(self):
        doc = guideline_doc([("Long section", " ".join(f"w{i}" for i in range(600)))])
        chunks = chunk_document(doc, window_tokens=256, overlap_tokens=32)
        records = build_heading_ift(doc, chunks)
        assert records[0].provenance.chunk_ids == sorted(c.chunk_id for c in chunks)


class TestSummarization:
    def _abstract(self, doc_id, title="A title", body="Abstract body."):
        return SourceDocument(
            doc_id=doc_id,
            source_kind="pubmed_abstract",
            title=title,
            sections=[Section(heading="Abstract", body=body, order=0)],
        )

    def test_five_abstracts_five_records(self):
        docs = [self._abstract(f"p{i}") for i in range(5)]
        records = build_summarization_pairs(docs)
        assert len(records) == 5
        assert all(r.input and r.output for r in records)
        assert all(r.task_kind == "summarization" for r in records)

    def test_missing_title_skipped_with_warning(self, caplog):
        docs = [self._abstract("p1"), self._abstract("p2", title="  ")]
        with caplog.at_level(logging.WARNING):
            records = build_summarization_pairs(docs)
        assert len(records) == 1
        assert any("p2" in message for message in caplog.messages)

    def test_roundtrip_is_bit_exact(self, tmp_path):
        records = build_summarization_pairs([self._abstract("p1")])
        path = tmp_path / "records.ndjson"
        write_records(records, path)
        first = path.read_bytes()
        loaded = read_records(path)
        assert loaded == records
        write_records(loaded, path)
        assert path.read_bytes() == first


class TestQaGeneration:
    @pytest.mark.parametrize("text", [
        "Q: what is TB? A: an infectious disease",
        "Q: what is TB?\nA: an infectious disease",
    ])
    def test_delimiter_parse(self, text):
        endpoint = MockScriptedEndpoint([text])
        report = generate_qa_pairs([make_chunk("c1", "chunk text")], endpoint)
        assert len(report.records) == 1
        record = report.records[0]
        assert record.instruction == "what is TB?"
        assert record.output == "an infectious disease"
        assert record.provenance.chunk_ids == ["c1"]

    def test_undelimited_prose_dropped_and_counted(self):
        endpoint = MockScriptedEndpoint(["no markers in this response at all"])
        report = generate_qa_pairs([make_chunk("c1", "text")], endpoint)
        assert report.records == []
        assert report.dropped_count == 1

    def test_hundred_chunks_distinct_provenance(self):
        chunks = [make_chunk(f"c{i:03d}", f"text {i}") for i in range(100)]
        endpoint = MockScriptedEndpoint(["Q: what?\nA: because."])
        report = generate_qa_pairs(chunks, endpoint, n_per_chunk=1)
        assert len(report.records) == 100
        provenance = [tuple(r.provenance.chunk_ids) for r in report.records]
        assert len(set(provenance)) == 100
        assert [r.record_id for r in report.records] == sorted(
            r.record_id for r in report.records
        )

    def test_generator_failure_skips_with_count(self):
        flaky = MockScriptedEndpoint(["Q: q?\nA: a."])
        original = flaky._complete
        calls = {"n": 0}

        def fail_second(request):
            calls["n"] += 1
            if calls["n"] == 2:
                raise RuntimeError("boom")
            return original(request)

        flaky._complete = fail_second
        chunks = [make_chunk(f"c{i}", f"t{i}") for i in range(3)]
        report = generate_qa_pairs(chunks, flaky)
        assert len(report.records) == 2
        assert report.failed_count == 1

    def test_all_chunks_failed_raises(self):
        with pytest.raises(QaGenerationError):
            generate_qa_pairs([make_chunk("c1", "t")], MockFailingEndpoint())

    def test_parallel_mode_matches_sequential(self):
        from tbgraphrag.generation import MockCannedEndpoint

        chunks = [make_chunk(f"c{i:03d}", f"text {i}") for i in range(30)]

        def endpoint():
            return MockCannedEndpoint(answers={}, default="Q: what?\nA: because.")

        sequential = generate_qa_pairs(chunks, endpoint(), max_parallel=1)
        bounded = endpoint()
        parallel = generate_qa_pairs(chunks, bounded, max_parallel=4)
        assert [r.to_dict() for r in parallel.records] == [
            r.to_dict() for r in sequential.records
        ]
        assert bounded.max_in_flight_seen <= 4

    def test_reproducible_with_seeded_sampling(self):
        chunks = [make_chunk(f"c{i:03d}", f"text {i}") for i in range(50)]
        endpoint = MockScriptedEndpoint(["Q: what?\nA: because."])
        a = generate_qa_pairs(chunks, endpoint, max_chunks=10, seed=3)
        b = generate_qa_pairs(chunks, MockScriptedEndpoint(["Q: what?\nA: because."]),
                              max_chunks=10, seed=3)
        assert [r.to_dict() for r in a.records] == [r.to_dict() for r in b.records]

    def test_multiline_answer_captured_until_next_q(self):
        text = "Q: first?\nA: line one\nline two\nQ: second?\nA: ignored"
        parsed = parse_qa_response(text)
        assert parsed == ("first?", "line one\nline two")

    def test_template_placeholder_validated(self):
        with pytest.raises(ValueError):
            QAGenTemplate(system_text="s", user_template="no placeholder")

    def test_template_hash_stable(self):
        assert DEFAULT_QA_TEMPLATE.hash() == DEFAULT_QA_TEMPLATE.hash()


class TestNormalizeBenchmarks:
    def test_open_qa_empty_input(self):
        items = [BenchmarkItem("Open question?", "Free answer.", "bench")]
        records, rejected = normalize_benchmarks(items)
        assert rejected == []
        assert records[0].input == ""
        assert records[0].output == "Free answer."

    def test_mcq_label_resolves_to_text(self):
        items = [
            BenchmarkItem(
                "Pick one.",
                "B",
                "bench",
                options=[
                    {"label": "A", "text": "first"},
                    {"label": "B", "text": "second"},
                    {"label": "C", "text": "third"},
                    {"label": "D", "text": "fourth"},
                ],
            )
        ]
        records, rejected = normalize_benchmarks(items)
        assert records[0].output == "second"
        assert "A. first" in records[0].input
        assert "D. fourth" in records[0].input

    def test_invalid_answer_rejected_with_reason(self):
        good = [
            BenchmarkItem(f"q{i}?", "yes", "bench") for i in range(19)
        ]
        bad = BenchmarkItem(
            "broken?", "Z", "bench", options=[{"label": "A", "text": "only"}]
        )
        records, rejected = normalize_benchmarks(good + [bad])
        assert len(records) == 19
        assert len(rejected) == 1
        assert "Z" in rejected[0][1]

    def test_loader_reads_simple_json(self, tmp_path):
        path = tmp_path / "bench.json"
        path.write_text(
            '[{"question": "q?", "answer": "a", "source_benchmark": "x"}]',
            encoding="utf-8",
        )
        items = load_benchmark_items(path)
        assert items[0].question == "q?"


class TestDatasetFiles:
    def test_manifest_contents(self, tmp_path):
        write_manifest(
            tmp_path,
            split_counts={"ft_train": 8, "ft_val": 1},
            task_kind_counts={"heading_ift": 9},
            seed=7,
            template_hash="abc123",
        )
        import json

        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert manifest["seed"] == 7
        assert manifest["splits"]["ft_train"] == 8
        assert manifest["template_hash"] == "abc123"

    def test_records_roundtrip(self, tmp_path):
        records = [
            InstructionRecord(
                record_id="r1",
                task_kind="benchmark_qa",
                instruction="q?",
                input="options",
                output="a",
                provenance=Provenance(doc_id="bench", chunk_ids=[]),
            )
        ]
        path = tmp_path / "x.ndjson"
        write_records(records, path)
        assert read_records(path) == records

    def test_qa_record_requires_provenance(self):
        with pytest.raises(ValueError, match="provenance"):
            InstructionRecord(
                record_id="r1",
                task_kind="qa_long_form",
                instruction="q",
                input="",
                output="a",
                provenance=Provenance(doc_id="d", chunk_ids=[]),
            )
