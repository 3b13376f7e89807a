import json
from pathlib import Path

import pytest

from tbgraphrag.cli import main

from conftest import write_benchmark_fixture, write_config_file, write_fixture_inputs


@pytest.fixture
def workspace(tmp_path):
    raw = write_fixture_inputs(tmp_path, n_pmc_sections=20)
    bench = write_benchmark_fixture(tmp_path)
    config_path = write_config_file(tmp_path)
    return tmp_path, raw, bench, config_path


def run_cli(config_path, *args) -> int:
    return main(["--config", str(config_path), *args])


def tree_bytes(root: Path) -> dict[str, bytes]:
    return {
        str(p.relative_to(root)): p.read_bytes()
        for p in sorted(root.rglob("*"))
        if p.is_file()
    }


class TestExitCodes:
    def test_unknown_flag_usage_error(self, workspace, capsys):
        _, _, _, config_path = workspace
        code = run_cli(config_path, "ingest", "--no-such-flag")
        captured = capsys.readouterr()
        assert code == 1
        assert "no-such-flag" in captured.err or "Usage" in captured.err

    def test_unknown_command_usage_error(self, workspace):
        _, _, _, config_path = workspace
        assert run_cli(config_path, "frobnicate") == 1

    def test_runtime_failure_is_two(self, workspace, monkeypatch):
        tmp_path, raw, _, config_path = workspace
        import tbgraphrag.cli as cli_mod

        def boom(*args, **kwargs):
            raise RuntimeError("disk on fire")

        monkeypatch.setattr(cli_mod, "chunk_corpus", boom)
        assert run_cli(config_path, "ingest", "--corpus", str(raw)) == 2

    def test_success_is_zero(self, workspace):
        _, raw, _, config_path = workspace
        assert run_cli(config_path, "ingest", "--corpus", str(raw)) == 0


class TestPipelineDeterminism:
    def test_ingest_twice_identical_bytes(self, workspace):
        tmp_path, raw, _, config_path = workspace
        assert run_cli(config_path, "ingest", "--corpus", str(raw)) == 0
        first = tree_bytes(tmp_path / "corpus")
        assert run_cli(config_path, "ingest", "--corpus", str(raw)) == 0
        assert tree_bytes(tmp_path / "corpus") == first
        assert (tmp_path / "corpus" / "chunks.ndjson").is_file()
        assert (tmp_path / "corpus" / "ingest_manifest.json").is_file()

    def test_index_and_graph_builds_idempotent(self, workspace):
        tmp_path, raw, _, config_path = workspace
        run_cli(config_path, "ingest", "--corpus", str(raw))
        assert run_cli(config_path, "index", "build") == 0
        assert run_cli(config_path, "graph", "build") == 0
        index_first = tree_bytes(tmp_path / "index")
        graph_first = tree_bytes(tmp_path / "graph")
        assert run_cli(config_path, "index", "build") == 0
        assert run_cli(config_path, "graph", "build") == 0
        assert tree_bytes(tmp_path / "index") == index_first
        assert tree_bytes(tmp_path / "graph") == graph_first
        for manifest_path in (tmp_path / "index" / "manifest.json",
                              tmp_path / "graph" / "manifest.json"):
            manifest = json.loads(manifest_path.read_text())
            assert {"inputs_hash", "seed", "config_hash"} <= set(manifest)


class TestDatasetBuild:
    def test_builds_splits_and_manifest(self, workspace):
        tmp_path, raw, bench, config_path = workspace
        run_cli(config_path, "ingest", "--corpus", str(raw))
        code = run_cli(config_path, "dataset", "build", "--benchmarks", str(bench))
        assert code == 0
        dataset_dir = tmp_path / "dataset"
        manifest = json.loads((dataset_dir / "manifest.json").read_text())
        assert manifest["seed"] == 7
        assert manifest["task_kinds"]["heading_ift"] >= 5
        assert manifest["task_kinds"]["qa_long_form"] >= 20
        assert manifest["task_kinds"]["benchmark_qa"] == 2  # malaria item filtered out
        assert manifest["splits"]["rag_test"] == 20  # one QA per PMC chunk
        for split in ("ft_train", "ft_val", "ft_test", "rag_corpus", "rag_test"):
            assert (dataset_dir / f"{split}.ndjson").is_file()

    def test_rag_test_records_have_gold_chunks(self, workspace):
        tmp_path, raw, bench, config_path = workspace
        run_cli(config_path, "ingest", "--corpus", str(raw))
        run_cli(config_path, "dataset", "build", "--benchmarks", str(bench))
        from tbgraphrag.dataset import read_records

        records = read_records(tmp_path / "dataset" / "rag_test.ndjson")
        assert records
        for record in records:
            assert record.task_kind == "qa_long_form"
            assert record.provenance.chunk_ids
            assert record.provenance.doc_id == "pmc-900001"


class TestQueryCommand:
    def test_planted_query_prints_gold_chunk(self, workspace, capsys):
        tmp_path, raw, _, config_path = workspace
        run_cli(config_path, "ingest", "--corpus", str(raw))
        run_cli(config_path, "index", "build")
        run_cli(config_path, "graph", "build")
        capsys.readouterr()  # drop build output
        code = run_cli(
            config_path, "query",
            "--question", "Site identifier token site04x marks this section.",
            "--k", "5", "--graph", "--json",
        )
        captured = capsys.readouterr()
        assert code == 0
        payload = json.loads(captured.out)
        # The planted marker sentence is verbatim from one PMC chunk.
        from tbgraphrag.ingest import read_chunks

        chunks = read_chunks(tmp_path / "corpus" / "chunks.ndjson")
        gold_ids = {c.chunk_id for c in chunks if "site04x" in c.text}
        assert gold_ids
        assert payload["contexts"][0]["chunk_id"] in gold_ids

    def test_human_readable_output(self, workspace, capsys):
        tmp_path, raw, _, config_path = workspace
        run_cli(config_path, "ingest", "--corpus", str(raw))
        run_cli(config_path, "index", "build")
        run_cli(config_path, "graph", "build")
        code = run_cli(config_path, "query", "--question", "How is MDR-TB managed?")
        captured = capsys.readouterr()
        assert code == 0
        assert "contexts:" in captured.out
        assert "entities used:" in captured.out


class TestEvalCommands:
    def _pipeline(self, workspace):
        tmp_path, raw, bench, config_path = workspace
        run_cli(config_path, "ingest", "--corpus", str(raw))
        run_cli(config_path, "index", "build")
        run_cli(config_path, "graph", "build")
        run_cli(config_path, "dataset", "build", "--benchmarks", str(bench))
        return tmp_path, config_path

    def test_eval_run_writes_report_files(self, workspace):
        tmp_path, config_path = self._pipeline(workspace)
        code = run_cli(
            config_path, "eval", "run", "--dataset", "rag_test",
            "--generator", "mock-echo", "--judge", "mock-judge",
            "--rag", "--simulated-timing", "--run-id", "test-run",
        )
        assert code == 0
        run_dir = tmp_path / "eval_runs" / "test-run"
        for name in ("items.ndjson", "report.md", "report.csv", "report.json", "run.json"):
            assert (run_dir / name).is_file()

    def test_eval_report_check_passes(self, workspace, capsys):
        tmp_path, config_path = self._pipeline(workspace)
        run_cli(
            config_path, "eval", "run", "--dataset", "rag_test",
            "--generator", "mock-echo", "--rag", "--simulated-timing",
            "--run-id", "check-run",
        )
        code = run_cli(config_path, "eval", "report", "check-run", "--check")
        captured = capsys.readouterr()
        assert code == 0
        assert "Generation quality" in captured.out

    def test_eval_run_json_output(self, workspace, capsys):
        tmp_path, config_path = self._pipeline(workspace)
        capsys.readouterr()  # drop build output
        code = run_cli(
            config_path, "eval", "run", "--dataset", "ft_test",
            "--generator", "mock-canned", "--simulated-timing",
            "--run-id", "json-run", "--json",
        )
        captured = capsys.readouterr()
        assert code == 0
        payload = json.loads(captured.out)
        assert payload["run_id"] == "json-run"
        assert payload["rows"][0]["dataset"] == "ft_test"

    def test_missing_dataset_is_runtime_failure(self, workspace):
        tmp_path, raw, _, config_path = workspace
        code = run_cli(
            config_path, "eval", "run", "--dataset", "nope", "--generator", "mock-echo"
        )
        assert code == 2
