"""Command line for the whole pipeline: fetch, ingest, dataset/index/graph
builds, query, evaluation, and serving.

Every build subcommand writes a manifest (inputs hash, seed, config hash)
so identical inputs reproduce identical artifacts byte-for-byte. Exit
codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import hashlib
import json
import sys
import time
from pathlib import Path

import click

from . import dataset as dataset_mod
from . import eutils
from .config import AppConfig, load_config
from .evaluation import EvalRunConfig, reaggregate_run, run_eval, write_report_files
from .generation import GenerationRequest, generate
from .graph import (
    GraphConfig,
    KnowledgeGraphBuilder,
    default_gazetteer,
    load_gazetteer,
    load_graph,
    save_graph,
)
from .index import Bm25Index, DenseIndex
from .ingest import (
    assign_splits,
    chunk_corpus,
    load_corpus,
    parse_guideline_text,
    read_chunks,
    save_document,
    write_chunks,
)
from .models import SourceDocument, canonical_json
from .retrieve import HybridRetriever, RetrievalConfig

pass_config = click.make_pass_decorator(AppConfig)


def _inputs_hash(paths: list[Path], base: Path | None = None) -> str:
    digest = hashlib.sha256()
    for path in sorted(paths):
        name = str(path.relative_to(base)) if base else path.name
        digest.update(name.encode("utf-8"))
        digest.update(hashlib.sha256(path.read_bytes()).digest())
    return digest.hexdigest()


def _write_manifest(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(canonical_json(payload) + "\n", encoding="utf-8")


def _gazetteer(config: AppConfig):
    if config.gazetteer_path:
        return load_gazetteer(config.gazetteer_path)
    return default_gazetteer()


@click.group()
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="JSON config file (or set TBGRAPHRAG_CONFIG).")
@click.pass_context
def cli(ctx, config_path):
    """Clinical TB GraphRAG pipeline."""
    ctx.obj = load_config(config_path)


@cli.command()
@click.option("--query", required=True, help="Search term for the literature API.")
@click.option("--year", type=int, default=None, help="Restrict to one publication year.")
@click.option("--max-results", type=int, default=20, show_default=True)
@click.option("--db", type=click.Choice(["pubmed", "pmc"]), default="pubmed", show_default=True)
@click.option("--endpoint", default=eutils.DEFAULT_ENDPOINT, show_default=True)
@click.option("--api-key-env", default="EUTILS_API_KEY", show_default=True,
              help="Environment variable holding the API key, if any.")
@pass_config
def fetch(config: AppConfig, query, year, max_results, db, endpoint, api_key_env):
    """Fetch literature via an E-utilities-compatible API into the corpus."""
    import os

    client = eutils.EutilsClient(endpoint=endpoint, api_key=os.environ.get(api_key_env))
    docs = eutils.fetch_literature(
        query, year, max_results, endpoint=endpoint, db=db, client=client
    )
    for doc in docs:
        save_document(doc, config.corpus_dir)
    click.echo(f"fetched {len(docs)} documents into {config.corpus_dir}")


@cli.command()
@click.option("--corpus", "corpus_in", required=True,
              type=click.Path(exists=True, file_okay=False, path_type=Path),
              help="Directory of raw inputs: guideline *.txt and document *.json files.")
@pass_config
def ingest(config: AppConfig, corpus_in: Path):
    """Clean and chunk raw inputs into the on-disk corpus."""
    inputs = sorted(p for p in corpus_in.rglob("*") if p.suffix in (".txt", ".json"))
    if not inputs:
        raise click.ClickException(f"no .txt or .json inputs under {corpus_in}")

    docs: list[SourceDocument] = []
    for path in inputs:
        if path.suffix == ".txt":
            docs.append(parse_guideline_text(
                path.read_text(encoding="utf-8"), doc_id=path.stem, origin=str(path)
            ))
        else:
            data = json.loads(path.read_text(encoding="utf-8"))
            if isinstance(data, dict) and "doc_id" in data and "source_kind" in data:
                docs.append(SourceDocument.from_dict(data))

    if not docs:
        raise click.ClickException(f"no parseable documents under {corpus_in}")
    for doc in docs:
        save_document(doc, config.corpus_dir)
    chunks = chunk_corpus(docs, config.window_tokens, config.overlap_tokens)
    config.chunks_path.parent.mkdir(parents=True, exist_ok=True)
    write_chunks(chunks, config.chunks_path)
    _write_manifest(
        config.corpus_dir / "ingest_manifest.json",
        {
            "inputs_hash": _inputs_hash(inputs, base=corpus_in),
            "seed": config.seed,
            "config_hash": config.hash(),
            "window_tokens": config.window_tokens,
            "overlap_tokens": config.overlap_tokens,
            "n_documents": len(docs),
            "n_chunks": len(chunks),
        },
    )
    click.echo(f"ingested {len(docs)} documents, wrote {len(chunks)} chunks")


@cli.group()
def dataset():
    """Instruction-dataset commands."""


@dataset.command("build")
@click.option("--benchmarks", type=click.Path(exists=True, file_okay=False, path_type=Path),
              default=None, help="Directory of benchmark item JSON files.")
@click.option("--tb-keywords", default="tuberculosis,TB,MDR-TB,XDR-TB,isoniazid,rifampicin",
              show_default=True, help="Keyword filter for benchmark items.")
@click.option("--qa-generator", default="mock-qa", show_default=True,
              help="Endpoint used for QA-pair generation.")
@click.option("--qa-per-chunk", type=int, default=1, show_default=True)
@click.option("--qa-max-chunks", type=int, default=None)
@click.option("--ratios", default="0.8,0.1,0.1", show_default=True,
              help="ft_train,ft_val,ft_test proportions.")
@pass_config
def dataset_build(config: AppConfig, benchmarks, tb_keywords, qa_generator,
                  qa_per_chunk, qa_max_chunks, ratios):
    """Build instruction records and split files from the ingested corpus."""
    from .ingest import filter_benchmark_items
    from .models import Split

    docs = load_corpus(config.corpus_dir)
    if not docs:
        raise click.ClickException(f"no corpus under {config.corpus_dir}; run ingest first")
    chunks = read_chunks(config.chunks_path)
    chunks_by_doc: dict[str, list] = {}
    for chunk in chunks:
        chunks_by_doc.setdefault(chunk.doc_id, []).append(chunk)

    records = []
    for doc in docs:
        if doc.source_kind == "guideline":
            records.extend(dataset_mod.build_heading_ift(doc, chunks_by_doc.get(doc.doc_id, [])))
    abstracts = [d for d in docs if d.source_kind == "pubmed_abstract"]
    records.extend(dataset_mod.build_summarization_pairs(abstracts))

    generator = config.endpoint(qa_generator)
    qa_report = dataset_mod.generate_qa_pairs(
        chunks,
        generator,
        n_per_chunk=qa_per_chunk,
        max_chunks=qa_max_chunks,
        seed=config.seed,
    )
    records.extend(qa_report.records)

    n_rejected = 0
    if benchmarks:
        keywords = [k.strip() for k in tb_keywords.split(",") if k.strip()]
        for path in sorted(Path(benchmarks).glob("*.json")):
            items = dataset_mod.load_benchmark_items(path)
            kept = filter_benchmark_items(items, keywords)
            bench_records, rejections = dataset_mod.normalize_benchmarks(kept)
            records.extend(bench_records)
            n_rejected += len(rejections)

    fulltext_docs = {d.doc_id for d in docs if d.source_kind == "pmc_fulltext"}
    rag_test_ids = {
        r.record_id for r in records
        if r.task_kind == "qa_long_form" and r.provenance.doc_id in fulltext_docs
    }
    ratio_values = [float(x) for x in ratios.split(",")]
    assignments = assign_splits(
        [r.record_id for r in records],
        {"ft_train": ratio_values[0], "ft_val": ratio_values[1], "ft_test": ratio_values[2]},
        seed=config.seed,
        rag_test_ids=rag_test_ids,
    )
    split_of = {a.record_id: a.split for a in assignments}
    by_split = {split: [] for split in Split}
    for record in sorted(records, key=lambda r: r.record_id):
        by_split[split_of[record.record_id]].append(record)

    config.dataset_dir.mkdir(parents=True, exist_ok=True)
    for split, split_records in by_split.items():
        dataset_mod.write_records(split_records, config.dataset_dir / f"{split.value}.ndjson")

    task_counts: dict[str, int] = {}
    for record in records:
        task_counts[record.task_kind] = task_counts.get(record.task_kind, 0) + 1
    dataset_mod.write_manifest(
        config.dataset_dir,
        split_counts={s.value: len(r) for s, r in by_split.items()},
        task_kind_counts=task_counts,
        seed=config.seed,
        template_hash=dataset_mod.DEFAULT_QA_TEMPLATE.hash(),
    )
    click.echo(
        f"built {len(records)} records "
        f"(qa dropped {qa_report.dropped_count}, failed {qa_report.failed_count}, "
        f"benchmark rejected {n_rejected})"
    )


@cli.group()
def index():
    """Search index commands."""


@index.command("build")
@pass_config
def index_build(config: AppConfig):
    """Build the BM25 and dense vector indexes from chunks.ndjson."""
    chunks = read_chunks(config.chunks_path)
    if not chunks:
        raise click.ClickException(f"no chunks at {config.chunks_path}; run ingest first")
    bm25 = Bm25Index().fit(chunks)
    dense = DenseIndex(embedder=config.embedder()).fit(chunks)
    config.index_dir.mkdir(parents=True, exist_ok=True)
    bm25.save(config.index_dir)
    dense.save(config.index_dir)
    _write_manifest(
        config.index_dir / "manifest.json",
        {
            "inputs_hash": _inputs_hash([config.chunks_path]),
            "seed": config.seed,
            "config_hash": config.hash(),
            "embedder": config.embedder().name,
            "n_chunks": len(chunks),
        },
    )
    click.echo(f"indexed {len(chunks)} chunks into {config.index_dir}")


@cli.group()
def graph():
    """Knowledge graph commands."""


@graph.command("build")
@click.option("--linking-threshold", type=float, default=0.85, show_default=True)
@pass_config
def graph_build(config: AppConfig, linking_threshold):
    """Build and persist the knowledge graph from chunks and the gazetteer."""
    chunks = read_chunks(config.chunks_path)
    if not chunks:
        raise click.ClickException(f"no chunks at {config.chunks_path}; run ingest first")
    graph_config = GraphConfig(linking_threshold=linking_threshold)
    builder = KnowledgeGraphBuilder(
        gazetteer=_gazetteer(config),
        embedder=config.embedder(),
        linking_threshold=graph_config.linking_threshold,
    ).fit(chunks)
    save_graph(builder.graph_, config.graph_path)
    _write_manifest(
        config.graph_path.parent / "manifest.json",
        {
            "inputs_hash": _inputs_hash([config.chunks_path]),
            "seed": config.seed,
            "config_hash": config.hash(),
            "linking_threshold": linking_threshold,
            "n_entities": len(builder.graph_.entities),
            "n_edges": len(builder.graph_.edges),
        },
    )
    click.echo(
        f"graph: {len(builder.graph_.entities)} entities, "
        f"{len(builder.graph_.edges)} edges -> {config.graph_path}"
    )


def _load_retriever(config: AppConfig) -> HybridRetriever:
    chunks = read_chunks(config.chunks_path)
    embedder = config.embedder()
    bm25 = Bm25Index.load(config.index_dir)
    dense = DenseIndex.load(config.index_dir, embedder=embedder)
    graph_obj = load_graph(config.graph_path) if config.graph_path.is_file() else None
    return HybridRetriever.from_artifacts(
        chunks=chunks,
        bm25=bm25,
        dense=dense,
        graph=graph_obj,
        gazetteer=_gazetteer(config),
        config=config.retrieval,
        embedder=embedder,
    )


@cli.command()
@click.option("--question", required=True)
@click.option("--k", type=int, default=5, show_default=True)
@click.option("--graph/--no-graph", "use_graph", default=True, show_default=True)
@click.option("--generator", default="mock-echo", show_default=True)
@click.option("--json", "as_json", is_flag=True, help="Machine-readable output.")
@pass_config
def query(config: AppConfig, question, k, use_graph, generator, as_json):
    """Answer one question against the built indexes."""
    retriever = _load_retriever(config)
    retrieval_config = RetrievalConfig(
        k=k,
        k_rrf=config.retrieval.k_rrf,
        channel_weights=dict(config.retrieval.channel_weights),
        expansion_depth=config.retrieval.expansion_depth,
        max_expanded_chunks=config.retrieval.max_expanded_chunks,
        graph_enabled=use_graph,
    )
    endpoint = config.endpoint(generator)
    from .generation import RAG_TEMPLATE

    retrieval = retriever.retrieve(question, config=retrieval_config)
    context = RAG_TEMPLATE.context_separator.join(
        retriever.chunk(c.chunk_id).text for c in retrieval.chunks
    )
    response = generate(
        endpoint,
        GenerationRequest(messages=RAG_TEMPLATE.render(question, context=context)),
    )
    if as_json:
        click.echo(json.dumps({
            "answer": response.text,
            "contexts": [c.to_dict() for c in retrieval.chunks],
            "entities_used": retrieval.entities_used,
            "latency_seconds": retrieval.latency_seconds,
        }, ensure_ascii=False))
        return
    click.echo(f"answer: {response.text}\n")
    click.echo("contexts:")
    for item in retrieval.chunks:
        chunk = retriever.chunk(item.chunk_id)
        via = f" via {','.join(item.via_entities)}" if item.via_entities else ""
        click.echo(
            f"  {item.chunk_id}  score={item.fused_score:.4f}  "
            f"[{chunk.doc_id} / {chunk.section_heading!r}]{via}"
        )
    click.echo(f"entities used: {retrieval.entities_used}")


@cli.group("eval")
def eval_group():
    """Evaluation commands."""


@eval_group.command("run")
@click.option("--dataset", "dataset_name", required=True,
              help="Split file name under the dataset dir, e.g. rag_test.")
@click.option("--generator", required=True)
@click.option("--judge", "judge_name", default=None)
@click.option("--rag/--zero-shot", "use_rag", default=False, show_default=True)
@click.option("--run-id", default=None)
@click.option("--simulated-timing", is_flag=True,
              help="Deterministic latencies for reproducible reports.")
@click.option("--json", "as_json", is_flag=True)
@pass_config
def eval_run(config: AppConfig, dataset_name, generator, judge_name, use_rag,
             run_id, simulated_timing, as_json):
    """Evaluate a generator over a dataset split and write report files."""
    split_path = config.dataset_dir / f"{dataset_name}.ndjson"
    if not split_path.is_file():
        raise click.ClickException(f"no dataset split at {split_path}")
    records = dataset_mod.read_records(split_path)
    if not records:
        raise click.ClickException(f"dataset split {dataset_name} is empty")

    retriever = _load_retriever(config) if use_rag else None
    embedder = config.embedder()
    eval_config = EvalRunConfig(
        dataset_name=dataset_name,
        generator_name=generator,
        judge_name=judge_name,
        retrieval=config.retrieval if use_rag else None,
        embedder_name=embedder.name,
        seed=config.seed,
        simulated_timing=simulated_timing,
    )
    run_id = run_id or f"{eval_config.hash()[:12]}-{time.strftime('%Y%m%d-%H%M%S')}"
    result = run_eval(
        eval_config,
        records,
        generator=config.endpoint(generator),
        embedder=embedder,
        judge_endpoint=config.endpoint(judge_name) if judge_name else None,
        retriever=retriever,
        run_dir=config.eval_runs_dir / run_id,
    )
    if as_json:
        from .report import parse_report_csv, render_report

        _, csv_text = render_report([result.report])
        click.echo(json.dumps(
            {"run_id": run_id, "rows": parse_report_csv(csv_text)}, ensure_ascii=False
        ))
        return
    click.echo(f"run {run_id}: {result.report.metric.n_items} items, "
               f"{result.failures} failures -> {result.run_dir}")


@eval_group.command("report")
@click.argument("run_id")
@click.option("--check", is_flag=True,
              help="Fail if re-aggregation does not reproduce the stored report.")
@pass_config
def eval_report(config: AppConfig, run_id, check):
    """Re-aggregate a run's per-item log and render its report."""
    run_dir = config.eval_runs_dir / run_id
    if not (run_dir / "items.ndjson").is_file():
        raise click.ClickException(f"no run at {run_dir}")
    from .report import render_report

    report = reaggregate_run(run_dir)
    markdown, csv_text = render_report([report])
    if check:
        stored_md = (run_dir / "report.md").read_text(encoding="utf-8")
        stored_csv = (run_dir / "report.csv").read_text(encoding="utf-8")
        if markdown != stored_md or csv_text != stored_csv:
            raise click.ClickException("re-aggregated report differs from stored report")
    write_report_files(run_dir, [report])
    click.echo(markdown)


@cli.command()
@click.option("--host", default=None)
@click.option("--port", type=int, default=None)
@pass_config
def serve(config: AppConfig, host, port):
    """Serve the HTTP API over the built artifacts."""
    import uvicorn

    from .service import create_app

    app = create_app(config, autoload=True)
    uvicorn.run(app, host=host or config.host, port=port or config.port)


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.UsageError as exc:
        exc.show()
        return 1
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return 1
    except click.ClickException as exc:  # clean runtime failure
        exc.show()
        return 2
    except Exception as exc:  # runtime failure
        click.echo(f"error: {exc}", err=True)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
