"""Evaluation runner: generate per record, score with the full metric
battery, log every item, and aggregate into reports.

The per-item ndjson log is the source of truth: re-aggregating it
reproduces the report byte-for-byte without touching any endpoint.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

from .generation import answer_with_rag, answer_zero_shot
from .judge import JUDGE_SCALE, judge as judge_answer
from .metrics import bert_f1, ppl_pred, rouge_l, token_f1
from .models import InstructionRecord, canonical_json
from .report import JudgeSummary, MetricReport, RetrievalReport, RunReport, render_report
from .retrieve import HybridRetriever, RetrievalConfig, context_relevance

logger = logging.getLogger(__name__)

ITEMS_FILE = "items.ndjson"
RUN_FILE = "run.json"


class EvalRunError(Exception):
    """The run could not produce any scored item."""


class TickClock:
    """Deterministic monotonic clock for simulated-timing runs."""

    def __init__(self, step: float = 0.005):
        self.step = step
        self._now = 0.0

    def __call__(self) -> float:
        self._now += self.step
        return self._now


@dataclass
class EvalRunConfig:
    dataset_name: str
    generator_name: str
    judge_name: str | None = None
    retrieval: RetrievalConfig | None = None
    embedder_name: str = ""
    seed: int = 0
    simulated_timing: bool = False

    def __post_init__(self) -> None:
        if self.judge_name is not None and self.judge_name == self.generator_name:
            raise ValueError("judge endpoint must be distinct from the generator endpoint")

    def to_dict(self) -> dict[str, Any]:
        return {
            "dataset_name": self.dataset_name,
            "generator_name": self.generator_name,
            "judge_name": self.judge_name,
            "retrieval": self.retrieval.to_dict() if self.retrieval else None,
            "embedder_name": self.embedder_name,
            "seed": self.seed,
            "simulated_timing": self.simulated_timing,
            "judge_scale": list(JUDGE_SCALE),
        }

    def hash(self) -> str:
        return hashlib.sha256(canonical_json(self.to_dict()).encode("utf-8")).hexdigest()


@dataclass
class EvalRunResult:
    report: RunReport
    items: list[dict[str, Any]]
    failures: int
    run_dir: Path | None = None


def _record_question(record: InstructionRecord) -> str:
    if record.input:
        return f"{record.instruction}\n\n{record.input}"
    return record.instruction


def run_eval(
    config: EvalRunConfig,
    records: Sequence[InstructionRecord],
    generator,
    embedder,
    judge_endpoint=None,
    retriever: HybridRetriever | None = None,
    run_dir: Path | str | None = None,
) -> EvalRunResult:
    """Evaluate the generator over the records and aggregate all metrics.

    Per-item generation failures are logged and excluded (with a count);
    the run aborts only if every item fails. With ``retriever`` set,
    answers are grounded through the hybrid retriever and retrieval
    metrics are scored against each record's provenance chunks.
    """
    if not records:
        raise EvalRunError("no records to evaluate")
    if config.retrieval is not None and retriever is None:
        raise ValueError("config requests retrieval but no retriever was provided")
    if config.judge_name is not None and judge_endpoint is None:
        raise ValueError("config requests a judge but no judge endpoint was provided")

    clock = TickClock() if config.simulated_timing else None
    retrieval_config = config.retrieval
    if retrieval_config is None and retriever is not None:
        retrieval_config = retriever.config or RetrievalConfig()
    items: list[dict[str, Any]] = []
    failures = 0

    for record in sorted(records, key=lambda r: r.record_id):
        question = _record_question(record)
        reference = record.output
        item: dict[str, Any] = {
            "record_id": record.record_id,
            "task_kind": record.task_kind,
            "question": question,
            "reference": reference,
            "error": None,
        }
        try:
            if retriever is not None:
                rag = answer_with_rag(
                    generator,
                    question,
                    retriever,
                    config=retrieval_config,
                    seed=config.seed,
                    clock=clock,
                )
                response, retrieval = rag.response, rag.retrieval
            else:
                response = answer_zero_shot(generator, question, seed=config.seed)
                retrieval = None
        except Exception as exc:
            logger.warning("generation failed for %s: %s", record.record_id, exc)
            failures += 1
            item["error"] = str(exc)
            items.append(item)
            continue

        candidate = response.text
        item["candidate"] = candidate
        item["rouge_l"] = rouge_l(candidate, reference)
        item["token_f1"] = token_f1(candidate, reference)
        item["bert_f1"] = bert_f1(candidate, reference, embedder)
        item["ppl_pred"] = (
            ppl_pred(response.token_logprobs) if response.token_logprobs else None
        )
        item["latency_seconds"] = response.latency_seconds + (
            retrieval.latency_seconds if retrieval else 0.0
        )

        if retrieval is not None:
            k = (retrieval_config or RetrievalConfig()).k
            gold = list(record.provenance.chunk_ids)
            gold_hit = (
                any(c.chunk_id in set(gold) for c in retrieval.chunks[:k]) if gold else None
            )
            query_vector = retriever.dense_.embed_query(question)
            item["retrieval"] = {
                "chunk_ids": retrieval.chunk_ids(),
                "gold_chunk_ids": gold,
                "gold_hit": gold_hit,
                "k": k,
                "context_relevance": context_relevance(
                    retrieval, query_vector, retriever.dense_
                ),
                "entities_used": retrieval.entities_used,
                "latency_seconds": retrieval.latency_seconds,
            }
        else:
            item["retrieval"] = None

        if judge_endpoint is not None:
            rating = judge_answer(question, reference, candidate, judge_endpoint)
            item["judged"] = True
            if rating is None:
                item["judge"] = None
                item["judge_abstained"] = True
            else:
                item["judge"] = {
                    "accuracy_raw": rating.accuracy_raw,
                    "factuality_raw": rating.factuality_raw,
                    "accuracy_pct": rating.accuracy_pct,
                    "factuality_pct": rating.factuality_pct,
                    "rationale": rating.rationale,
                }
                item["judge_abstained"] = False
        else:
            item["judged"] = False
            item["judge"] = None
            item["judge_abstained"] = False

        items.append(item)

    if failures == len(records):
        raise EvalRunError(f"all {failures} items failed; aborting run")

    report = aggregate_items(
        items,
        dataset_name=config.dataset_name,
        model_name=config.generator_name,
        header=_report_header(config),
    )

    out_dir: Path | None = None
    if run_dir is not None:
        out_dir = Path(run_dir)
        write_run(out_dir, config, items, report, failures)

    return EvalRunResult(report=report, items=items, failures=failures, run_dir=out_dir)


def _report_header(config: EvalRunConfig) -> dict[str, Any]:
    return {
        "k": config.retrieval.k if config.retrieval else "-",
        "judge_scale": f"{JUDGE_SCALE[0]}-{JUDGE_SCALE[1]}",
        "embedder": config.embedder_name or "-",
        "seed": config.seed,
        "timing": "simulated" if config.simulated_timing else "wall-clock",
        "config_hash": config.hash()[:12],
    }


def _mean(values: list[float]) -> float | None:
    return sum(values) / len(values) if values else None


def aggregate_items(
    items: Sequence[dict[str, Any]],
    dataset_name: str,
    model_name: str,
    header: dict[str, Any] | None = None,
) -> RunReport:
    """Pure aggregation of a per-item log into one report row."""
    ok = [i for i in items if not i.get("error")]
    if not ok:
        raise EvalRunError("no successful items to aggregate")

    metric = MetricReport(
        rouge_l=_mean([i["rouge_l"] for i in ok]) or 0.0,
        token_f1=_mean([i["token_f1"] for i in ok]) or 0.0,
        bert_f1=_mean([i["bert_f1"] for i in ok]) or 0.0,
        ppl_pred=_mean([i["ppl_pred"] for i in ok if i.get("ppl_pred") is not None]),
        dataset_name=dataset_name,
        model_name=model_name,
        n_items=len(ok),
    )

    retrieval_items = [i for i in ok if i.get("retrieval")]
    retrieval = None
    if retrieval_items:
        with_gold = [i for i in retrieval_items if i["retrieval"]["gold_hit"] is not None]
        recall = (
            sum(1 for i in with_gold if i["retrieval"]["gold_hit"]) / len(with_gold)
            if with_gold
            else None
        )
        retrieval = RetrievalReport(
            recall_at_k=recall,
            k=retrieval_items[0]["retrieval"]["k"],
            context_relevance=_mean(
                [i["retrieval"]["context_relevance"] for i in retrieval_items]
            ) or 0.0,
            entities_used=_mean(
                [float(i["retrieval"]["entities_used"]) for i in retrieval_items]
            ) or 0.0,
            latency_s_per_item=_mean([i["latency_seconds"] for i in retrieval_items]) or 0.0,
        )

    judged = [i for i in ok if i.get("judged")]
    judge_summary = None
    if judged:
        rated = [i for i in judged if i.get("judge")]
        judge_summary = JudgeSummary(
            accuracy_pct=_mean([i["judge"]["accuracy_pct"] for i in rated]),
            factuality_pct=_mean([i["judge"]["factuality_pct"] for i in rated]),
            rated=len(rated),
            abstentions=sum(1 for i in judged if i.get("judge_abstained")),
        )

    return RunReport(
        metric=metric, retrieval=retrieval, judge=judge_summary, header=header or {}
    )


# ---------------------------------------------------------------------------
# Run directory layout: eval_runs/<run_id>/{items.ndjson, run.json,
# report.md, report.csv, report.json}

def write_run(
    run_dir: Path,
    config: EvalRunConfig,
    items: Sequence[dict[str, Any]],
    report: RunReport,
    failures: int,
) -> None:
    run_dir.mkdir(parents=True, exist_ok=True)
    with open(run_dir / ITEMS_FILE, "w", encoding="utf-8") as fh:
        for item in items:
            fh.write(canonical_json(item) + "\n")
    run_payload = {
        "config": config.to_dict(),
        "n_records": len(items),
        "failures": failures,
    }
    (run_dir / RUN_FILE).write_text(canonical_json(run_payload) + "\n", encoding="utf-8")
    write_report_files(run_dir, [report])


def write_report_files(run_dir: Path, reports: Sequence[RunReport]) -> None:
    markdown, csv_text = render_report(reports)
    (run_dir / "report.md").write_text(markdown, encoding="utf-8")
    (run_dir / "report.csv").write_text(csv_text, encoding="utf-8")
    from .report import parse_report_csv  # values identical to the CSV by construction

    payload = {"rows": parse_report_csv(csv_text), "parameters": [r.header for r in reports]}
    (run_dir / "report.json").write_text(canonical_json(payload) + "\n", encoding="utf-8")


def read_items(run_dir: Path | str) -> list[dict[str, Any]]:
    items = []
    with open(Path(run_dir) / ITEMS_FILE, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                items.append(json.loads(line))
    return items


def reaggregate_run(run_dir: Path | str) -> RunReport:
    """Rebuild the report from a run directory's per-item log alone."""
    run_dir = Path(run_dir)
    run_payload = json.loads((run_dir / RUN_FILE).read_text(encoding="utf-8"))
    cfg = run_payload["config"]
    retrieval_cfg = cfg.get("retrieval")
    config = EvalRunConfig(
        dataset_name=cfg["dataset_name"],
        generator_name=cfg["generator_name"],
        judge_name=cfg.get("judge_name"),
        retrieval=RetrievalConfig(**retrieval_cfg) if retrieval_cfg else None,
        embedder_name=cfg.get("embedder_name", ""),
        seed=cfg.get("seed", 0),
        simulated_timing=cfg.get("simulated_timing", False),
    )
    items = read_items(run_dir)
    return aggregate_items(
        items,
        dataset_name=config.dataset_name,
        model_name=config.generator_name,
        header=_report_header(config),
    )
