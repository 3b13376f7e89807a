"""Evaluation report types and rendering (Markdown + CSV with identical values).

Metrics render at 4 decimals and percentages at 2; absent values render
as "-". The CSV is the machine-readable twin of the Markdown tables and
parses back to the same values.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Any, Sequence


@dataclass
class MetricReport:
    rouge_l: float
    token_f1: float
    bert_f1: float
    ppl_pred: float | None
    dataset_name: str
    model_name: str
    n_items: int


@dataclass
class RetrievalReport:
    recall_at_k: float | None
    k: int
    context_relevance: float
    entities_used: float
    latency_s_per_item: float


@dataclass
class JudgeSummary:
    accuracy_pct: float | None
    factuality_pct: float | None
    rated: int
    abstentions: int


@dataclass
class RunReport:
    metric: MetricReport
    retrieval: RetrievalReport | None = None
    judge: JudgeSummary | None = None
    header: dict[str, Any] = field(default_factory=dict)


def _fmt4(value: float | None) -> str:
    return "-" if value is None else f"{value:.4f}"


def _fmt2(value: float | None) -> str:
    return "-" if value is None else f"{value:.2f}"


def _fmt_int(value: int | None) -> str:
    return "-" if value is None else str(value)


CSV_COLUMNS = [
    "dataset", "model", "n_items",
    "rouge_l", "token_f1", "bert_f1", "ppl_pred",
    "recall_at_k", "k", "context_relevance", "entities_used", "latency_s_per_item",
    "accuracy_pct", "factuality_pct", "rated", "abstentions",
]


def _csv_row(report: RunReport) -> list[str]:
    m, r, j = report.metric, report.retrieval, report.judge
    return [
        m.dataset_name, m.model_name, str(m.n_items),
        _fmt4(m.rouge_l), _fmt4(m.token_f1), _fmt4(m.bert_f1), _fmt4(m.ppl_pred),
        _fmt4(r.recall_at_k) if r else "-",
        _fmt_int(r.k) if r else "-",
        _fmt4(r.context_relevance) if r else "-",
        _fmt2(r.entities_used) if r else "-",
        _fmt2(r.latency_s_per_item) if r else "-",
        _fmt2(j.accuracy_pct) if j else "-",
        _fmt2(j.factuality_pct) if j else "-",
        _fmt_int(j.rated) if j else "-",
        _fmt_int(j.abstentions) if j else "-",
    ]


def _markdown_table(headers: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    lines = ["| " + " | ".join(headers) + " |"]
    lines.append("|" + "|".join(" --- " for _ in headers) + "|")
    for row in rows:
        lines.append("| " + " | ".join(row) + " |")
    return "\n".join(lines)


def render_report(reports: Sequence[RunReport]) -> tuple[str, str]:
    """Render reports to (markdown, csv). Values are identical across both."""
    if not reports:
        raise ValueError("nothing to render")

    sections = ["# Evaluation report", ""]

    param_keys: list[str] = []
    for report in reports:
        for key in report.header:
            if key not in param_keys:
                param_keys.append(key)
    if param_keys:
        sections.append("## Run parameters")
        sections.append("")
        rows = [
            [r.metric.dataset_name, r.metric.model_name]
            + [str(r.header.get(k, "-")) for k in param_keys]
            for r in reports
        ]
        sections.append(_markdown_table(["Dataset", "Model"] + param_keys, rows))
        sections.append("")

    sections.append("## Generation quality")
    sections.append("")
    sections.append(
        _markdown_table(
            ["Dataset", "Model", "N", "ROUGE-L", "F1", "BERT-F1", "PPL_pred"],
            [
                [
                    r.metric.dataset_name,
                    r.metric.model_name,
                    str(r.metric.n_items),
                    _fmt4(r.metric.rouge_l),
                    _fmt4(r.metric.token_f1),
                    _fmt4(r.metric.bert_f1),
                    _fmt4(r.metric.ppl_pred),
                ]
                for r in reports
            ],
        )
    )
    sections.append("")

    sections.append("## Retrieval and efficiency")
    sections.append("")
    sections.append(
        _markdown_table(
            ["Dataset", "Model", "Recall@K", "K", "Context relevance",
             "Entities used", "Latency (s/it)"],
            [
                [
                    r.metric.dataset_name,
                    r.metric.model_name,
                    _fmt4(r.retrieval.recall_at_k) if r.retrieval else "-",
                    _fmt_int(r.retrieval.k) if r.retrieval else "-",
                    _fmt4(r.retrieval.context_relevance) if r.retrieval else "-",
                    _fmt2(r.retrieval.entities_used) if r.retrieval else "-",
                    _fmt2(r.retrieval.latency_s_per_item) if r.retrieval else "-",
                ]
                for r in reports
            ],
        )
    )
    sections.append("")

    sections.append("## Accuracy and factuality ratings")
    sections.append("")
    sections.append(
        _markdown_table(
            ["Dataset", "Model", "Accuracy %", "Factuality %", "Rated", "Abstentions"],
            [
                [
                    r.metric.dataset_name,
                    r.metric.model_name,
                    _fmt2(r.judge.accuracy_pct) if r.judge else "-",
                    _fmt2(r.judge.factuality_pct) if r.judge else "-",
                    _fmt_int(r.judge.rated) if r.judge else "-",
                    _fmt_int(r.judge.abstentions) if r.judge else "-",
                ]
                for r in reports
            ],
        )
    )
    sections.append("")

    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for report in reports:
        writer.writerow(_csv_row(report))

    return "\n".join(sections), buffer.getvalue()


_INT_COLUMNS = {"n_items", "k", "rated", "abstentions"}
_TEXT_COLUMNS = {"dataset", "model"}


def parse_report_csv(text: str) -> list[dict[str, Any]]:
    """Parse a rendered report CSV back into typed rows ('-' becomes None)."""
    reader = csv.DictReader(io.StringIO(text))
    rows = []
    for raw in reader:
        row: dict[str, Any] = {}
        for key, value in raw.items():
            if key in _TEXT_COLUMNS:
                row[key] = value
            elif value == "-" or value == "" or value is None:
                row[key] = None
            elif key in _INT_COLUMNS:
                row[key] = int(value)
            else:
                row[key] = float(value)
        rows.append(row)
    return rows
