/** Report view: metric tables rendered from the service's report JSON.
 *
 * The service stores report.json values parsed from report.csv, so
 * re-formatting with the same precision reproduces the CSV exactly:
 * 4 decimals for metric fractions, 2 for percentages/latency/entity
 * counts, integers as-is, and "-" for absent cells.
 */

import type { Report, ReportRow } from "./api.js";
import { escapeHtml } from "./render.js";

type ColumnKind = "text" | "int" | "fixed4" | "fixed2";

const COLUMNS: { key: keyof ReportRow; label: string; kind: ColumnKind }[] = [
  { key: "dataset", label: "Dataset", kind: "text" },
  { key: "model", label: "Model", kind: "text" },
  { key: "n_items", label: "N", kind: "int" },
  { key: "rouge_l", label: "ROUGE-L", kind: "fixed4" },
  { key: "token_f1", label: "F1", kind: "fixed4" },
  { key: "bert_f1", label: "BERT-F1", kind: "fixed4" },
  { key: "ppl_pred", label: "PPL_pred", kind: "fixed4" },
  { key: "recall_at_k", label: "Recall@K", kind: "fixed4" },
  { key: "k", label: "K", kind: "int" },
  { key: "context_relevance", label: "Context relevance", kind: "fixed4" },
  { key: "entities_used", label: "Entities used", kind: "fixed2" },
  { key: "latency_s_per_item", label: "Latency (s/it)", kind: "fixed2" },
  { key: "accuracy_pct", label: "Accuracy %", kind: "fixed2" },
  { key: "factuality_pct", label: "Factuality %", kind: "fixed2" },
  { key: "rated", label: "Rated", kind: "int" },
  { key: "abstentions", label: "Abstentions", kind: "int" },
];

export function formatCell(value: string | number | null, kind: ColumnKind): string {
  if (value === null || value === undefined) return "-";
  switch (kind) {
    case "text":
      return String(value);
    case "int":
      return String(value);
    case "fixed4":
      return (value as number).toFixed(4);
    case "fixed2":
      return (value as number).toFixed(2);
  }
}

export function reportRowCells(row: ReportRow): string[] {
  return COLUMNS.map(({ key, kind }) => formatCell(row[key] as string | number | null, kind));
}

export function renderReportView(runId: string, report: Report | null): string {
  if (report === null) {
    return `<div class="report-missing">No report found for run ${escapeHtml(runId)}.</div>`;
  }
  const header = COLUMNS.map((c) => `<th>${escapeHtml(c.label)}</th>`).join("");
  const body = report.rows
    .map(
      (row) =>
        `<tr>${reportRowCells(row)
          .map((cell) => `<td>${escapeHtml(cell)}</td>`)
          .join("")}</tr>`,
    )
    .join("\n");
  const params = report.parameters
    .map(
      (p) =>
        `<li>${Object.entries(p)
          .map(([k, v]) => `${escapeHtml(k)}=${escapeHtml(String(v))}`)
          .join(", ")}</li>`,
    )
    .join("");
  return `
  <div class="report-view">
    <h2>Run ${escapeHtml(runId)}</h2>
    <table class="report-table"><thead><tr>${header}</tr></thead><tbody>${body}</tbody></table>
    ${params ? `<h3>Parameters</h3><ul class="report-params">${params}</ul>` : ""}
  </div>`;
}
