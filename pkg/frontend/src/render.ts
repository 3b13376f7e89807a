/** HTML rendering for turns, citations, entity cards.
 *
 * Pure string builders so they are testable without a DOM; the app shell
 * injects the results. Every number shown comes straight from a service
 * response field; this module only formats.
 */

import type { ContextItem, EntityCard } from "./api.js";
import type { Turn } from "./session.js";

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;")
    .replace(/'/g, "&#39;");
}

export function formatScore(value: number): string {
  return value.toFixed(4);
}

export function formatLatency(seconds: number): string {
  return `${seconds.toFixed(2)} s`;
}

function renderCitation(context: ContextItem, index: number): string {
  const heading = context.section_heading || "(no heading)";
  const chips = context.via_entities
    .map(
      (id) =>
        `<button class="entity-chip" data-entity-id="${escapeHtml(id)}">${escapeHtml(id)}</button>`,
    )
    .join(" ");
  return `
  <li class="citation">
    <div class="citation-head">
      <span class="citation-rank">[${index + 1}]</span>
      <span class="citation-doc">${escapeHtml(context.doc_id)}</span>
      <span class="citation-section">${escapeHtml(heading)}</span>
      <span class="citation-score">score ${formatScore(context.fused_score)}</span>
    </div>
    <blockquote class="citation-text">${escapeHtml(context.text)}</blockquote>
    ${chips ? `<div class="citation-entities">via ${chips}</div>` : ""}
  </li>`;
}

function entityChips(turn: Turn): string {
  const ids = new Set<string>();
  for (const context of turn.contexts) {
    for (const id of context.via_entities) ids.add(id);
  }
  return [...ids]
    .sort()
    .map(
      (id) =>
        `<button class="entity-chip" data-entity-id="${escapeHtml(id)}">${escapeHtml(id)}</button>`,
    )
    .join(" ");
}

export function renderTurn(turn: Turn): string {
  const parts: string[] = [`<article class="turn">`];
  parts.push(`<p class="question">${escapeHtml(turn.question)}</p>`);
  if (turn.error !== null) {
    parts.push(
      `<div class="error">
        <p>${escapeHtml(turn.error)}</p>
        <button class="retry" data-question="${escapeHtml(turn.question)}">Retry</button>
      </div>`,
    );
  }
  if (turn.answer !== null) {
    parts.push(`<div class="answer">${escapeHtml(turn.answer)}</div>`);
  }
  const meta: string[] = [];
  if (turn.entitiesUsed !== null) {
    meta.push(`<span class="entities-used">entities used: ${turn.entitiesUsed}</span>`);
  }
  if (turn.latencySeconds !== null) {
    meta.push(`<span class="latency">latency: ${formatLatency(turn.latencySeconds)}</span>`);
  }
  if (meta.length) {
    parts.push(`<div class="turn-meta">${meta.join(" · ")}</div>`);
  }
  const chips = entityChips(turn);
  if (chips) {
    parts.push(`<div class="turn-entities">graph entities: ${chips}</div>`);
  }
  if (turn.contexts.length) {
    parts.push(
      `<details class="citations" open><summary>${turn.contexts.length} cited context(s)</summary>
       <ol>${turn.contexts.map(renderCitation).join("\n")}</ol></details>`,
    );
  }
  parts.push(`</article>`);
  return parts.join("\n");
}

export function renderEntityCard(card: EntityCard): string {
  const aliases = card.aliases.length
    ? `<p class="aliases">aliases: ${card.aliases.map(escapeHtml).join(", ")}</p>`
    : "";
  const neighbors = card.neighbors.length
    ? card.neighbors
        .map(
          (n) =>
            `<li><button class="entity-chip" data-entity-id="${escapeHtml(n.entity_id)}">` +
            `${escapeHtml(n.canonical_name)}</button></li>`,
        )
        .join("")
    : "<li>(no neighbors)</li>";
  return `
  <div class="entity-card">
    <h3>${escapeHtml(card.canonical_name)} <span class="category">${escapeHtml(card.category)}</span></h3>
    ${aliases}
    <p>mentioned in ${card.mention_chunk_count} chunk(s), ${card.mention_total} mention(s)</p>
    <h4>neighbors</h4>
    <ul>${neighbors}</ul>
  </div>`;
}
