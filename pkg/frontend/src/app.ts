/** Browser shell: wires the chat form, settings, entity cards, and the
 * report view to the JSON API. All state lives in the Session object;
 * the service holds the credentials and does the computing.
 */

import { ApiClient, ApiError } from "./api.js";
import { renderEntityCard, renderTurn } from "./render.js";
import { renderReportView } from "./report.js";
import { Session, canSubmit } from "./session.js";

const client = new ApiClient("");
const session = new Session();

function byId<T extends HTMLElement>(id: string): T {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el as T;
}

const questionInput = byId<HTMLTextAreaElement>("question");
const submitButton = byId<HTMLButtonElement>("submit");
const turnsEl = byId<HTMLDivElement>("turns");
const topKInput = byId<HTMLInputElement>("top-k");
const useGraphInput = byId<HTMLInputElement>("use-graph");
const generatorInput = byId<HTMLInputElement>("generator");
const entityPanel = byId<HTMLDivElement>("entity-panel");
const reportSelect = byId<HTMLSelectElement>("report-select");
const reportPanel = byId<HTMLDivElement>("report-panel");
const statusEl = byId<HTMLSpanElement>("status");

function refreshSubmitState(): void {
  submitButton.disabled = !canSubmit(questionInput.value) || inFlight;
}

let inFlight = false;

function readSettings(): void {
  session.updateSettings({
    topK: Math.max(1, Number(topKInput.value) || 5),
    useGraph: useGraphInput.checked,
    generator: generatorInput.value || "mock-echo",
  });
}

function renderTurns(): void {
  turnsEl.innerHTML = session.turns.map(renderTurn).join("\n");
  turnsEl.querySelectorAll<HTMLButtonElement>(".entity-chip").forEach((chip) => {
    chip.addEventListener("click", () => showEntity(chip.dataset.entityId ?? ""));
  });
  turnsEl.querySelectorAll<HTMLButtonElement>(".retry").forEach((button) => {
    button.addEventListener("click", () => {
      questionInput.value = button.dataset.question ?? "";
      void submitQuestion();
    });
  });
  turnsEl.scrollTop = turnsEl.scrollHeight;
}

async function showEntity(entityId: string): Promise<void> {
  if (!entityId) return;
  try {
    const card = await client.entityCard(entityId);
    entityPanel.innerHTML = renderEntityCard(card);
    entityPanel.querySelectorAll<HTMLButtonElement>(".entity-chip").forEach((chip) => {
      chip.addEventListener("click", () => showEntity(chip.dataset.entityId ?? ""));
    });
  } catch (error) {
    entityPanel.innerHTML = `<div class="error">${String(error)}</div>`;
  }
}

async function submitQuestion(): Promise<void> {
  const question = questionInput.value;
  if (!canSubmit(question) || inFlight) return;
  readSettings();
  inFlight = true;
  refreshSubmitState();
  statusEl.textContent = "asking...";
  try {
    const response = await client.query(question, session.settings);
    session.addTurn({
      question,
      answer: response.answer,
      contexts: response.contexts,
      entitiesUsed: response.entities_used,
      latencySeconds: response.latency_seconds,
      error: null,
    });
  } catch (error) {
    if (error instanceof ApiError) {
      // A 502 still carries the retrieval contexts; show them.
      session.addTurn({
        question,
        answer: null,
        contexts: error.contexts,
        entitiesUsed: error.entitiesUsed,
        latencySeconds: null,
        error: error.message,
      });
    } else {
      session.addTurn({
        question,
        answer: null,
        contexts: [],
        entitiesUsed: null,
        latencySeconds: null,
        error: String(error),
      });
    }
  } finally {
    inFlight = false;
    statusEl.textContent = "";
    questionInput.value = "";
    refreshSubmitState();
    renderTurns();
  }
}

async function loadReports(): Promise<void> {
  try {
    const runs = await client.listReports();
    reportSelect.innerHTML =
      `<option value="">select a run...</option>` +
      runs.map((r) => `<option value="${r}">${r}</option>`).join("");
  } catch {
    reportSelect.innerHTML = `<option value="">no reports</option>`;
  }
}

async function showReport(runId: string): Promise<void> {
  if (!runId) {
    reportPanel.innerHTML = "";
    return;
  }
  try {
    const report = await client.report(runId);
    reportPanel.innerHTML = renderReportView(runId, report);
  } catch (error) {
    if (error instanceof ApiError && error.status === 404) {
      reportPanel.innerHTML = renderReportView(runId, null);
    } else {
      reportPanel.innerHTML = `<div class="error">${String(error)}</div>`;
    }
  }
}

submitButton.addEventListener("click", () => void submitQuestion());
questionInput.addEventListener("input", refreshSubmitState);
questionInput.addEventListener("keydown", (event) => {
  if (event.key === "Enter" && !event.shiftKey) {
    event.preventDefault();
    void submitQuestion();
  }
});
reportSelect.addEventListener("change", () => void showReport(reportSelect.value));

refreshSubmitState();
void loadReports();
void client.health().then((h) => {
  statusEl.textContent = h.generation_id
    ? `serving ${h.generation_id}`
    : "no index loaded yet";
  setTimeout(() => (statusEl.textContent = ""), 4000);
});
