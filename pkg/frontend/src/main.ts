/** DOM wiring: renders the gated annotation workflow against the service. */

import { fetchTask, submitJudgment } from "./api.js";
import { captureSelection } from "./selection.js";
import {
  addHighlight,
  buildJudgmentPayloads,
  canRevealMore,
  canSubmit,
  clearHighlights,
  docComplete,
  documentsUnlocked,
  newTaskView,
  nextDocument,
  previousDocument,
  revealNextTurn,
  setLabel,
  setSummary,
  summaryOk,
  turnCount,
  type TaskViewState,
} from "./state.js";
import { LABEL_DESCRIPTIONS, type Label } from "./types.js";
import { summaryWordCount } from "./validation.js";

let state: TaskViewState | null = null;
let workerId = "";
let message = "";

const root = () => document.getElementById("app") as HTMLElement;

function el(tag: string, attrs: Record<string, string> = {}, text = ""): HTMLElement {
  const node = document.createElement(tag);
  for (const [key, value] of Object.entries(attrs)) {
    node.setAttribute(key, value);
  }
  if (text) {
    node.textContent = text;
  }
  return node;
}

function render(): void {
  const host = root();
  host.textContent = "";
  if (!workerId) {
    renderLogin(host);
    return;
  }
  if (!state) {
    host.append(el("p", {}, "No tasks available right now. Thank you!"));
    return;
  }
  if (message) {
    host.append(el("p", { class: "message" }, message));
  }
  renderConversation(host, state);
  renderSummary(host, state);
  if (documentsUnlocked(state)) {
    renderDocuments(host, state);
  } else {
    host.append(
      el(
        "p",
        { class: "hint" },
        "Documents unlock after you have read every message and written a summary.",
      ),
    );
  }
}

function renderLogin(host: HTMLElement): void {
  const form = el("div", { class: "login" });
  form.append(el("h1", {}, "Conversation annotation"));
  form.append(
    el(
      "p",
      {},
      "Read a conversation one message at a time, summarize it, then grade " +
        "each suggested article and highlight the sentences that support " +
        "your grade.",
    ),
  );
  const input = el("input", { id: "worker", placeholder: "worker id" }) as HTMLInputElement;
  const button = el("button", {}, "Start");
  button.addEventListener("click", async () => {
    if (!input.value.trim()) {
      return;
    }
    workerId = input.value.trim();
    await loadNextTask();
  });
  form.append(input, button);
  host.append(form);
}

function renderConversation(host: HTMLElement, view: TaskViewState): void {
  const panel = el("section", { class: "conversation" });
  panel.append(el("h2", {}, view.task.conversation.title));
  panel.append(el("p", { class: "category" }, `from ${view.task.conversation.category}`));
  for (const utterance of view.task.conversation.utterances.slice(0, view.revealedTurns)) {
    const item = el("div", { class: "utterance", "data-turn": String(utterance.turn) });
    item.append(el("span", { class: "author" }, utterance.author + ": "));
    item.append(document.createTextNode(utterance.text));
    panel.append(item);
  }
  const next = el("button", { id: "reveal" }, "Next message") as HTMLButtonElement;
  next.disabled = !canRevealMore(view);
  next.addEventListener("click", () => {
    state = revealNextTurn(view);
    render();
  });
  panel.append(next);
  panel.append(
    el("p", { class: "progress" }, `${view.revealedTurns} / ${turnCount(view)} messages read`),
  );
  host.append(panel);
}

function renderSummary(host: HTMLElement, view: TaskViewState): void {
  const panel = el("section", { class: "summary" });
  panel.append(el("h3", {}, "Summarize the conversation (1-2 sentences)"));
  const area = el("textarea", { id: "summary", rows: "3" }) as HTMLTextAreaElement;
  area.value = view.summaryDraft;
  area.addEventListener("input", () => {
    state = setSummary(view, area.value);
    const counter = document.getElementById("summary-count");
    if (counter && state) {
      counter.textContent = summaryCounter(state);
      counter.className = summaryOk(state) ? "ok" : "pending";
    }
    if (state && documentsUnlocked(state) !== documentsUnlocked(view)) {
      render();
    }
  });
  panel.append(area);
  panel.append(
    el(
      "p",
      { id: "summary-count", class: summaryOk(view) ? "ok" : "pending" },
      summaryCounter(view),
    ),
  );
  host.append(panel);
}

function summaryCounter(view: TaskViewState): string {
  return `${summaryWordCount(view.summaryDraft)} words (minimum ${view.task.min_summary_words})`;
}

function renderDocuments(host: HTMLElement, view: TaskViewState): void {
  const doc = view.task.documents[view.currentDocIndex];
  const selection = view.selections[view.currentDocIndex];
  const panel = el("section", { class: "document" });
  panel.append(
    el(
      "h3",
      {},
      `Document ${view.currentDocIndex + 1} of ${view.task.documents.length}: ${doc.title}`,
    ),
  );
  panel.append(el("p", { class: "first-sentence" }, doc.first_sentence));
  if (doc.text && doc.text !== doc.first_sentence) {
    panel.append(el("p", { class: "doc-text" }, doc.text));
  }

  const labels = el("div", { class: "labels" });
  for (const value of [2, 1, 0] as Label[]) {
    const description = LABEL_DESCRIPTIONS[value];
    const row = el("label", { class: "label-row" });
    const radio = el("input", {
      type: "radio",
      name: "label",
      value: String(value),
    }) as HTMLInputElement;
    radio.checked = selection.label === value;
    radio.addEventListener("change", () => {
      state = setLabel(view, view.currentDocIndex, value);
      render();
    });
    row.append(radio);
    row.append(el("strong", {}, ` ${description.name}. `));
    row.append(document.createTextNode(description.hint));
    labels.append(row);
  }
  panel.append(labels);

  if (selection.label !== null && selection.label >= 1) {
    const evidence = el("div", { class: "evidence" });
    evidence.append(
      el(
        "p",
        {},
        "Highlight every conversation sentence related to this document, then press the button.",
      ),
    );
    const capture = el("button", { id: "capture" }, "Add highlighted selection");
    capture.addEventListener("click", () => {
      const result = captureSelection(window.getSelection());
      if (result.error) {
        message = result.error;
      } else if (result.span) {
        message = "";
        state = addHighlight(view, view.currentDocIndex, result.span);
      }
      render();
    });
    evidence.append(capture);
    const list = el("ul", { class: "spans" });
    for (const span of selection.spans) {
      list.append(
        el("li", {}, `turn ${span.turn}, chars ${span.char_start}-${span.char_end}`),
      );
    }
    evidence.append(list);
    if (selection.spans.length > 0) {
      const clear = el("button", {}, "Clear highlights");
      clear.addEventListener("click", () => {
        state = clearHighlights(view, view.currentDocIndex);
        render();
      });
      evidence.append(clear);
    }
    evidence.append(
      el(
        "p",
        { class: selection.spans.length ? "ok" : "pending" },
        selection.spans.length
          ? `${selection.spans.length} highlight(s) recorded`
          : "at least one highlight is required for this grade",
      ),
    );
    panel.append(evidence);
  }

  const nav = el("div", { class: "doc-nav" });
  const prev = el("button", {}, "Previous document") as HTMLButtonElement;
  prev.disabled = view.currentDocIndex === 0;
  prev.addEventListener("click", () => {
    state = previousDocument(view);
    render();
  });
  const next = el("button", {}, "Next document") as HTMLButtonElement;
  next.disabled =
    view.currentDocIndex + 1 >= view.task.documents.length || !docComplete(view, view.currentDocIndex);
  next.addEventListener("click", () => {
    state = nextDocument(view);
    render();
  });
  nav.append(prev, next);
  panel.append(nav);

  const submit = el("button", { id: "submit", class: "submit" }, "Submit all judgments") as HTMLButtonElement;
  submit.disabled = !canSubmit(view);
  submit.addEventListener("click", () => void submitAll(view));
  panel.append(submit);
  host.append(panel);
}

async function submitAll(view: TaskViewState): Promise<void> {
  const payloads = buildJudgmentPayloads(view, workerId);
  for (const payload of payloads) {
    const result = await submitJudgment(payload);
    if (!result.ok && result.status !== 409) {
      // 409 means this document was already accepted earlier
      const detail = result.problems
        ? Object.entries(result.problems)
            .map(([field, reason]) => `${field}: ${reason}`)
            .join("; ")
        : `status ${result.status}`;
      message = `The server rejected ${payload.doc_id}: ${detail}`;
      render();
      return;
    }
  }
  message = "Task submitted, thank you. Loading the next one.";
  await loadNextTask();
}

async function loadNextTask(): Promise<void> {
  const task = await fetchTask(workerId);
  state = task ? newTaskView(task) : null;
  render();
}

document.addEventListener("DOMContentLoaded", render);
