/**
 * Task workflow state: gated reading, summary, per-document grading with
 * evidence highlights. Pure transitions over immutable snapshots so every
 * rule is unit-testable without a DOM.
 *
 * Gates, in order:
 *   1. utterances reveal one per click, never skipping ahead;
 *   2. documents stay hidden until every turn is revealed AND the summary
 *      clears the word minimum;
 *   3. labels 1 and 2 cannot be submitted without at least one highlight.
 */

import type { JudgmentPayload, Label, Span, TaskPayload } from "./types.js";
import { summaryWordCount, validateJudgment, type FieldProblems } from "./validation.js";

export interface DocSelection {
  label: Label | null;
  spans: Span[];
}

export interface TaskViewState {
  task: TaskPayload;
  revealedTurns: number;
  summaryDraft: string;
  currentDocIndex: number;
  selections: DocSelection[];
}

export function newTaskView(task: TaskPayload): TaskViewState {
  return {
    task,
    revealedTurns: Math.min(1, task.conversation.utterances.length),
    summaryDraft: "",
    currentDocIndex: 0,
    selections: task.documents.map(() => ({ label: null, spans: [] })),
  };
}

export function turnCount(state: TaskViewState): number {
  return state.task.conversation.utterances.length;
}

export function canRevealMore(state: TaskViewState): boolean {
  return state.revealedTurns < turnCount(state);
}

export function revealNextTurn(state: TaskViewState): TaskViewState {
  if (!canRevealMore(state)) {
    return state;
  }
  return { ...state, revealedTurns: state.revealedTurns + 1 };
}

export function setSummary(state: TaskViewState, draft: string): TaskViewState {
  return { ...state, summaryDraft: draft };
}

export function summaryOk(state: TaskViewState): boolean {
  return summaryWordCount(state.summaryDraft) >= state.task.min_summary_words;
}

/** Gate 2: all turns read and the summary is long enough. */
export function documentsUnlocked(state: TaskViewState): boolean {
  return state.revealedTurns >= turnCount(state) && summaryOk(state);
}

export function setLabel(
  state: TaskViewState,
  docIndex: number,
  label: Label,
): TaskViewState {
  const selections = state.selections.map((s, i) =>
    i === docIndex ? { ...s, label } : s,
  );
  return { ...state, selections };
}

/** Overlapping or touching spans on the same turn collapse into one. */
export function mergeSpans(spans: Span[]): Span[] {
  const sorted = [...spans].sort(
    (a, b) => a.turn - b.turn || a.char_start - b.char_start || a.char_end - b.char_end,
  );
  const merged: Span[] = [];
  for (const span of sorted) {
    const last = merged[merged.length - 1];
    if (last && last.turn === span.turn && span.char_start <= last.char_end) {
      last.char_end = Math.max(last.char_end, span.char_end);
    } else {
      merged.push({ ...span });
    }
  }
  return merged;
}

export function addHighlight(
  state: TaskViewState,
  docIndex: number,
  span: Span,
): TaskViewState {
  if (span.turn < 1 || span.turn > state.revealedTurns) {
    return state; // cannot highlight what has not been read
  }
  if (span.char_start >= span.char_end) {
    return state;
  }
  const selections = state.selections.map((s, i) =>
    i === docIndex ? { ...s, spans: mergeSpans([...s.spans, span]) } : s,
  );
  return { ...state, selections };
}

export function clearHighlights(state: TaskViewState, docIndex: number): TaskViewState {
  const selections = state.selections.map((s, i) =>
    i === docIndex ? { ...s, spans: [] } : s,
  );
  return { ...state, selections };
}

export function nextDocument(state: TaskViewState): TaskViewState {
  if (state.currentDocIndex + 1 >= state.task.documents.length) {
    return state;
  }
  return { ...state, currentDocIndex: state.currentDocIndex + 1 };
}

export function previousDocument(state: TaskViewState): TaskViewState {
  if (state.currentDocIndex === 0) {
    return state;
  }
  return { ...state, currentDocIndex: state.currentDocIndex - 1 };
}

/** Gate 3, per document: a label is chosen and 1/2 carry evidence. */
export function docComplete(state: TaskViewState, docIndex: number): boolean {
  const selection = state.selections[docIndex];
  if (selection.label === null) {
    return false;
  }
  return selection.label === 0 || selection.spans.length > 0;
}

export function canSubmit(state: TaskViewState): boolean {
  if (!documentsUnlocked(state)) {
    return false;
  }
  return state.task.documents.every((_, i) => docComplete(state, i));
}

export function buildJudgmentPayloads(
  state: TaskViewState,
  workerId: string,
): JudgmentPayload[] {
  if (!canSubmit(state)) {
    throw new Error("task is not ready to submit");
  }
  return state.task.documents.map((doc, i) => {
    const selection = state.selections[i];
    return {
      worker_id: workerId,
      conversation_id: state.task.conversation.id,
      doc_id: doc.doc_id,
      label: selection.label as Label,
      evidence: selection.spans,
      summary: state.summaryDraft,
    };
  });
}

/** Every payload the UI can build must pass the mirrored server rules. */
export function validateAll(state: TaskViewState, workerId: string): FieldProblems[] {
  return buildJudgmentPayloads(state, workerId).map((p) =>
    validateJudgment(p, state.task.conversation),
  );
}
