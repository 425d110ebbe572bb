/**
 * Client-side mirror of the service's judgment validation. Submissions that
 * pass here never bounce off the server for structural reasons.
 */

import type { ConversationPayload, JudgmentPayload } from "./types.js";
import { codePointLength } from "./offsets.js";

export const MIN_SUMMARY_WORDS = 6;

export function summaryWordCount(summary: string): number {
  return summary.split(/\s+/).filter((w) => w.length > 0).length;
}

export interface FieldProblems {
  [field: string]: string;
}

export function validateJudgment(
  payload: JudgmentPayload,
  conversation: ConversationPayload,
): FieldProblems {
  const problems: FieldProblems = {};
  if (!payload.worker_id.trim()) {
    problems.worker_id = "worker id required";
  }
  if (![0, 1, 2].includes(payload.label)) {
    problems.label = "label must be 0, 1 or 2";
  }
  if (summaryWordCount(payload.summary) < MIN_SUMMARY_WORDS) {
    problems.summary = `summary needs at least ${MIN_SUMMARY_WORDS} words`;
  }
  if (payload.label >= 1 && payload.evidence.length === 0) {
    problems.evidence = "labels 1 and 2 require highlighted evidence";
  }
  payload.evidence.forEach((span, i) => {
    const utterance = conversation.utterances.find((u) => u.turn === span.turn);
    if (!utterance) {
      problems[`evidence[${i}]`] = `turn ${span.turn} outside conversation`;
      return;
    }
    if (span.char_start < 0 || span.char_start >= span.char_end) {
      problems[`evidence[${i}]`] = "span must satisfy 0 <= start < end";
      return;
    }
    if (span.char_end > codePointLength(utterance.text)) {
      problems[`evidence[${i}]`] = "span exceeds utterance text";
    }
  });
  return problems;
}
