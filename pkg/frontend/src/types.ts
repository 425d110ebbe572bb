/** Payload shapes shared with the annotation service HTTP API. */

export interface UtterancePayload {
  turn: number;
  author: string;
  text: string;
}

export interface ConversationPayload {
  id: string;
  title: string;
  category: string;
  utterances: UtterancePayload[];
}

export interface DocumentPayload {
  doc_id: string;
  title: string;
  first_sentence: string;
  text: string;
}

export interface TaskPayload {
  conversation: ConversationPayload;
  documents: DocumentPayload[];
  already_judged: string[];
  min_summary_words: number;
}

/** Evidence span in Unicode code point offsets (server contract). */
export interface Span {
  turn: number;
  char_start: number;
  char_end: number;
}

export type Label = 0 | 1 | 2;

export interface JudgmentPayload {
  worker_id: string;
  conversation_id: string;
  doc_id: string;
  label: Label;
  evidence: Span[];
  summary: string;
}

/** Ranked from most to least relevant; wording is this project's own. */
export const LABEL_DESCRIPTIONS: Record<Label, { name: string; hint: string }> = {
  2: {
    name: "Provides useful context",
    hint:
      "The article directly supports the conversation: its main topic, key people, events or concepts.",
  },
  1: {
    name: "Partially relevant",
    hint:
      "The article touches the conversation sideways: a broader theme or a tangential concept, not the main topic.",
  },
  0: {
    name: "Irrelevant",
    hint: "The article adds nothing useful to this conversation.",
  },
};
