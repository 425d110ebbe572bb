import { describe, expect, it } from "vitest";

import { summaryWordCount, validateJudgment } from "../src/validation.js";
import type { ConversationPayload, JudgmentPayload } from "../src/types.js";

const conversation: ConversationPayload = {
  id: "c1",
  title: "t",
  category: "s",
  utterances: [
    { turn: 1, author: "a", text: "twelve characters here exactly not really" },
    { turn: 2, author: "b", text: "short \u{1F600} text" },
  ],
};

function payload(overrides: Partial<JudgmentPayload> = {}): JudgmentPayload {
  return {
    worker_id: "w1",
    conversation_id: "c1",
    doc_id: "d1",
    label: 2,
    evidence: [{ turn: 1, char_start: 0, char_end: 6 }],
    summary: "a summary with exactly six words",
    ...overrides,
  };
}

describe("summary word count", () => {
  it("counts whitespace separated words", () => {
    expect(summaryWordCount("one two  three\tfour")).toBe(4);
    expect(summaryWordCount("   ")).toBe(0);
  });
});

describe("judgment validation mirror", () => {
  it("accepts a well-formed judgment", () => {
    expect(validateJudgment(payload(), conversation)).toEqual({});
  });

  it("flags short summaries", () => {
    const problems = validateJudgment(
      payload({ summary: "only five words right here" }),
      conversation,
    );
    expect(problems.summary).toBeDefined();
  });

  it("flags relevant labels without evidence", () => {
    const problems = validateJudgment(payload({ evidence: [] }), conversation);
    expect(problems.evidence).toBeDefined();
  });

  it("accepts label zero without evidence", () => {
    const problems = validateJudgment(
      payload({ label: 0, evidence: [] }),
      conversation,
    );
    expect(problems).toEqual({});
  });

  it("flags spans beyond the utterance, measured in code points", () => {
    // turn 2 text has 12 code points but 13 UTF-16 units
    const fine = validateJudgment(
      payload({ evidence: [{ turn: 2, char_start: 0, char_end: 12 }] }),
      conversation,
    );
    expect(fine).toEqual({});
    const over = validateJudgment(
      payload({ evidence: [{ turn: 2, char_start: 0, char_end: 13 }] }),
      conversation,
    );
    expect(Object.keys(over).some((k) => k.startsWith("evidence["))).toBe(true);
  });

  it("flags unknown turns and inverted spans", () => {
    const unknown = validateJudgment(
      payload({ evidence: [{ turn: 9, char_start: 0, char_end: 3 }] }),
      conversation,
    );
    expect(unknown["evidence[0]"]).toContain("turn 9");
    const inverted = validateJudgment(
      payload({ evidence: [{ turn: 1, char_start: 5, char_end: 5 }] }),
      conversation,
    );
    expect(inverted["evidence[0]"]).toBeDefined();
  });
});
