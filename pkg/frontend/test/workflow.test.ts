// @vitest-environment happy-dom
// Drives the rendered UI through a whole task: login, gated reading,
// summary, grading with a real text selection, submission over a stubbed
// fetch, and the empty-queue finish.
import { beforeEach, describe, expect, it, vi } from "vitest";

import type { JudgmentPayload, TaskPayload } from "../src/types.js";

const TASK: TaskPayload = {
  conversation: {
    id: "c1",
    title: "apples",
    category: "fruit",
    utterances: [
      { turn: 1, author: "a", text: "I love apples. They are crisp." },
      { turn: 2, author: "b", text: "Bananas beat apples every day." },
    ],
  },
  documents: [
    {
      doc_id: "d1",
      title: "Apple",
      first_sentence: "An apple is a fruit.",
      text: "An apple is a fruit. It grows on trees.",
    },
  ],
  already_judged: [],
  min_summary_words: 6,
};

function setupFetch(posted: JudgmentPayload[], tasks: (TaskPayload | null)[]) {
  vi.stubGlobal(
    "fetch",
    vi.fn(async (url: string, init?: RequestInit) => {
      if (String(url).startsWith("/task")) {
        const next = tasks.shift() ?? null;
        return new Response(JSON.stringify({ task: next }), { status: 200 });
      }
      if (String(url) === "/judgment") {
        posted.push(JSON.parse(String(init?.body)) as JudgmentPayload);
        return new Response(JSON.stringify({ accepted: true }), { status: 200 });
      }
      throw new Error(`unexpected fetch ${url}`);
    }),
  );
}

function click(selector: string): void {
  const nodes = Array.from(document.querySelectorAll("button"));
  const target =
    document.querySelector<HTMLButtonElement>(selector) ??
    nodes.find((b) => b.textContent === selector);
  if (!target) {
    throw new Error(`no element for ${selector}`);
  }
  target.dispatchEvent(new MouseEvent("click", { bubbles: true }));
}

async function flush(): Promise<void> {
  await new Promise((resolve) => setTimeout(resolve, 0));
}

describe("full annotation workflow", () => {
  beforeEach(() => {
    vi.resetModules();
    vi.unstubAllGlobals();
    document.body.innerHTML = '<main id="app"></main>';
  });

  it("walks login, gating, highlighting and submission", async () => {
    const posted: JudgmentPayload[] = [];
    setupFetch(posted, [structuredClone(TASK), null]);

    await import("../src/main.js");
    document.dispatchEvent(new Event("DOMContentLoaded"));

    // login
    const worker = document.querySelector<HTMLInputElement>("#worker")!;
    worker.value = "w7";
    click("Start");
    await flush();

    // only turn 1 is visible; no document panel yet
    expect(document.querySelectorAll(".utterance").length).toBe(1);
    expect(document.querySelector(".document")).toBeNull();

    click("#reveal");
    await flush();
    expect(document.querySelectorAll(".utterance").length).toBe(2);
    expect((document.querySelector("#reveal") as HTMLButtonElement).disabled).toBe(true);

    // still gated: summary too short
    expect(document.querySelector(".document")).toBeNull();
    const summary = document.querySelector<HTMLTextAreaElement>("#summary")!;
    summary.value = "two friends argue about apples and bananas";
    summary.dispatchEvent(new Event("input", { bubbles: true }));
    await flush();
    expect(document.querySelector(".document")).not.toBeNull();

    // grade 2 requires evidence before submit enables
    const radios = document.querySelectorAll<HTMLInputElement>('input[name="label"]');
    radios[0].dispatchEvent(new Event("change", { bubbles: true })); // label 2
    await flush();
    expect((document.querySelector("#submit") as HTMLButtonElement).disabled).toBe(true);

    // select "apples" inside turn 1 and capture it
    const utterance = document.querySelector('[data-turn="1"]')!;
    const textNode = Array.from(utterance.childNodes).find((n) => n.nodeType === 3 && (n.textContent ?? "").includes("apples"))!;
    const range = document.createRange();
    const offset = (textNode.textContent ?? "").indexOf("apples");
    range.setStart(textNode, offset);
    range.setEnd(textNode, offset + 6);
    const selection = window.getSelection()!;
    selection.removeAllRanges();
    selection.addRange(range);
    click("#capture");
    await flush();

    const submit = document.querySelector("#submit") as HTMLButtonElement;
    expect(submit.disabled).toBe(false);
    click("#submit");
    await flush();
    await flush();

    expect(posted).toHaveLength(1);
    expect(posted[0].doc_id).toBe("d1");
    expect(posted[0].label).toBe(2);
    expect(posted[0].worker_id).toBe("w7");
    expect(posted[0].evidence).toHaveLength(1);
    expect(posted[0].evidence[0].turn).toBe(1);
    expect(posted[0].summary).toContain("apples and bananas");

    // queue drained: thank-you screen
    expect(document.body.textContent).toContain("No tasks available");
  });

  it("keeps submit disabled when a label is missing", async () => {
    const posted: JudgmentPayload[] = [];
    const twoDocs = structuredClone(TASK);
    twoDocs.documents.push({
      doc_id: "d2",
      title: "Banana",
      first_sentence: "A banana is a fruit.",
      text: "A banana is a fruit.",
    });
    setupFetch(posted, [twoDocs, null]);

    await import("../src/main.js");
    document.dispatchEvent(new Event("DOMContentLoaded"));
    const worker = document.querySelector<HTMLInputElement>("#worker")!;
    worker.value = "w8";
    click("Start");
    await flush();
    click("#reveal");
    await flush();
    const summary = document.querySelector<HTMLTextAreaElement>("#summary")!;
    summary.value = "a suitably long summary about fruit preferences";
    summary.dispatchEvent(new Event("input", { bubbles: true }));
    await flush();

    // grade only the first document (label 0 needs no evidence)
    const radios = document.querySelectorAll<HTMLInputElement>('input[name="label"]');
    radios[2].dispatchEvent(new Event("change", { bubbles: true })); // label 0
    await flush();
    expect((document.querySelector("#submit") as HTMLButtonElement).disabled).toBe(true);
    expect(posted).toHaveLength(0);
  });
});
