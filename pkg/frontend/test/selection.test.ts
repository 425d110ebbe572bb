// @vitest-environment happy-dom
import { describe, expect, it } from "vitest";

import { captureSelection } from "../src/selection.js";

function renderUtterances(texts: string[]): HTMLElement[] {
  document.body.innerHTML = "";
  return texts.map((text, i) => {
    const node = document.createElement("div");
    node.className = "utterance";
    node.dataset.turn = String(i + 1);
    node.textContent = text;
    document.body.appendChild(node);
    return node;
  });
}

function select(startNode: Node, startOffset: number, endNode: Node, endOffset: number): Selection {
  const range = document.createRange();
  range.setStart(startNode, startOffset);
  range.setEnd(endNode, endOffset);
  const selection = window.getSelection()!;
  selection.removeAllRanges();
  selection.addRange(range);
  return selection;
}

describe("captureSelection", () => {
  it("converts a selection inside one utterance to a span", () => {
    const [first] = renderUtterances(["hello brave world", "second message"]);
    const textNode = first.firstChild!;
    const result = captureSelection(select(textNode, 6, textNode, 11));
    expect(result.error).toBeUndefined();
    expect(result.span).toEqual({ turn: 1, char_start: 6, char_end: 11 });
  });

  it("rejects selections across two utterances", () => {
    const [first, second] = renderUtterances(["first message", "second message"]);
    const result = captureSelection(
      select(first.firstChild!, 3, second.firstChild!, 4),
    );
    expect(result.span).toBeUndefined();
    expect(result.error).toContain("cannot span two utterances");
  });

  it("rejects selections outside the conversation", () => {
    renderUtterances(["only message"]);
    const stray = document.createElement("p");
    stray.textContent = "not an utterance";
    document.body.appendChild(stray);
    const result = captureSelection(
      select(stray.firstChild!, 0, stray.firstChild!, 3),
    );
    expect(result.error).toBeDefined();
  });

  it("rejects collapsed selections", () => {
    const [first] = renderUtterances(["some message"]);
    const node = first.firstChild!;
    const result = captureSelection(select(node, 3, node, 3));
    expect(result.error).toBeDefined();
  });

  it("reports code point offsets when astral characters precede", () => {
    const [first] = renderUtterances(["ab\u{1F600}cd efg"]);
    const node = first.firstChild!;
    // UTF-16: a(0) b(1) emoji(2,3) c(4) d(5) space(6) e(7); select "cd"
    const result = captureSelection(select(node, 4, node, 6));
    expect(result.span).toEqual({ turn: 1, char_start: 3, char_end: 5 });
  });
});
