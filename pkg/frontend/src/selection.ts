/**
 * Converts a live browser selection into a span on one utterance.
 * Selections crossing utterance boundaries are rejected with a message the
 * caller can surface; offsets are normalized to Unicode code points.
 */

import type { Span } from "./types.js";
import { utf16ToCodePoint } from "./offsets.js";

export interface CaptureResult {
  span?: Span;
  error?: string;
}

/** Walk up from a node to the enclosing utterance container, if any. */
function utteranceElement(node: Node | null): HTMLElement | null {
  let current: Node | null = node;
  while (current) {
    if (
      current instanceof HTMLElement &&
      current.dataset !== undefined &&
      current.dataset.turn !== undefined
    ) {
      return current;
    }
    current = current.parentNode;
  }
  return null;
}

/** UTF-16 offset of (node, offsetInNode) within the container's text. */
function utf16OffsetWithin(container: HTMLElement, node: Node, offset: number): number {
  const walker = container.ownerDocument.createTreeWalker(container, 4 /* TEXT */);
  let total = 0;
  let cursor = walker.nextNode();
  while (cursor) {
    if (cursor === node) {
      return total + offset;
    }
    total += (cursor.textContent ?? "").length;
    cursor = walker.nextNode();
  }
  // node is the container itself: offset counts child nodes, approximate by
  // summing the text of the skipped children
  return total;
}

export function captureSelection(selection: Selection | null): CaptureResult {
  if (!selection || selection.rangeCount === 0 || selection.isCollapsed) {
    return { error: "select some conversation text first" };
  }
  const range = selection.getRangeAt(0);
  const startEl = utteranceElement(range.startContainer);
  const endEl = utteranceElement(range.endContainer);
  if (!startEl || !endEl) {
    return { error: "highlight text inside the conversation" };
  }
  if (startEl !== endEl) {
    return { error: "a highlight cannot span two utterances; select within one" };
  }
  const text = startEl.textContent ?? "";
  const startUtf16 = utf16OffsetWithin(startEl, range.startContainer, range.startOffset);
  const endUtf16 = utf16OffsetWithin(startEl, range.endContainer, range.endOffset);
  if (startUtf16 === endUtf16) {
    return { error: "empty selection" };
  }
  const turn = Number(startEl.dataset.turn);
  const span: Span = {
    turn,
    char_start: utf16ToCodePoint(text, Math.min(startUtf16, endUtf16)),
    char_end: utf16ToCodePoint(text, Math.max(startUtf16, endUtf16)),
  };
  return { span };
}
