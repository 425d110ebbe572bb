/**
 * Browser selections report UTF-16 code unit offsets; the server counts
 * Unicode code points. These helpers convert between the two so spans mean
 * the same thing on both sides of the wire regardless of astral characters.
 */

/** Number of code points in the UTF-16 prefix text[0..utf16Index). */
export function utf16ToCodePoint(text: string, utf16Index: number): number {
  let points = 0;
  let i = 0;
  while (i < utf16Index && i < text.length) {
    const code = text.charCodeAt(i);
    // high surrogate followed by low surrogate: one code point, two units
    if (code >= 0xd800 && code <= 0xdbff && i + 1 < text.length) {
      const next = text.charCodeAt(i + 1);
      if (next >= 0xdc00 && next <= 0xdfff) {
        i += 2;
        points += 1;
        continue;
      }
    }
    i += 1;
    points += 1;
  }
  return points;
}

/** UTF-16 index of the code point with ordinal cpIndex. */
export function codePointToUtf16(text: string, cpIndex: number): number {
  let points = 0;
  let i = 0;
  while (points < cpIndex && i < text.length) {
    const code = text.charCodeAt(i);
    if (code >= 0xd800 && code <= 0xdbff && i + 1 < text.length) {
      const next = text.charCodeAt(i + 1);
      if (next >= 0xdc00 && next <= 0xdfff) {
        i += 2;
        points += 1;
        continue;
      }
    }
    i += 1;
    points += 1;
  }
  return i;
}

export function codePointLength(text: string): number {
  return utf16ToCodePoint(text, text.length);
}
