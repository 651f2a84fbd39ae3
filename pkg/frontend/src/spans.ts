/** Client-side mirror of the temporal span grammar, for display only: the
 * UI never rewrites chain content, it only locates citations to highlight.
 *
 * Recognized forms: bracketed `[3.1-7.7seconds]` (unit and inner spaces
 * optional, so `[0.1-0.3]` also matches) and prose `from 5.581 to 16.924
 * seconds`. When a duration is given and every number in the text is <= 1,
 * values are normalized fractions of the duration.
 */

export interface SpanMatch {
  start: number; // character offsets into the source text
  end: number;
  tS: number; // seconds
  tE: number;
}

export type CotPiece =
  | { kind: "text"; text: string }
  | { kind: "span"; text: string; tS: number; tE: number };

const FLOAT = "\\d+(?:\\.\\d+)?";
const BRACKET = new RegExp(
  `\\[\\s*(${FLOAT})\\s*-\\s*(${FLOAT})\\s*(?:seconds)?\\s*\\]`,
  "gi",
);
const PROSE = new RegExp(`from\\s+(${FLOAT})\\s+to\\s+(${FLOAT})\\s+seconds`, "gi");

function rawMatches(text: string): SpanMatch[] {
  const out: SpanMatch[] = [];
  for (const regex of [BRACKET, PROSE]) {
    regex.lastIndex = 0;
    let m: RegExpExecArray | null;
    while ((m = regex.exec(text)) !== null) {
      out.push({
        start: m.index,
        end: m.index + m[0].length,
        tS: parseFloat(m[1]),
        tE: parseFloat(m[2]),
      });
    }
  }
  out.sort((a, b) => a.start - b.start);
  return out;
}

export function parseSpans(text: string, durationS?: number): SpanMatch[] {
  let matches = rawMatches(text);
  const allSmall = matches.length > 0 && matches.every((m) => m.tS <= 1 && m.tE <= 1);
  if (durationS !== undefined && allSmall) {
    matches = matches.map((m) => ({ ...m, tS: m.tS * durationS, tE: m.tE * durationS }));
  }
  return matches.filter((m) => m.tS < m.tE);
}

/** Split reasoning text into plain pieces and clickable span pieces, in
 * order, lossless (concatenating piece texts restores the input). */
export function splitCot(text: string, durationS?: number): CotPiece[] {
  const matches = parseSpans(text, durationS);
  const pieces: CotPiece[] = [];
  let cursor = 0;
  for (const m of matches) {
    if (m.start > cursor) {
      pieces.push({ kind: "text", text: text.slice(cursor, m.start) });
    }
    pieces.push({ kind: "span", text: text.slice(m.start, m.end), tS: m.tS, tE: m.tE });
    cursor = m.end;
  }
  if (cursor < text.length) {
    pieces.push({ kind: "text", text: text.slice(cursor) });
  }
  return pieces;
}

export function formatWindow(tS: number, tE: number): string {
  const fmt = (x: number) => {
    const r = Math.round(x * 1000) / 1000;
    return Number.isInteger(r) ? r.toFixed(1) : String(r);
  };
  return `${fmt(tS)}–${fmt(tE)} s`;
}
