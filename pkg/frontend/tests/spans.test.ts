import { describe, expect, it } from "vitest";

import { formatWindow, parseSpans, splitCot } from "../src/spans.js";

describe("parseSpans", () => {
  it("parses the bracketed form", () => {
    const spans = parseSpans("look at [3.1-7.7seconds] closely");
    expect(spans).toHaveLength(1);
    expect(spans[0].tS).toBe(3.1);
    expect(spans[0].tE).toBe(7.7);
  });

  it("parses bare brackets and inner spaces", () => {
    expect(parseSpans("[0.1-0.3] girl waves")[0]).toMatchObject({ tS: 0.1, tE: 0.3 });
    expect(parseSpans("[ 3.1 - 7.7 seconds ]")[0]).toMatchObject({ tS: 3.1, tE: 7.7 });
  });

  it("parses the prose form", () => {
    const spans = parseSpans("from 5.581 to 16.924 seconds we see a dog");
    expect(spans[0]).toMatchObject({ tS: 5.581, tE: 16.924 });
  });

  it("returns an empty list for plain text", () => {
    expect(parseSpans("no citations here")).toEqual([]);
  });

  it("drops degenerate pairs", () => {
    expect(parseSpans("[5.0-5.0seconds] and [9.0-2.0seconds]")).toEqual([]);
  });

  it("scales normalized values only when all values are small", () => {
    const scaled = parseSpans("[0.25-0.5seconds]", 128);
    expect(scaled[0]).toMatchObject({ tS: 32, tE: 64 });
    const mixed = parseSpans("[0.25-0.5seconds] then [40.0-60.0seconds]", 128);
    expect(mixed[0]).toMatchObject({ tS: 0.25, tE: 0.5 });
    expect(mixed[1]).toMatchObject({ tS: 40, tE: 60 });
  });

  it("keeps matches in text order", () => {
    const spans = parseSpans("[8.0-16.0seconds] then from 48.0 to 80.0 seconds");
    expect(spans.map((s) => s.tS)).toEqual([8, 48]);
  });
});

describe("splitCot", () => {
  const text = "Start [2.0-6.0seconds] middle from 8.0 to 9.0 seconds end.";

  it("is lossless", () => {
    const pieces = splitCot(text);
    expect(pieces.map((p) => p.text).join("")).toBe(text);
  });

  it("labels span pieces with their windows", () => {
    const pieces = splitCot(text);
    const spans = pieces.filter((p) => p.kind === "span");
    expect(spans).toHaveLength(2);
    expect(spans[0]).toMatchObject({ tS: 2, tE: 6 });
    expect(spans[1]).toMatchObject({ tS: 8, tE: 9 });
  });

  it("uses the scaled times for normalized citations", () => {
    const pieces = splitCot("clue at [0.5-0.75seconds]", 100);
    const span = pieces.find((p) => p.kind === "span");
    expect(span).toMatchObject({ tS: 50, tE: 75 });
  });

  it("handles text with no spans", () => {
    expect(splitCot("nothing")).toEqual([{ kind: "text", text: "nothing" }]);
  });
});

describe("formatWindow", () => {
  it("renders compact second values", () => {
    expect(formatWindow(2, 6)).toBe("2.0–6.0 s");
    expect(formatWindow(3.125, 7.5)).toBe("3.125–7.5 s");
  });
});
