/** Inline-help text for the five-aspect, three-point scoring rubric.
 * Mirrors the server's /api/rubric payload so the selector renders without
 * an extra round trip. */

import type { Aspect, RubricValue } from "./types.js";

export const RUBRIC: Record<Aspect, Record<RubricValue, string>> = {
  Temporal: {
    3: "The evidence correctly identifies the time sequence of events.",
    2: "The temporal sequence is somewhat accurate but contains minor errors.",
    1: "The evidence significantly misrepresents the time sequence.",
  },
  Faithfulness: {
    3: "The evidence is fully consistent with the video content.",
    2: "The evidence is mostly accurate but includes minor inconsistencies.",
    1: "The evidence is misleading or contains major inaccuracies.",
  },
  Logical: {
    3: "The evidence forms a coherent and logical reasoning chain.",
    2: "The reasoning is partially logical but has gaps or weak links.",
    1: "The reasoning is illogical or lacks coherence.",
  },
  Relevance: {
    3: "The evidence is directly relevant to the question and frames.",
    2: "The evidence is somewhat relevant but includes unnecessary information.",
    1: "The evidence is irrelevant or off-topic.",
  },
  Completeness: {
    3: "The evidence includes all critical information needed to answer the question.",
    2: "The evidence captures most key details but omits some minor elements.",
    1: "The evidence is incomplete and misses significant details.",
  },
};

export const VALUE_LABELS: Record<RubricValue, string> = {
  3: "good",
  2: "average",
  1: "bad",
};
