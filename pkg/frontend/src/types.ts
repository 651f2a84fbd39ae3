/** Payload shapes of the review-server HTTP API (see docs/formats.md). */

export const ASPECTS = [
  "Temporal",
  "Faithfulness",
  "Logical",
  "Relevance",
  "Completeness",
] as const;

export type Aspect = (typeof ASPECTS)[number];

export type RubricValue = 1 | 2 | 3;

export interface ChainListItem {
  sample_id: string;
  question: string;
  n_steps: number;
}

export interface ChainListPage {
  total: number;
  page: number;
  page_size: number;
  items: ChainListItem[];
}

export interface EvidenceStep {
  t_s: number;
  t_e: number;
  level: number;
  text: string;
}

export interface ChainView {
  sample_id: string;
  video_id: string;
  video_uri: string;
  duration_s: number;
  question: string;
  options: string[];
  answer_idx: number;
  cot_text: string;
  target_mode: string;
  evidence_steps: EvidenceStep[];
  spans: { t_s: number; t_e: number }[];
}

export interface ScoreSubmission {
  sample_id: string;
  annotator_id: string;
  scores: Record<Aspect, RubricValue>;
  comment?: string;
}

export interface AggregateReport {
  n_scores: number;
  per_aspect_mean: Partial<Record<Aspect, number>>;
  mean: number | null;
  percentage: number | null;
}
