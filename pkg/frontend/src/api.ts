/** Thin fetch wrappers over the review-server endpoints; errors surface the
 * server's status and body verbatim so the UI can show the diagnostic. */

import type { AggregateReport, ChainListPage, ChainView, ScoreSubmission } from "./types.js";

export class ApiError extends Error {
  readonly status: number;
  readonly body: string;

  constructor(status: number, body: string) {
    super(`HTTP ${status}: ${body}`);
    this.status = status;
    this.body = body;
  }
}

async function getJson<T>(url: string): Promise<T> {
  const resp = await fetch(url);
  if (!resp.ok) {
    throw new ApiError(resp.status, await resp.text());
  }
  return (await resp.json()) as T;
}

export async function listChains(pageSize = 200): Promise<ChainListPage> {
  return getJson<ChainListPage>(`/api/chains?page_size=${pageSize}`);
}

export async function fetchChain(sampleId: string): Promise<ChainView> {
  return getJson<ChainView>(`/api/chains/${encodeURIComponent(sampleId)}`);
}

export async function fetchReport(): Promise<AggregateReport> {
  return getJson<AggregateReport>("/api/report");
}

export async function submitScore(body: ScoreSubmission): Promise<void> {
  const resp = await fetch("/api/scores", {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify(body),
  });
  if (!resp.ok) {
    throw new ApiError(resp.status, await resp.text());
  }
}
