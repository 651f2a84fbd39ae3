/** Client-side session state: the queue of chains to review and the draft
 * score for the current one. Pure logic, no DOM. */

import { ASPECTS, type Aspect, type RubricValue, type ScoreSubmission } from "./types.js";

export class ReviewSession {
  readonly annotatorId: string;
  private queue: string[];
  private cursor = 0;
  private draft = new Map<Aspect, RubricValue>();
  comment = "";

  constructor(annotatorId: string, sampleIds: string[]) {
    this.annotatorId = annotatorId;
    this.queue = [...sampleIds];
  }

  current(): string | null {
    return this.cursor < this.queue.length ? this.queue[this.cursor] : null;
  }

  position(): { done: number; total: number } {
    return { done: this.cursor, total: this.queue.length };
  }

  setScore(aspect: Aspect, value: RubricValue): void {
    this.draft.set(aspect, value);
  }

  getScore(aspect: Aspect): RubricValue | undefined {
    return this.draft.get(aspect);
  }

  /** Submission stays disabled until every aspect has a value. */
  isComplete(): boolean {
    return ASPECTS.every((a) => this.draft.has(a));
  }

  missingAspects(): Aspect[] {
    return ASPECTS.filter((a) => !this.draft.has(a));
  }

  submission(): ScoreSubmission {
    const sampleId = this.current();
    if (sampleId === null || !this.isComplete()) {
      throw new Error("draft is not submittable");
    }
    const scores = {} as Record<Aspect, RubricValue>;
    for (const aspect of ASPECTS) {
      scores[aspect] = this.draft.get(aspect)!;
    }
    return {
      sample_id: sampleId,
      annotator_id: this.annotatorId,
      scores,
      comment: this.comment,
    };
  }

  /** Move to the next queued chain after a successful submit; the draft
   * never carries over. */
  advance(): string | null {
    this.cursor = Math.min(this.cursor + 1, this.queue.length);
    this.draft.clear();
    this.comment = "";
    return this.current();
  }

  /** A failed submit keeps the draft untouched; nothing to do here, the
   * method exists to make that contract explicit at call sites. */
  keepDraftAfterError(): void {}
}
