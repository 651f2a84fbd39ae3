/** DOM wiring for the review app. One chain at a time: watch the video,
 * read the reasoning with its time citations highlighted, score the five
 * aspects, submit, move on. Completable keyboard-only (1/2/3 set the
 * focused aspect, arrows move focus, Enter submits). */

import { ApiError, fetchChain, fetchReport, listChains, submitScore } from "./api.js";
import { RUBRIC, VALUE_LABELS } from "./rubric.js";
import { formatWindow, splitCot } from "./spans.js";
import { ReviewSession } from "./state.js";
import { ASPECTS, type Aspect, type ChainView, type RubricValue } from "./types.js";

const $ = <T extends HTMLElement>(id: string): T => {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el as T;
};

let session: ReviewSession | null = null;
let focusedAspect = 0;
let videoPlayable = true;

function setBanner(text: string, kind: "error" | "info" | "" = ""): void {
  const banner = $("banner");
  banner.textContent = text;
  banner.className = kind;
  banner.hidden = text === "";
}

function letter(i: number): string {
  return "ABCDE"[i] ?? "?";
}

function renderChain(view: ChainView): void {
  $("progress").textContent = progressText();
  $("question").textContent = view.question;
  $("mode-tag").textContent = view.target_mode;

  const options = $("options");
  options.replaceChildren(
    ...view.options.map((opt, i) => {
      const li = document.createElement("li");
      li.textContent = `${letter(i)}. ${opt}`;
      if (i === view.answer_idx) li.classList.add("answer");
      return li;
    }),
  );

  const video = $<HTMLVideoElement>("video");
  videoPlayable = Boolean(view.video_uri);
  video.onerror = () => {
    videoPlayable = false;
    video.hidden = true;
    setBanner("Video cannot be played here; review in text-only mode.", "info");
  };
  if (view.video_uri) {
    video.hidden = false;
    video.src = view.video_uri;
  } else {
    video.hidden = true;
    setBanner("No video URI for this chain; text-only mode.", "info");
  }

  const cot = $("cot");
  cot.replaceChildren(
    ...splitCot(view.cot_text, view.duration_s).map((piece) => {
      if (piece.kind === "text") {
        return document.createTextNode(piece.text);
      }
      const btn = document.createElement("button");
      btn.type = "button";
      btn.className = "span-chip";
      btn.textContent = piece.text;
      btn.title = `seek to ${formatWindow(piece.tS, piece.tE)}`;
      btn.addEventListener("click", () => {
        if (videoPlayable && !video.hidden) {
          video.currentTime = piece.tS;
          void video.play().catch(() => undefined);
        }
      });
      return btn;
    }),
  );

  const steps = $("steps");
  steps.replaceChildren(
    ...view.evidence_steps.map((step) => {
      const li = document.createElement("li");
      li.textContent = `${formatWindow(step.t_s, step.t_e)} (level ${step.level}): ${step.text}`;
      return li;
    }),
  );

  renderRubric();
  updateSubmit();
}

function renderRubric(): void {
  const table = $("rubric");
  table.replaceChildren(...ASPECTS.map((aspect, row) => rubricRow(aspect, row)));
}

function rubricRow(aspect: Aspect, row: number): HTMLElement {
  const tr = document.createElement("tr");
  tr.dataset.aspect = aspect;
  if (row === focusedAspect) tr.classList.add("focused");

  const name = document.createElement("th");
  name.textContent = aspect;
  tr.appendChild(name);

  for (const value of [3, 2, 1] as RubricValue[]) {
    const td = document.createElement("td");
    const btn = document.createElement("button");
    btn.type = "button";
    btn.className = "score-btn";
    btn.textContent = `${value} (${VALUE_LABELS[value]})`;
    btn.title = RUBRIC[aspect][value];
    if (session?.getScore(aspect) === value) btn.classList.add("selected");
    btn.addEventListener("click", () => {
      focusedAspect = row;
      setScore(aspect, value);
    });
    td.appendChild(btn);
    tr.appendChild(td);
  }

  const help = document.createElement("td");
  help.className = "help";
  const chosen = session?.getScore(aspect);
  help.textContent = chosen ? RUBRIC[aspect][chosen] : "press 1, 2 or 3";
  tr.appendChild(help);
  return tr;
}

function setScore(aspect: Aspect, value: RubricValue): void {
  session?.setScore(aspect, value);
  renderRubric();
  updateSubmit();
}

function updateSubmit(): void {
  const btn = $<HTMLButtonElement>("submit");
  const complete = session?.isComplete() ?? false;
  btn.disabled = !complete;
  btn.textContent = complete
    ? "Submit score (Enter)"
    : `Submit score (missing: ${session?.missingAspects().join(", ") ?? ""})`;
}

function progressText(): string {
  const pos = session?.position();
  return pos ? `chain ${pos.done + 1} of ${pos.total}` : "";
}

async function loadCurrent(): Promise<void> {
  const sampleId = session?.current();
  if (!session || sampleId == null) {
    await renderDone();
    return;
  }
  setBanner("");
  try {
    renderChain(await fetchChain(sampleId));
  } catch (err) {
    setBanner(err instanceof Error ? err.message : String(err), "error");
  }
}

async function renderDone(): Promise<void> {
  $("review-panel").hidden = true;
  $("done-panel").hidden = false;
  try {
    const report = await fetchReport();
    $("done-summary").textContent =
      report.percentage === null
        ? "No scores recorded."
        : `${report.n_scores} scores recorded; overall quality ${report.percentage}%.`;
  } catch {
    $("done-summary").textContent = "All chains reviewed.";
  }
}

async function onSubmit(): Promise<void> {
  if (!session || !session.isComplete()) return;
  try {
    await submitScore(session.submission());
  } catch (err) {
    // Keep the draft; show the server's diagnostic verbatim.
    session.keepDraftAfterError();
    if (err instanceof ApiError) {
      setBanner(`Submit failed. HTTP ${err.status}: ${err.body}`, "error");
    } else {
      setBanner(`Submit failed: ${String(err)}. Draft preserved; retry.`, "error");
    }
    return;
  }
  session.advance();
  await loadCurrent();
}

function onKeydown(event: KeyboardEvent): void {
  if (!session || (event.target instanceof HTMLElement && event.target.tagName === "INPUT")) {
    return;
  }
  if (event.key === "1" || event.key === "2" || event.key === "3") {
    setScore(ASPECTS[focusedAspect], Number(event.key) as RubricValue);
  } else if (event.key === "ArrowDown" || event.key === "j") {
    focusedAspect = (focusedAspect + 1) % ASPECTS.length;
    renderRubric();
  } else if (event.key === "ArrowUp" || event.key === "k") {
    focusedAspect = (focusedAspect + ASPECTS.length - 1) % ASPECTS.length;
    renderRubric();
  } else if (event.key === "Enter") {
    void onSubmit();
  } else {
    return;
  }
  event.preventDefault();
}

async function start(): Promise<void> {
  const input = $<HTMLInputElement>("annotator");
  const annotator = input.value.trim();
  if (!annotator) {
    setBanner("Enter an annotator id to begin.", "error");
    input.focus();
    return;
  }
  localStorage.setItem("annotator_id", annotator);
  try {
    const page = await listChains();
    session = new ReviewSession(
      annotator,
      page.items.map((item) => item.sample_id),
    );
  } catch (err) {
    setBanner(err instanceof Error ? err.message : String(err), "error");
    return;
  }
  $("start-panel").hidden = true;
  $("review-panel").hidden = false;
  await loadCurrent();
}

export function init(): void {
  const stored = localStorage.getItem("annotator_id");
  if (stored) $<HTMLInputElement>("annotator").value = stored;
  $("start").addEventListener("click", () => void start());
  $<HTMLInputElement>("annotator").addEventListener("keydown", (e) => {
    if (e.key === "Enter") void start();
  });
  $("submit").addEventListener("click", () => void onSubmit());
  document.addEventListener("keydown", onKeydown);
}

if (typeof document !== "undefined") {
  document.addEventListener("DOMContentLoaded", init);
}
