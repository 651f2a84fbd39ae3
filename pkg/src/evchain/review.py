"""Human-review service: serve distilled chains, collect rubric scores.

Annotators rate each chain on five aspects (Temporal, Faithfulness, Logical,
Relevance, Completeness) on a 1..3 scale. Scores append to a JSONL store;
resubmission by the same (sample, annotator) replaces the earlier score.
Serving is read-only with respect to the distilled dataset, and the server
passes video URIs through untouched.
"""

from __future__ import annotations

import json
import threading
import time
from pathlib import Path
from typing import Optional

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles

from . import dataio
from .metrics import parse_spans

ASPECTS = ("Temporal", "Faithfulness", "Logical", "Relevance", "Completeness")

RUBRIC = {
    "Temporal": {
        3: "The evidence correctly identifies the time sequence of events.",
        2: "The temporal sequence is somewhat accurate but contains minor errors.",
        1: "The evidence significantly misrepresents the time sequence.",
    },
    "Faithfulness": {
        3: "The evidence is fully consistent with the video content.",
        2: "The evidence is mostly accurate but includes minor inconsistencies.",
        1: "The evidence is misleading or contains major inaccuracies.",
    },
    "Logical": {
        3: "The evidence forms a coherent and logical reasoning chain.",
        2: "The reasoning is partially logical but has gaps or weak links.",
        1: "The reasoning is illogical or lacks coherence.",
    },
    "Relevance": {
        3: "The evidence is directly relevant to the question and frames.",
        2: "The evidence is somewhat relevant but includes unnecessary information.",
        1: "The evidence is irrelevant or off-topic.",
    },
    "Completeness": {
        3: "The evidence includes all critical information needed to answer the question.",
        2: "The evidence captures most key details but omits some minor elements.",
        1: "The evidence is incomplete and misses significant details.",
    },
}


def validate_score(body: dict) -> list[str]:
    """Invariant check for one submission; violations name the failing field."""
    problems = []
    if not body.get("sample_id"):
        problems.append("sample_id must be non-empty")
    if not body.get("annotator_id"):
        problems.append("annotator_id must be non-empty")
    scores = body.get("scores")
    if not isinstance(scores, dict):
        problems.append("scores must be a mapping of aspect -> 1..3")
        return problems
    for aspect in ASPECTS:
        if aspect not in scores:
            problems.append(f"missing aspect {aspect}")
            continue
        value = scores[aspect]
        if not isinstance(value, int) or isinstance(value, bool) or value not in (1, 2, 3):
            problems.append(f"aspect {aspect} must be an integer in 1..3, got {value!r}")
    for extra in set(scores) - set(ASPECTS):
        problems.append(f"unknown aspect {extra}")
    return problems


def aggregate_report(scores: list[dict]) -> dict:
    """Per-aspect means, grand mean, and mean/3*100 as a percentage. Empty
    input aggregates to an empty report, not an error."""
    if not scores:
        return {"n_scores": 0, "per_aspect_mean": {}, "mean": None, "percentage": None}
    per_aspect = {}
    for aspect in ASPECTS:
        values = [s["scores"][aspect] for s in scores]
        per_aspect[aspect] = round(sum(values) / len(values), 4)
    all_values = [s["scores"][a] for s in scores for a in ASPECTS]
    mean = sum(all_values) / len(all_values)
    return {
        "n_scores": len(scores),
        "per_aspect_mean": per_aspect,
        "mean": round(mean, 4),
        "percentage": round(mean / 3 * 100, 2),
    }


class ScoreStore:
    """Append-only JSONL log with latest-wins replay; submissions serialize
    through one lock so concurrent annotators cannot interleave writes."""

    def __init__(self, path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._latest: dict[tuple, dict] = {}
        if self.path.exists():
            with open(self.path, "r", encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if line:
                        self._remember(json.loads(line))

    def _remember(self, record: dict):
        self._latest[(record["sample_id"], record["annotator_id"])] = record

    def submit(self, record: dict) -> dict:
        with self._lock:
            record = dict(record)
            record["timestamp"] = time.time()
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n")
            self._remember(record)
            return record

    def latest(self) -> list[dict]:
        with self._lock:
            return [self._latest[k] for k in sorted(self._latest)]


def _chain_payload(row: dict, uri: str = "") -> dict:
    spans = parse_spans(row["cot_text"], duration_s=float(row["duration_s"]))
    return {
        "sample_id": row["sample_id"],
        "video_id": row["video_id"],
        "video_uri": uri,
        "duration_s": row["duration_s"],
        "question": row["question"],
        "options": row["options"],
        "answer_idx": row["answer_idx"],
        "cot_text": row["cot_text"],
        "target_mode": row["target_mode"],
        "evidence_steps": row["evidence_steps"],
        "spans": [{"t_s": s.t_s, "t_e": s.t_e} for s in spans],
    }


def create_app(
    distilled_path,
    scores_path,
    ui_dir: Optional[str] = None,
    dataset_path: Optional[str] = None,
) -> FastAPI:
    _, rows = dataio.read_distilled(distilled_path)
    chains: dict[str, dict] = {}
    for row in rows:
        if "truncated" in row:
            continue
        chains.setdefault(row["sample_id"], row)  # one view per sample across modes
    order = list(chains)
    store = ScoreStore(scores_path)

    # The distilled schema carries no video locator; join it back from the
    # source dataset when one is supplied.
    uris: dict[str, str] = {}
    if dataset_path:
        for sample in dataio.load_qa_dataset(dataset_path).samples:
            uris[sample.video.id] = sample.video.uri

    app = FastAPI(title="evchain review")

    @app.get("/api/chains")
    def list_chains(page: int = 1, page_size: int = 20):
        page = max(1, page)
        page_size = max(1, min(page_size, 200))
        start = (page - 1) * page_size
        ids = order[start: start + page_size]
        items = [
            {
                "sample_id": sid,
                "question": chains[sid]["question"],
                "n_steps": len(chains[sid]["evidence_steps"]),
            }
            for sid in ids
        ]
        return {"total": len(order), "page": page, "page_size": page_size, "items": items}

    @app.get("/api/chains/{sample_id}")
    def get_chain(sample_id: str):
        row = chains.get(sample_id)
        if row is None:
            return JSONResponse({"error": f"unknown sample {sample_id!r}"}, status_code=404)
        return _chain_payload(row, uri=uris.get(row["video_id"], ""))

    @app.get("/api/rubric")
    def get_rubric():
        return {"aspects": list(ASPECTS),
                "rubric": {a: {str(v): t for v, t in levels.items()}
                           for a, levels in RUBRIC.items()}}

    @app.post("/api/scores")
    async def post_score(request: Request):
        try:
            body = await request.json()
        except Exception:
            return JSONResponse({"error": "body must be JSON"}, status_code=400)
        problems = validate_score(body if isinstance(body, dict) else {})
        if problems:
            return JSONResponse({"error": "; ".join(problems)}, status_code=400)
        if body["sample_id"] not in chains:
            return JSONResponse(
                {"error": f"unknown sample {body['sample_id']!r}"}, status_code=404
            )
        record = {
            "sample_id": body["sample_id"],
            "annotator_id": body["annotator_id"],
            "scores": {a: body["scores"][a] for a in ASPECTS},
            "comment": body.get("comment", ""),
        }
        stored = store.submit(record)
        return JSONResponse(stored, status_code=201)

    @app.get("/api/report")
    def get_report():
        return aggregate_report(store.latest())

    if ui_dir and Path(ui_dir).is_dir():
        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")

    return app
