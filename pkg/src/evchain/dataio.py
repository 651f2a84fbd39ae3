"""Dataset ingestion, pipeline configuration, and record-file persistence.

Every persisted artifact is a newline-delimited record file whose first line
is a header record {format_version, config_hash}; rows are JSON objects with
sorted keys, so identical content is identical bytes. Unknown fields in rows
are preserved on rewrite. File schemas are documented in docs/formats.md.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Iterable, Optional, Sequence

import yaml

from .core import (
    DistilledSample,
    EvchainError,
    EvidenceChain,
    EvidencePool,
    EvidenceSegment,
    QASample,
    TimeSpan,
    VideoRef,
    validate_sample,
)
from .search import SearchConfig
from .segmenter import (
    HierarchyLevel,
    default_hierarchy,
    hierarchy_from_pairs,
    single_level_hierarchy,
)

FORMAT_VERSION = 1


class UnreadableFile(EvchainError):
    pass


class UnknownFormat(EvchainError):
    pass


class SchemaViolation(EvchainError):
    pass


# ---------------------------------------------------------------------------
# Pipeline configuration
# ---------------------------------------------------------------------------


@dataclass
class ScorerSettings:
    endpoint: str = ""
    model: str = ""
    api_key_env: str = "EVCHAIN_API_KEY"
    timeout_s: float = 60.0
    max_retries: int = 3
    backoff_base_s: float = 0.5
    max_inflight: int = 8
    sample_count: int = 5

    def api_key(self) -> Optional[str]:
        return os.environ.get(self.api_key_env) or None


@dataclass
class PipelineConfig:
    hierarchy: Optional[list] = None  # list of [L, S] pairs; None = default 5 levels
    search: SearchConfig = field(default_factory=SearchConfig)
    scorer: ScorerSettings = field(default_factory=ScorerSettings)
    emission_modes: tuple = ("QA", "QEA", "QAE")
    hier_off: bool = False
    search_off: bool = False
    multihop_off: bool = False
    filter_on: str = "cot"  # cot | chain
    window_policy: str = "hull"
    min_pool_size: int = 4
    max_attempts: int = 3
    workers: int = 1
    seed: int = 0
    cache_dir: str = ".evchain_cache"
    output_dir: str = "out"

    def __post_init__(self):
        self.emission_modes = tuple(self.emission_modes)
        for mode in self.emission_modes:
            if mode not in ("QA", "QEA", "QAE"):
                raise ValueError(f"unknown emission mode {mode!r}")
        if self.filter_on not in ("cot", "chain"):
            raise ValueError("filter_on must be 'cot' or 'chain'")

    def effective_hierarchy(self) -> list[HierarchyLevel]:
        if self.hier_off:
            return single_level_hierarchy()
        if self.hierarchy is None:
            return default_hierarchy()
        return hierarchy_from_pairs(self.hierarchy)

    def effective_search(self) -> SearchConfig:
        if self.multihop_off:
            return SearchConfig(
                K=self.search.K, W=self.search.W, T=self.search.T,
                max_iter=self.search.max_iter, max_hops=1,
                allow_early_stop=self.search.allow_early_stop,
            )
        return self.search

    def canonical_dict(self) -> dict:
        """Everything that can change output bytes; paths and worker counts
        are excluded on purpose."""
        base_levels = (hierarchy_from_pairs(self.hierarchy) if self.hierarchy is not None
                       else default_hierarchy())
        return {
            "format_version": FORMAT_VERSION,
            "hierarchy": [[lv.L, lv.S] for lv in base_levels],
            "search": asdict(self.search),
            "scorer": {"endpoint": self.scorer.endpoint, "model": self.scorer.model,
                       "sample_count": self.scorer.sample_count},
            "emission_modes": list(self.emission_modes),
            "ablations": {
                "hier_off": self.hier_off,
                "search_off": self.search_off,
                "multihop_off": self.multihop_off,
            },
            "filter_on": self.filter_on,
            "window_policy": self.window_policy,
            "min_pool_size": self.min_pool_size,
            "max_attempts": self.max_attempts,
            "seed": self.seed,
        }

    def config_hash(self) -> str:
        blob = json.dumps(self.canonical_dict(), sort_keys=True)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:12]

    @classmethod
    def from_dict(cls, raw: dict) -> "PipelineConfig":
        raw = dict(raw or {})
        search = SearchConfig(**raw.pop("search", {}))
        scorer = ScorerSettings(**raw.pop("scorer", {}))
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(raw) - known
        if unknown:
            raise UnknownFormat(f"unknown config keys: {sorted(unknown)}")
        return cls(search=search, scorer=scorer, **raw)

    @classmethod
    def from_file(cls, path) -> "PipelineConfig":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                raw = yaml.safe_load(fh) or {}
        except OSError as exc:
            raise UnreadableFile(f"cannot read config {path}: {exc}")
        return cls.from_dict(raw)


# ---------------------------------------------------------------------------
# Record-file layer
# ---------------------------------------------------------------------------


def _dump_row(row: dict) -> str:
    return json.dumps(row, sort_keys=True, ensure_ascii=False, separators=(", ", ": "))


def write_records(path, rows: Iterable[dict], config_hash: str = "") -> int:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        header = {"format_version": FORMAT_VERSION, "config_hash": config_hash}
        fh.write(_dump_row(header) + "\n")
        for row in rows:
            fh.write(_dump_row(row) + "\n")
            count += 1
    return count


def read_records(path) -> tuple[dict, list[dict]]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    except OSError as exc:
        raise UnreadableFile(f"cannot read {path}: {exc}")
    if not lines:
        return {"format_version": FORMAT_VERSION, "config_hash": ""}, []
    try:
        header = json.loads(lines[0])
    except ValueError as exc:
        raise SchemaViolation(f"{path}:1: header is not JSON: {exc}")
    if "format_version" not in header:
        raise SchemaViolation(f"{path}:1: header missing format_version")
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        try:
            rows.append(json.loads(line))
        except ValueError as exc:
            raise SchemaViolation(f"{path}:{lineno}: invalid JSON: {exc}")
    return header, rows


def read_loose_records(path) -> list[dict]:
    """Read externally-produced JSONL that may or may not start with a
    header record."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    except OSError as exc:
        raise UnreadableFile(f"cannot read {path}: {exc}")
    rows = []
    for lineno, line in enumerate(lines, start=1):
        try:
            row = json.loads(line)
        except ValueError as exc:
            raise SchemaViolation(f"{path}:{lineno}: invalid JSON: {exc}")
        if lineno == 1 and isinstance(row, dict) and "format_version" in row:
            continue
        rows.append(row)
    return rows


# ---------------------------------------------------------------------------
# QA dataset ingestion
# ---------------------------------------------------------------------------


@dataclass
class LoadResult:
    samples: list[QASample]
    rejects: list[dict]


def _sample_from_fields(row: dict) -> QASample:
    gt_window = None
    gt_start, gt_end = row.get("gt_start"), row.get("gt_end")
    if gt_start is not None and gt_end is not None and str(gt_start) != "" and str(gt_end) != "":
        gt_window = TimeSpan(float(gt_start), float(gt_end))
    return QASample(
        sample_id=str(row["sample_id"]),
        video=VideoRef(
            id=str(row["video_id"]),
            duration_s=float(row["duration_s"]),
            uri=str(row.get("uri", "") or ""),
        ),
        question=str(row["question"]),
        options=tuple(row["options"]),
        answer_idx=int(row["answer_idx"]),
        gt_window=gt_window,
    )


def _rows_from_jsonl(path) -> list[tuple[int, dict]]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
            except ValueError:
                out.append((lineno, {"_parse_error": f"line {lineno} is not valid JSON"}))
                continue
            if "format_version" in row and "sample_id" not in row:
                continue  # header record
            out.append((lineno, row))
    return out


_OPTION_COLUMNS = ("a0", "a1", "a2", "a3", "a4")


def _rows_from_csv(path) -> list[tuple[int, dict]]:
    out = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        for lineno, raw in enumerate(reader, start=2):
            row = dict(raw)
            cells = [(row.pop(c, None) or "").strip() for c in _OPTION_COLUMNS]
            while cells and cells[-1] == "":
                cells.pop()  # trailing blanks mean fewer options ...
            row["options"] = cells  # ... interior blanks stay and fail validation
            try:
                row["answer_idx"] = int(row.get("answer_idx", ""))
            except (TypeError, ValueError):
                row["answer_idx"] = row.get("answer_idx")
            out.append((lineno, row))
    return out


def load_qa_dataset(path, fmt: Optional[str] = None) -> LoadResult:
    """Read QA samples from a record-lines (.jsonl) or tabular (.csv) file.

    Invalid rows land in ``rejects`` (with line numbers and the violations)
    and valid rows pass through; an unreadable file or unknown format is a
    fault.
    """
    path = Path(path)
    if not path.exists():
        raise UnreadableFile(f"no such file: {path}")
    if fmt is None:
        fmt = {".jsonl": "record-lines", ".ndjson": "record-lines", ".csv": "tabular"}.get(
            path.suffix.lower()
        )
    if fmt == "record-lines":
        raw_rows = _rows_from_jsonl(path)
    elif fmt == "tabular":
        raw_rows = _rows_from_csv(path)
    else:
        raise UnknownFormat(f"cannot determine dataset format for {path} (fmt={fmt!r})")

    samples, rejects = [], []
    seen_ids = set()
    for lineno, row in raw_rows:
        if "_parse_error" in row:
            rejects.append({"line": lineno, "violations": [row["_parse_error"]]})
            continue
        problems = validate_sample(row)
        if row.get("sample_id") in seen_ids:
            problems.append(f"duplicate sample_id {row.get('sample_id')!r}")
        if not problems:
            try:
                sample = _sample_from_fields(row)
            except (KeyError, TypeError, ValueError) as exc:
                problems = [str(exc)]
        if problems:
            rejects.append({"line": lineno, "sample_id": row.get("sample_id"),
                            "violations": problems})
            continue
        seen_ids.add(sample.sample_id)
        samples.append(sample)
    return LoadResult(samples=samples, rejects=rejects)


# ---------------------------------------------------------------------------
# Segments / pools / chains / traces
# ---------------------------------------------------------------------------


def segment_rows(sample: QASample, segments: Sequence[EvidenceSegment], refined: bool = False):
    for seg in segments:
        yield {
            "sample_id": sample.sample_id,
            "video_id": sample.video.id,
            "duration_s": sample.video.duration_s,
            "uri": sample.video.uri,
            "seg_id": seg.seg_id,
            "level": seg.level,
            "t_s": seg.span.t_s,
            "t_e": seg.span.t_e,
            "text": seg.text,
            "refined": refined,
        }


def segments_by_sample(rows: Sequence[dict]) -> dict[str, list[EvidenceSegment]]:
    out: dict[str, list[EvidenceSegment]] = {}
    for lineno, row in enumerate(rows, start=2):
        try:
            seg = EvidenceSegment(
                seg_id=row["seg_id"],
                span=TimeSpan(float(row["t_s"]), float(row["t_e"])),
                level=int(row["level"]),
                text=row.get("text", ""),
            )
        except (KeyError, ValueError) as exc:
            raise SchemaViolation(f"segment row {lineno}: {exc}")
        out.setdefault(row["sample_id"], []).append(seg)
    return out


def pool_from_rows(sample_id: str, rows: Sequence[EvidenceSegment], refined: bool) -> EvidencePool:
    return EvidencePool(sample_id=sample_id, segments=tuple(rows), refined=refined)


def chain_row(sample: QASample, chain: EvidenceChain) -> dict:
    return {
        "sample_id": sample.sample_id,
        "score": chain.score,
        "frozen": chain.frozen,
        "steps": [
            {"seg_id": s.seg_id, "level": s.level, "t_s": s.span.t_s,
             "t_e": s.span.t_e, "text": s.text}
            for s in chain.steps
        ],
    }


def chain_from_row(row: dict) -> EvidenceChain:
    try:
        steps = tuple(
            EvidenceSegment(
                seg_id=s["seg_id"],
                span=TimeSpan(float(s["t_s"]), float(s["t_e"])),
                level=int(s["level"]),
                text=s.get("text", ""),
            )
            for s in row["steps"]
        )
        return EvidenceChain(steps, score=float(row["score"]), frozen=bool(row.get("frozen", True)))
    except (KeyError, ValueError, TypeError) as exc:
        raise SchemaViolation(f"chain row for {row.get('sample_id')!r}: {exc}")


# ---------------------------------------------------------------------------
# Distilled records
# ---------------------------------------------------------------------------

_DISTILLED_REQUIRED = (
    "sample_id", "video_id", "duration_s", "question", "options",
    "answer_idx", "target_mode", "evidence_steps", "cot_text",
)


def distilled_row(record: DistilledSample) -> dict:
    return {
        "sample_id": record.sample_id,
        "video_id": record.video_id,
        "duration_s": record.duration_s,
        "question": record.question,
        "options": list(record.options),
        "answer_idx": record.answer_idx,
        "target_mode": record.target_mode,
        "evidence_steps": [
            {"t_s": s.span.t_s, "t_e": s.span.t_e, "level": s.level, "text": s.text}
            for s in record.chain.steps
        ],
        "cot_text": record.cot_text,
    }


def validate_distilled_row(row: dict, where: str) -> None:
    for key in _DISTILLED_REQUIRED:
        if key not in row:
            raise SchemaViolation(f"{where}: missing field {key!r}")
    if row["target_mode"] not in ("QA", "QEA", "QAE"):
        raise SchemaViolation(f"{where}: unknown target_mode {row['target_mode']!r}")
    if row["target_mode"] in ("QEA", "QAE") and not str(row["cot_text"]).strip():
        raise SchemaViolation(
            f"{where}: cot_text must be non-empty for target_mode {row['target_mode']}"
        )
    if not isinstance(row["evidence_steps"], list) or not row["evidence_steps"]:
        raise SchemaViolation(f"{where}: evidence_steps must be a non-empty list")


def distilled_from_row(row: dict) -> DistilledSample:
    steps = tuple(
        EvidenceSegment(
            seg_id=f"{row['sample_id']}/step/{i}",
            span=TimeSpan(float(s["t_s"]), float(s["t_e"])),
            level=int(s.get("level", 1)),
            text=s.get("text", ""),
        )
        for i, s in enumerate(row["evidence_steps"])
    )
    return DistilledSample(
        sample_id=row["sample_id"],
        video_id=row["video_id"],
        duration_s=float(row["duration_s"]),
        question=row["question"],
        options=tuple(row["options"]),
        answer_idx=int(row["answer_idx"]),
        chain=EvidenceChain(steps, score=float(row.get("chain_score", 0.0)) or 0.0, frozen=True),
        cot_text=row["cot_text"],
        target_mode=row["target_mode"],
    )


def write_distilled(path, records: Sequence, config_hash: str = "") -> int:
    """Persist distilled records (DistilledSample objects or raw rows from a
    prior read; unknown fields on raw rows survive the rewrite)."""
    rows = []
    for i, rec in enumerate(records):
        row = distilled_row(rec) if isinstance(rec, DistilledSample) else dict(rec)
        validate_distilled_row(row, where=f"record {i}")
        rows.append(row)
    return write_records(path, rows, config_hash)


def read_distilled(path) -> tuple[dict, list[dict]]:
    header, rows = read_records(path)
    for lineno, row in enumerate(rows, start=2):
        if "truncated" in row:
            continue  # marker left by an interrupted run
        validate_distilled_row(row, where=f"{path}:{lineno}")
    return header, rows
