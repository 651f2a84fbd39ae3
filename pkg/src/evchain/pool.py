"""Evidence pool construction: caption every segment for one sample.

Caption jobs fan out through the scorer (which carries the cache and the
in-flight cap); failures are retried per job and, if persistent, the segment
is dropped rather than poisoning the whole sample. Captioning never mutates
segment geometry.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .core import EvchainError, EvidencePool, EvidenceSegment, QASample
from .prompts import PURPOSE_CAPTION, render_caption_prompt
from .scorer import Scorer, ScorerError

log = logging.getLogger(__name__)

DEFAULT_MAX_ATTEMPTS = 3
DEFAULT_MIN_POOL_SIZE = 4


class PoolTooSparse(EvchainError):
    pass


@dataclass
class CaptionJob:
    sample_id: str
    seg_id: str
    prompt: str
    status: str = "pending"  # pending | done | failed
    attempts: int = 0
    text: str = ""
    error: Optional[str] = None


@dataclass
class PoolBuildStats:
    captioned: int = 0
    dropped: int = 0
    failures: list = field(default_factory=list)


def clean_caption(text: str) -> str:
    """Trim whitespace and strip an echoed leading ``Evidence:`` tag; no
    other cleanup, the summarizer owns rewriting."""
    out = text.strip()
    if out.lower().startswith("evidence:"):
        out = out[len("evidence:"):].strip()
    return out


def _run_job(job: CaptionJob, scorer: Scorer, media_uri: str, max_attempts: int):
    while job.attempts < max_attempts:
        job.attempts += 1
        try:
            raw = scorer.generate_text(job.prompt, PURPOSE_CAPTION, media_uri=media_uri or None)
        except ScorerError as exc:
            job.error = str(exc)
            continue
        text = clean_caption(raw)
        if text:
            job.status = "done"
            job.text = text
            return
        job.error = "empty caption"
    job.status = "failed"


def build_pool(
    sample: QASample,
    segments: Sequence[EvidenceSegment],
    scorer: Scorer,
    min_pool_size: int = DEFAULT_MIN_POOL_SIZE,
    max_attempts: int = DEFAULT_MAX_ATTEMPTS,
    workers: int = 1,
    stats: Optional[PoolBuildStats] = None,
) -> EvidencePool:
    """Fill every segment's evidence text from the captioner.

    Segments that still fail after ``max_attempts`` are dropped and counted;
    raises PoolTooSparse when fewer than ``min_pool_size`` captions survive.
    Assembly order is the input segment order regardless of completion order.
    """
    jobs = [
        CaptionJob(sample.sample_id, seg.seg_id, render_caption_prompt(sample, seg))
        for seg in segments
    ]
    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [
                pool.submit(_run_job, job, scorer, sample.video.uri, max_attempts)
                for job in jobs
            ]
            for fut in futures:
                fut.result()
    else:
        for job in jobs:
            _run_job(job, scorer, sample.video.uri, max_attempts)

    captioned = []
    for seg, job in zip(segments, jobs):
        if job.status == "done":
            captioned.append(seg.with_text(job.text))
        else:
            log.warning("dropping segment %s after %d attempts: %s",
                        seg.seg_id, job.attempts, job.error)
            if stats is not None:
                stats.dropped += 1
                stats.failures.append({"seg_id": seg.seg_id, "error": job.error})

    if stats is not None:
        stats.captioned += len(captioned)
    # Small inputs (e.g. single-level segmentation) are not "sparse": the
    # threshold only bites when captioning lost segments.
    needed = min(min_pool_size, len(jobs))
    if len(captioned) < needed:
        raise PoolTooSparse(
            f"sample {sample.sample_id}: only {len(captioned)} of {len(jobs)} segments "
            f"captioned (need >= {needed})"
        )
    return EvidencePool(sample_id=sample.sample_id, segments=tuple(captioned), refined=False)
