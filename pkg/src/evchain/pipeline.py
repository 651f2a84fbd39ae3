"""End-to-end orchestration: wire the stages together for a run.

Kept separate from the CLI so tests can drive full runs in-process. Every
stage is deterministic given (dataset, config, seed), samples are processed
independently (optionally in a bounded worker pool), and outputs are always
assembled in dataset order regardless of completion order.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from . import distill, prompts
from .core import DistilledSample, EvchainError, EvidenceChain, EvidencePool, QASample
from .dataio import PipelineConfig
from .pool import PoolBuildStats, build_pool
from .scorer import CachingScorer, MockScorer, RemoteScorer, ResponseCache, Scorer, Telemetry
from .search import SearchTrace, beam_search, pool_as_chain, refine_pool
from .segmenter import segment_video

log = logging.getLogger(__name__)


def build_scorer(
    cfg: PipelineConfig,
    samples: Sequence[QASample],
    mock: bool,
    telemetry: Optional[Telemetry] = None,
    cache_path=None,
) -> CachingScorer:
    """Assemble the configured scorer stack: mock or remote, behind the
    response cache."""
    telemetry = telemetry or Telemetry()
    if mock:
        base: Scorer = MockScorer.for_samples(samples, cfg.effective_hierarchy(), cfg.seed)
    else:
        if not cfg.scorer.endpoint:
            raise EvchainError("no scorer endpoint configured (or pass --mock-scorer)")
        base = RemoteScorer(
            endpoint=cfg.scorer.endpoint,
            model=cfg.scorer.model,
            api_key=cfg.scorer.api_key(),
            timeout_s=cfg.scorer.timeout_s,
            max_retries=cfg.scorer.max_retries,
            backoff_base_s=cfg.scorer.backoff_base_s,
            max_inflight=cfg.scorer.max_inflight,
            sample_count=cfg.scorer.sample_count,
            telemetry=telemetry,
        )
    if cache_path is None:
        cache_dir = Path(cfg.cache_dir)
        cache_dir.mkdir(parents=True, exist_ok=True)
        cache_path = cache_dir / "responses.jsonl"
    return CachingScorer(base, ResponseCache(cache_path), telemetry)


@dataclass
class SampleOutcome:
    sample: QASample
    status: str = "ok"  # ok | filtered | failed
    error: str = ""
    segments: list = field(default_factory=list)
    pool: Optional[EvidencePool] = None
    refined: Optional[EvidencePool] = None
    chain: Optional[EvidenceChain] = None
    trace: Optional[SearchTrace] = None
    cot_text: str = ""
    predicted_idx: Optional[int] = None
    filter_passed: bool = False
    records: list = field(default_factory=list)
    pool_stats: PoolBuildStats = field(default_factory=PoolBuildStats)


def run_sample(sample: QASample, scorer: Scorer, cfg: PipelineConfig) -> SampleOutcome:
    """Take one sample through segment -> caption -> refine -> search ->
    summarize -> filter -> emit."""
    out = SampleOutcome(sample=sample)
    out.segments = segment_video(sample.video, cfg.effective_hierarchy(),
                                 owner_id=sample.sample_id)
    out.pool = build_pool(
        sample, out.segments, scorer,
        min_pool_size=cfg.min_pool_size, max_attempts=cfg.max_attempts,
        stats=out.pool_stats,
    )
    out.refined = refine_pool(out.pool, sample, scorer,
                              k=cfg.search.K, max_attempts=cfg.max_attempts)
    if cfg.search_off:
        out.chain = pool_as_chain(out.refined, sample, scorer)
        out.trace = SearchTrace()
    else:
        out.chain, out.trace = beam_search(out.refined, sample, scorer, cfg.effective_search())

    out.cot_text, out.predicted_idx = distill.summarize_chain(
        out.chain, sample, scorer, max_attempts=cfg.max_attempts
    )
    if cfg.filter_on == "chain":
        context = prompts.chain_transcript(out.chain, sample.video.duration_s)
    else:
        context = out.cot_text
    verdict = distill.filter_chain(context, sample, scorer)
    out.filter_passed = verdict.passed
    out.records = distill.emit_training_samples(
        sample, out.chain, out.cot_text, cfg.emission_modes, passed_filter=verdict.passed
    )
    if not verdict.passed:
        out.status = "filtered"
    return out


@dataclass
class RunResult:
    outcomes: list[SampleOutcome]
    records: list[DistilledSample]
    load_rejects: list[dict]
    interrupted: bool = False

    def all_rejects(self) -> list[dict]:
        return self.load_rejects + [
            {"sample_id": o.sample.sample_id, "violations": [o.error]}
            for o in self.outcomes
            if o.status == "failed"
        ]

    def report(self) -> dict:
        ok = [o for o in self.outcomes if o.status in ("ok", "filtered")]
        passes = sum(1 for o in ok if o.filter_passed)
        return {
            "samples_in": len(self.outcomes) + len(self.load_rejects),
            "samples_processed": len(ok),
            "samples_failed": sum(1 for o in self.outcomes if o.status == "failed"),
            "load_rejects": len(self.load_rejects),
            "pooled_segments": sum(len(o.pool) for o in ok if o.pool is not None),
            "dropped_captions": sum(o.pool_stats.dropped for o in self.outcomes),
            "refined_segments": sum(len(o.refined) for o in ok if o.refined is not None),
            "chains_found": sum(1 for o in ok if o.chain is not None),
            "filter_passes": passes,
            "filter_pass_rate": round(passes / len(ok), 6) if ok else 0.0,
            "emitted_records": len(self.records),
            "hop_histogram": {str(k): v for k, v in
                              sorted(distill.hop_histogram(self.records).items())},
        }


def run_synthesis(
    samples: Sequence[QASample],
    cfg: PipelineConfig,
    scorer: Scorer,
    keep_going: bool = False,
    rejects: Optional[list] = None,
) -> RunResult:
    """Run every sample through the pipeline; with ``keep_going`` per-sample
    faults become reject records instead of aborting the run."""
    outcomes: list[Optional[SampleOutcome]] = [None] * len(samples)
    interrupted = False

    def work(i: int, sample: QASample):
        try:
            outcomes[i] = run_sample(sample, scorer, cfg)
        except EvchainError as exc:
            if not keep_going:
                raise
            bad = SampleOutcome(sample=sample, status="failed", error=str(exc))
            outcomes[i] = bad

    try:
        if cfg.workers > 1:
            with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
                futures = [pool.submit(work, i, s) for i, s in enumerate(samples)]
                for fut in futures:
                    fut.result()
        else:
            for i, sample in enumerate(samples):
                work(i, sample)
    except KeyboardInterrupt:
        interrupted = True
        log.warning("interrupted; flushing partial outputs")

    done = [o for o in outcomes if o is not None]
    records = [rec for o in done for rec in o.records]
    return RunResult(outcomes=done, records=records, load_rejects=list(rejects or []),
                     interrupted=interrupted)
