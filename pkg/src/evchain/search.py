"""Evidence refinement and chain search.

The beam search semantics, pinned for determinism:

* the beam starts from the top-W single segments by answer likelihood;
* each iteration, every non-frozen chain scores all single-segment
  extensions and keeps the best one only if it beats both the threshold T
  and the chain's own current score (so per-chain scores are monotone);
* chains with no accepted extension freeze; the beam is deduplicated by
  step set and re-truncated to the top W;
* the loop stops when every chain is frozen, the iteration cap is reached,
  or (optionally) any chain already exceeds T.

Ties anywhere resolve by (score desc, fewer steps, earliest start, seg_id),
which makes traces byte-reproducible. A brute-force enumerator over all
small subsets serves as the search's independent oracle, and two
direct-generation baselines bypass the pool entirely.
"""

from __future__ import annotations

import difflib
import json
import re
from dataclasses import dataclass, field
from itertools import combinations
from typing import Optional, Sequence

from .core import (
    EvchainError,
    EvidenceChain,
    EvidencePool,
    EvidenceSegment,
    QASample,
    TimeSpan,
    chain_sort_key,
    make_chain,
)
from . import distill, prompts
from .scorer import Scorer, ScorerError, ScorerRequest


class EmptyPool(EvchainError):
    pass


class PoolTooLarge(EvchainError):
    pass


class UnparseableEvidence(EvchainError):
    pass


@dataclass(frozen=True)
class SearchConfig:
    """Knobs for refinement and beam search. The refined pool holds K
    candidates and the beam keeps W = K/2 of them by default."""

    K: int = 8
    W: int = 4
    T: float = 0.7
    max_iter: int = 3
    max_hops: int = 4
    allow_early_stop: bool = False

    def __post_init__(self):
        if self.W < 1:
            raise ValueError("W must be >= 1")
        if not (0.0 <= self.T <= 1.0):
            raise ValueError("T must be in [0, 1]")
        if self.W > self.K:
            raise ValueError("W must not exceed K")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.max_hops < 1:
            raise ValueError("max_hops must be >= 1")


def score_segments(
    sample: QASample, segments: Sequence[EvidenceSegment], scorer: Scorer, purpose: str
) -> float:
    """P(correct answer | question, these segments)."""
    context = prompts.scoring_context(segments, sample.video.duration_s)
    dist = scorer.score_options(
        ScorerRequest(sample.question, sample.options, context, purpose)
    )
    return dist.probs[sample.answer_idx]


# ---------------------------------------------------------------------------
# Refinement: full pool E -> top-K candidate pool
# ---------------------------------------------------------------------------


def _extract_json(text: str) -> Optional[dict]:
    for candidate in (text, text[text.find("{"): text.rfind("}") + 1]):
        if not candidate:
            continue
        try:
            obj = json.loads(candidate)
        except (ValueError, TypeError):
            continue
        if isinstance(obj, dict):
            return obj
    return None


def _match_back(items: list[dict], pool: EvidencePool, duration_s: float) -> list[EvidenceSegment]:
    """Map narrated {start_time, end_time, evidence} items back to pool
    segments: best span overlap wins when IoU >= 0.5, text similarity breaks
    ties and rescues items with no overlapping segment."""
    norm_spans = {
        seg.seg_id: seg.span.normalized(duration_s) for seg in pool.segments
    }
    values = [v for it in items for v in (it["start_time"], it["end_time"])]
    normalize = bool(values) and all(v <= 1.0 for v in values)

    matched: list[EvidenceSegment] = []
    seen: set[str] = set()
    for item in items:
        lo, hi = float(item["start_time"]), float(item["end_time"])
        if not normalize:
            lo, hi = lo / duration_s, hi / duration_s
        if hi <= lo:
            continue
        text = str(item.get("evidence", ""))

        def overlap(seg: EvidenceSegment) -> float:
            a, b = norm_spans[seg.seg_id]
            inter = max(0.0, min(b, hi) - max(a, lo))
            union = (b - a) + (hi - lo) - inter
            return inter / union if union > 0 else 0.0

        def similarity(seg: EvidenceSegment) -> float:
            return difflib.SequenceMatcher(None, seg.text, text).ratio()

        best = max(
            pool.segments,
            key=lambda seg: (round(overlap(seg), 9), round(similarity(seg), 9), seg.sort_key()),
        )
        if overlap(best) < 0.5:
            best = max(pool.segments, key=lambda seg: (round(similarity(seg), 9), seg.sort_key()))
            if similarity(best) < 0.3:
                continue
        if best.seg_id not in seen:
            seen.add(best.seg_id)
            matched.append(best)
    return matched


def refine_pool(
    pool: EvidencePool,
    sample: QASample,
    scorer: Scorer,
    k: int = 8,
    max_attempts: int = 3,
) -> EvidencePool:
    """Narrow the full pool to at most K segments.

    Primary path: ask the narrator for a step-by-step evidence list over the
    pool transcript and map each returned item back to its pool segment.
    Fallback (persistently malformed output): rank segments by their
    single-segment answer likelihood and keep the top K.
    """
    if pool.refined:
        raise ValueError("pool is already refined")
    if len(pool) == 0:
        raise EmptyPool(f"sample {sample.sample_id}: empty pool")

    base_prompt = prompts.render_refine_prompt(sample, pool, k)
    for attempt in range(max_attempts):
        prompt = base_prompt if attempt == 0 else f"{base_prompt}\nAttempt {attempt + 1}."
        try:
            reply = scorer.generate_text(prompt, prompts.PURPOSE_REFINE)
        except ScorerError:
            continue
        obj = _extract_json(reply)
        if obj is None:
            continue
        items = obj.get("evidence_chain")
        if not isinstance(items, list):
            continue
        cleaned = [
            it for it in items
            if isinstance(it, dict)
            and isinstance(it.get("start_time"), (int, float))
            and isinstance(it.get("end_time"), (int, float))
        ]
        matched = _match_back(cleaned, pool, sample.video.duration_s)
        if matched:
            return EvidencePool(pool.sample_id, tuple(matched[:k]), refined=True)

    # Fallback: singleton-likelihood ranking.
    ranked = sorted(
        pool.segments,
        key=lambda seg: (
            -score_segments(sample, [seg], scorer, prompts.PURPOSE_CHAIN_SCORING),
            seg.sort_key(),
        ),
    )
    return EvidencePool(pool.sample_id, tuple(ranked[:k]), refined=True)


# ---------------------------------------------------------------------------
# Beam search over evidence chains
# ---------------------------------------------------------------------------


@dataclass
class _Beam:
    steps: tuple[EvidenceSegment, ...]
    score: float
    frozen: bool = False
    history: tuple = ()  # accepted scores, oldest first

    def __post_init__(self):
        if not self.history:
            self.history = (self.score,)

    def chain(self, max_hops: int) -> EvidenceChain:
        return make_chain(self.steps, score=self.score, frozen=self.frozen, max_hops=max_hops)

    def key(self):
        return chain_sort_key(self.chain(max_hops=len(self.steps)))

    def step_set(self) -> frozenset:
        return frozenset(s.seg_id for s in self.steps)


@dataclass
class SearchTrace:
    """Every scored candidate, for audit and oracle tests.

    ``records`` is the persisted trace; ``beam_sizes`` and ``histories``
    (per-chain accepted-score sequences) exist for invariant checks only and
    are not serialized.
    """

    records: list = field(default_factory=list)
    beam_sizes: list = field(default_factory=list)
    histories: list = field(default_factory=list)

    def add(self, iteration: int, steps: Sequence[EvidenceSegment], score: float, accepted: bool):
        self.records.append(
            {
                "iteration": iteration,
                "chain": [s.seg_id for s in sorted(steps, key=lambda x: x.sort_key())],
                "score": score,
                "accepted": accepted,
            }
        )

    def to_json(self) -> str:
        return "\n".join(json.dumps(rec, sort_keys=True) for rec in self.records)


def _truncate(beams: list[_Beam], width: int) -> list[_Beam]:
    beams = sorted(beams, key=lambda b: b.key())
    out, seen = [], set()
    for b in beams:
        ss = b.step_set()
        if ss in seen:
            continue
        seen.add(ss)
        out.append(b)
        if len(out) == width:
            break
    return out


def beam_search(
    refined: EvidencePool,
    sample: QASample,
    scorer: Scorer,
    cfg: SearchConfig,
) -> tuple[EvidenceChain, SearchTrace]:
    """Find the highest-likelihood evidence chain in the refined pool."""
    if len(refined) == 0:
        raise EmptyPool(f"sample {sample.sample_id}: cannot search an empty pool")
    trace = SearchTrace()
    segments = sorted(refined.segments, key=lambda s: s.sort_key())

    scored = []
    for seg in segments:
        s = score_segments(sample, [seg], scorer, prompts.PURPOSE_CHAIN_SCORING)
        scored.append(_Beam((seg,), s))
    scored.sort(key=lambda b: b.key())
    beam = scored[: cfg.W]
    kept = {b.step_set() for b in beam}
    for b in scored:
        trace.add(0, b.steps, b.score, b.step_set() in kept)
    trace.beam_sizes.append(len(beam))

    for iteration in range(1, cfg.max_iter + 1):
        if all(b.frozen for b in beam):
            break
        if cfg.allow_early_stop and any(b.score > cfg.T for b in beam):
            break
        next_beam = []
        for b in beam:
            if b.frozen or len(b.steps) >= cfg.max_hops:
                b.frozen = True
                next_beam.append(b)
                continue
            in_chain = b.step_set()
            candidates = []
            for seg in segments:
                if seg.seg_id in in_chain:
                    continue
                steps = tuple(sorted(b.steps + (seg,), key=lambda s: s.sort_key()))
                score = score_segments(sample, steps, scorer, prompts.PURPOSE_CHAIN_SCORING)
                candidates.append((_Beam(steps, score, history=b.history + (score,)), seg))
            if not candidates:
                b.frozen = True
                next_beam.append(b)
                continue
            best, best_seg = min(
                candidates, key=lambda cs: (-cs[0].score, cs[1].sort_key())
            )
            accepted = best.score > cfg.T and best.score > b.score
            for cand, _seg in candidates:
                trace.add(iteration, cand.steps, cand.score, accepted and cand is best)
            if accepted:
                next_beam.append(best)
            else:
                b.frozen = True
                next_beam.append(b)
        beam = _truncate(next_beam, cfg.W)
        trace.beam_sizes.append(len(beam))

    trace.histories = [list(b.history) for b in beam]
    best = min(beam, key=lambda b: b.key())
    return best.chain(max_hops=cfg.max_hops), trace


def brute_force_best_chain(
    refined: EvidencePool,
    sample: QASample,
    scorer: Scorer,
    max_len: int,
    pool_cap: int = 12,
) -> EvidenceChain:
    """Exhaustive oracle: score every subset of size 1..max_len and return
    the argmax under the canonical tie-break. Guarded against blowup."""
    if len(refined) == 0:
        raise EmptyPool(f"sample {sample.sample_id}: cannot search an empty pool")
    if len(refined) > pool_cap:
        raise PoolTooLarge(f"{len(refined)} segments exceeds brute-force cap {pool_cap}")
    segments = sorted(refined.segments, key=lambda s: s.sort_key())
    best: Optional[EvidenceChain] = None
    for size in range(1, min(max_len, len(segments)) + 1):
        for combo in combinations(segments, size):
            score = score_segments(sample, combo, scorer, prompts.PURPOSE_CHAIN_SCORING)
            chain = make_chain(combo, score=score, frozen=True, max_hops=size)
            if best is None or chain_sort_key(chain) < chain_sort_key(best):
                best = chain
    return best


def pool_as_chain(refined: EvidencePool, sample: QASample, scorer: Scorer) -> EvidenceChain:
    """Skip the search and use the whole refined pool as the chain (the
    no-search pipeline variant)."""
    if len(refined) == 0:
        raise EmptyPool(f"sample {sample.sample_id}: empty refined pool")
    score = score_segments(sample, refined.segments, scorer, prompts.PURPOSE_CHAIN_SCORING)
    return make_chain(refined.segments, score=score, frozen=True, max_hops=len(refined))


# ---------------------------------------------------------------------------
# Direct-generation baselines
# ---------------------------------------------------------------------------

_BRACKET_SPLIT = re.compile(r"(\[\s*\d+(?:\.\d+)?\s*-\s*\d+(?:\.\d+)?\s*(?:seconds)?\s*\])")


def _chain_from_reply(reply: str, sample: QASample, tag: str) -> list[EvidenceSegment]:
    """Turn ``[a-b] description ...`` reply text into evidence segments.

    Follows the span grammar's normalization rule: when every bracketed
    value is <= 1.0 the values are fractions of the video duration.
    """
    duration = sample.video.duration_s
    parts = _BRACKET_SPLIT.split(reply)
    pairs: list[tuple[float, float, str]] = []
    for i, part in enumerate(parts):
        if not _BRACKET_SPLIT.fullmatch(part):
            continue
        m = re.match(r"\[\s*(\d+(?:\.\d+)?)\s*-\s*(\d+(?:\.\d+)?)", part)
        lo, hi = float(m.group(1)), float(m.group(2))
        if lo >= hi:
            continue
        description = parts[i + 1].strip() if i + 1 < len(parts) else ""
        pairs.append((lo, hi, description))
    if not pairs:
        raise UnparseableEvidence(f"no temporal spans in reply: {reply[:200]!r}")
    normalize = all(v <= 1.0 for lo, hi, _ in pairs for v in (lo, hi))
    segments = []
    for idx, (lo, hi, description) in enumerate(pairs):
        if normalize:
            lo, hi = lo * duration, hi * duration
        segments.append(
            EvidenceSegment(
                seg_id=f"{sample.sample_id}/{tag}/{idx}",
                span=_clamp_span(TimeSpan(lo, hi), duration),
                level=1,
                text=description.strip(" .") or "(no description)",
            )
        )
    return segments


def _clamp_span(span: TimeSpan, duration: float) -> TimeSpan:
    hi = min(span.t_e, duration)
    lo = min(span.t_s, max(hi - 1e-6, 0.0))
    return TimeSpan(lo, hi)


def direct_multi_evidence(sample: QASample, scorer: Scorer) -> EvidenceChain:
    """One-shot baseline: ask for the full evidence sequence directly and
    parse the bracketed spans out of the reply."""
    reply = scorer.generate_text(
        prompts.render_direct_evidence_prompt(sample),
        prompts.PURPOSE_DIRECT,
        media_uri=sample.video.uri or None,
    )
    steps = _chain_from_reply(reply, sample, tag="direct")
    score = score_segments(sample, steps, scorer, prompts.PURPOSE_CHAIN_SCORING)
    return make_chain(steps, score=score, frozen=True, max_hops=len(steps))


@dataclass(frozen=True)
class GuidedSampleResult:
    chain: EvidenceChain
    rounds_used: int
    passed: bool


def gt_guided_sampling(
    sample: QASample,
    scorer: Scorer,
    max_rounds: int = 3,
) -> GuidedSampleResult:
    """Sampling baseline: draw evidence chains until one lets the scorer
    reach the ground-truth answer, up to ``max_rounds``; the last draw comes
    back flagged failed when none does."""
    last_chain = None
    last_round = 0
    for round_no in range(1, max_rounds + 1):
        last_round = round_no
        prompt = prompts.render_gt_guided_prompt(sample, attempt=round_no)
        try:
            reply = scorer.generate_text(
                prompt, prompts.PURPOSE_GT_GUIDED, media_uri=sample.video.uri or None
            )
            steps = _chain_from_reply(reply, sample, tag=f"guided{round_no}")
        except (ScorerError, UnparseableEvidence):
            continue
        score = score_segments(sample, steps, scorer, prompts.PURPOSE_CHAIN_SCORING)
        chain = make_chain(steps, score=score, frozen=True, max_hops=len(steps))
        last_chain = chain
        context = prompts.chain_transcript(chain, sample.video.duration_s)
        verdict = distill.filter_chain(context, sample, scorer)
        if verdict.passed:
            return GuidedSampleResult(chain, round_no, True)
    if last_chain is None:
        raise UnparseableEvidence(
            f"sample {sample.sample_id}: no parseable chain in {max_rounds} rounds"
        )
    return GuidedSampleResult(last_chain, last_round, False)
