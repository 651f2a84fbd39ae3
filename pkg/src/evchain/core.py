"""Core domain types shared by every pipeline stage.

All types are immutable after construction and validate their invariants in
``__post_init__``, so an instance that exists is an instance that is valid.
The one exception is the span grammar on chain-of-thought text, which lives
in :mod:`evchain.metrics`; producers of ``DistilledSample`` enforce it there.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

DEFAULT_MAX_HOPS = 4

TARGET_MODES = ("QA", "QEA", "QAE")

PROB_SUM_TOL = 1e-9


class EvchainError(Exception):
    """Base class for pipeline faults."""


@dataclass(frozen=True)
class VideoRef:
    """Opaque reference to a video; the pipeline never decodes pixels."""

    id: str
    duration_s: float
    uri: str = ""

    def __post_init__(self):
        if not self.id:
            raise ValueError("video id must be non-empty")
        if not self.duration_s > 0:
            raise ValueError("duration_s must be > 0")


@dataclass(frozen=True, order=True)
class TimeSpan:
    """Closed interval [t_s, t_e] in seconds within some video."""

    t_s: float
    t_e: float

    def __post_init__(self):
        if not (0 <= self.t_s < self.t_e):
            raise ValueError(f"invalid span: need 0 <= t_s < t_e, got [{self.t_s}, {self.t_e}]")

    @property
    def length(self) -> float:
        return self.t_e - self.t_s

    def within(self, duration_s: float, eps: float = 1e-9) -> bool:
        return self.t_e <= duration_s + eps

    def normalized(self, duration_s: float) -> tuple[float, float]:
        return (self.t_s / duration_s, self.t_e / duration_s)


@dataclass(frozen=True)
class QASample:
    """One multiple-choice question over a video, optionally with a
    ground-truth grounding window for evaluation datasets."""

    sample_id: str
    video: VideoRef
    question: str
    options: tuple[str, ...]
    answer_idx: int
    gt_window: Optional[TimeSpan] = None

    def __post_init__(self):
        object.__setattr__(self, "options", tuple(self.options))
        problems = validate_sample(self)
        if self.gt_window is not None and not self.gt_window.within(self.video.duration_s):
            problems.append("gt_window exceeds video duration")
        if problems:
            raise ValueError(f"invalid sample {self.sample_id!r}: " + "; ".join(problems))

    @property
    def answer_text(self) -> str:
        return self.options[self.answer_idx]


@dataclass(frozen=True)
class EvidenceSegment:
    """One temporally-localized piece of evidence: a span, its granularity
    level, and the narrated text (empty until captioned)."""

    seg_id: str
    span: TimeSpan
    level: int
    text: str = ""

    def __post_init__(self):
        if not self.seg_id:
            raise ValueError("seg_id must be non-empty")
        if self.level < 1:
            raise ValueError("level must be >= 1")

    def with_text(self, text: str) -> "EvidenceSegment":
        return EvidenceSegment(self.seg_id, self.span, self.level, text)

    def sort_key(self) -> tuple:
        return (self.span.t_s, self.span.t_e, self.seg_id)


@dataclass(frozen=True)
class EvidencePool:
    """All candidate evidence for one sample; ``refined`` distinguishes the
    full pool from its narrowed top-K subset."""

    sample_id: str
    segments: tuple[EvidenceSegment, ...]
    refined: bool = False

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))
        ids = [s.seg_id for s in self.segments]
        if len(ids) != len(set(ids)):
            raise ValueError("duplicate seg_id in pool")

    def __len__(self) -> int:
        return len(self.segments)

    def seg_ids(self) -> tuple[str, ...]:
        return tuple(s.seg_id for s in self.segments)


@dataclass(frozen=True)
class EvidenceChain:
    """Ordered evidence steps plus the answer likelihood they achieve.

    Steps are canonicalized to ascending (t_s, t_e, seg_id) order on
    construction; ``frozen`` marks a chain the search will not extend again.
    """

    steps: tuple[EvidenceSegment, ...]
    score: float = 0.0
    frozen: bool = False

    def __post_init__(self):
        steps = tuple(sorted(self.steps, key=lambda s: s.sort_key()))
        object.__setattr__(self, "steps", steps)
        if not steps:
            raise ValueError("chain must have at least one step")
        ids = [s.seg_id for s in steps]
        if len(ids) != len(set(ids)):
            raise ValueError("duplicate seg_id in chain")
        if not (0.0 <= self.score <= 1.0):
            raise ValueError(f"chain score must be in [0,1], got {self.score}")

    def __len__(self) -> int:
        return len(self.steps)

    def seg_ids(self) -> tuple[str, ...]:
        return tuple(s.seg_id for s in self.steps)

    def step_set(self) -> frozenset:
        return frozenset(s.seg_id for s in self.steps)


def make_chain(
    steps: Sequence[EvidenceSegment],
    score: float = 0.0,
    frozen: bool = False,
    max_hops: int = DEFAULT_MAX_HOPS,
) -> EvidenceChain:
    """Construct a chain, enforcing the configured length cap."""
    if len(steps) > max_hops:
        raise ValueError(f"chain of {len(steps)} steps exceeds max_hops={max_hops}")
    return EvidenceChain(tuple(steps), score=score, frozen=frozen)


@dataclass(frozen=True)
class OptionDistribution:
    """Probability vector over a sample's answer options."""

    probs: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "probs", tuple(float(p) for p in self.probs))
        if not self.probs:
            raise ValueError("empty distribution")
        for p in self.probs:
            if not (-PROB_SUM_TOL <= p <= 1 + PROB_SUM_TOL):
                raise ValueError(f"probability {p} out of [0,1]")
        total = sum(self.probs)
        if abs(total - 1.0) > PROB_SUM_TOL:
            raise ValueError(f"probabilities sum to {total}, expected 1")

    def argmax(self) -> int:
        return max(range(len(self.probs)), key=lambda i: (self.probs[i], -i))

    def argmax_unique(self, tol: float = 1e-12) -> Optional[int]:
        """Index of the strictly-largest entry, or None on a tie."""
        best = max(self.probs)
        winners = [i for i, p in enumerate(self.probs) if best - p <= tol]
        return winners[0] if len(winners) == 1 else None


@dataclass(frozen=True)
class DistilledSample:
    """One training record: a QA pair plus its evidence chain and the
    time-citing chain-of-thought, tagged with the emission mode."""

    sample_id: str
    video_id: str
    duration_s: float
    question: str
    options: tuple[str, ...]
    answer_idx: int
    chain: EvidenceChain
    cot_text: str
    target_mode: str

    def __post_init__(self):
        object.__setattr__(self, "options", tuple(self.options))
        if self.target_mode not in TARGET_MODES:
            raise ValueError(f"unknown target_mode {self.target_mode!r}")
        if not (0 <= self.answer_idx < len(self.options)):
            raise ValueError("answer_idx out of range")


def validate_sample(sample) -> list[str]:
    """Collect invariant violations for a QA sample.

    Accepts either a constructed ``QASample`` or a raw mapping with flat
    fields (sample_id, video_id, duration_s, question, options, answer_idx),
    so unvalidated input rows can be checked before construction. Violations
    are data, not faults: the list is empty iff the sample is well-formed.
    """
    problems: list[str] = []
    if isinstance(sample, Mapping):
        sample_id = sample.get("sample_id")
        video_id = sample.get("video_id")
        duration = sample.get("duration_s")
        question = sample.get("question")
        options = sample.get("options") or []
        answer_idx = sample.get("answer_idx")
    else:
        sample_id = sample.sample_id
        video_id = sample.video.id
        duration = sample.video.duration_s
        question = sample.question
        options = sample.options
        answer_idx = sample.answer_idx

    if not sample_id:
        problems.append("sample_id must be non-empty")
    if not video_id:
        problems.append("video id must be non-empty")
    try:
        if duration is None or not float(duration) > 0:
            problems.append("duration_s must be > 0")
    except (TypeError, ValueError):
        problems.append("duration_s must be a positive number")
    if not question or not str(question).strip():
        problems.append("question must be non-empty")

    options = list(options)
    if not (2 <= len(options) <= 5):
        problems.append(f"options length must be 2..5, got {len(options)}")
    if any(not isinstance(o, str) or not o.strip() for o in options):
        problems.append("option strings must be non-empty")
    if len(set(options)) != len(options):
        problems.append("option strings must be pairwise distinct")

    if not isinstance(answer_idx, int) or isinstance(answer_idx, bool):
        problems.append("answer_idx must be an integer")
    elif not (0 <= answer_idx < max(len(options), 1)):
        problems.append("answer_idx out of range")

    return problems


def chain_sort_key(chain: EvidenceChain) -> tuple:
    """Global deterministic ordering: score desc, fewer steps first, then
    earliest start, then seg_id sequence."""
    first = chain.steps[0]
    return (-chain.score, len(chain.steps), first.span.t_s, first.seg_id, chain.seg_ids())


OPTION_LETTERS = "ABCDE"


def option_letter(idx: int) -> str:
    return OPTION_LETTERS[idx]


def match_option(text: str, options: Sequence[str]) -> Optional[int]:
    """Map free-form answer text to an option index.

    Accepts the option letter (A..E, optionally with trailing punctuation),
    exact option text, or a unique case-insensitive prefix. Returns None
    when nothing matches unambiguously.
    """
    if text is None:
        return None
    t = text.strip()
    if not t:
        return None
    bare = t.rstrip(".):").strip()
    if len(bare) == 1 and bare.upper() in OPTION_LETTERS[: len(options)]:
        return OPTION_LETTERS.index(bare.upper())
    low = t.lower()
    for i, opt in enumerate(options):
        if low == opt.strip().lower():
            return i
    prefix_hits = [i for i, opt in enumerate(options) if opt.strip().lower().startswith(low)]
    if len(prefix_hits) == 1:
        return prefix_hits[0]
    return None
