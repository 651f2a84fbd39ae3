"""Multi-scale sliding-window segmentation of a video timeline.

Each granularity level is an (L, S) pair of window length and stride, both
expressed as fractions of the video duration. Windows start at 0, S, 2S, ...
for as long as the window still fits inside the video, which gives
floor((1 - L) / S) + 1 windows per level.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

from .core import EvidenceSegment, TimeSpan, VideoRef

# Guard on the "window still fits" test so exact fractions survive float
# representation (15-vs-16 off-by-ones at the 1/8-stride level otherwise).
BOUNDARY_EPS = 1e-9

DEFAULT_LEVELS = ((1 / 16, 1 / 16), (1 / 8, 1 / 16), (1 / 4, 1 / 8), (1 / 2, 1 / 4), (1.0, 1.0))


@dataclass(frozen=True)
class HierarchyLevel:
    """One granularity level: normalized window length L and stride S."""

    level_idx: int
    L: float
    S: float

    def __post_init__(self):
        if self.level_idx < 1:
            raise ValueError("level_idx must be >= 1")
        if not (0 < self.L <= 1):
            raise ValueError(f"L must be in (0, 1], got {self.L}")
        if not (0 < self.S <= 1):
            raise ValueError(f"S must be in (0, 1], got {self.S}")
        if self.S > self.L + BOUNDARY_EPS:
            raise ValueError(f"stride S={self.S} must not exceed window L={self.L}")


def default_hierarchy() -> list[HierarchyLevel]:
    """The standard five levels, finest (1/16-length windows) to coarsest
    (one full-video window)."""
    return [HierarchyLevel(i + 1, L, S) for i, (L, S) in enumerate(DEFAULT_LEVELS)]


def single_level_hierarchy() -> list[HierarchyLevel]:
    """Degenerate hierarchy (L=1, S=1): one full-video segment. Used by the
    flat-segmentation ablation."""
    return [HierarchyLevel(1, 1.0, 1.0)]


def hierarchy_from_pairs(pairs: Sequence[Sequence[float]]) -> list[HierarchyLevel]:
    if not pairs:
        raise ValueError("hierarchy must have at least one level")
    return [HierarchyLevel(i + 1, float(L), float(S)) for i, (L, S) in enumerate(pairs)]


def expected_count(level: HierarchyLevel) -> int:
    """Analytic window count for one level."""
    return int(math.floor((1.0 - level.L) / level.S + BOUNDARY_EPS)) + 1


def segment_video(
    video: VideoRef,
    levels: Sequence[HierarchyLevel],
    owner_id: Optional[str] = None,
) -> list[EvidenceSegment]:
    """Enumerate all windows of every level over the video timeline.

    Segments come back ordered (level asc, start asc) with empty text and
    ids ``<owner>/L<level>/<index>``; ``owner_id`` defaults to the video id
    and is set to the sample id when segmenting on behalf of a QA sample.
    """
    if not levels:
        raise ValueError("levels must be non-empty")
    owner = owner_id or video.id
    duration = video.duration_s
    segments: list[EvidenceSegment] = []
    for level in levels:
        idx = 0
        while True:
            start = idx * level.S
            end = start + level.L
            if end > 1.0 + BOUNDARY_EPS:
                break
            end = min(end, 1.0)
            span = TimeSpan(start * duration, min(end * duration, duration))
            segments.append(
                EvidenceSegment(
                    seg_id=f"{owner}/L{level.level_idx}/{idx}",
                    span=span,
                    level=level.level_idx,
                )
            )
            idx += 1
    return segments


def count_per_level(segments: Sequence[EvidenceSegment]) -> dict[int, int]:
    counts: dict[int, int] = {}
    for seg in segments:
        counts[seg.level] = counts.get(seg.level, 0) + 1
    return counts
