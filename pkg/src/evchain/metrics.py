"""Temporal span grammar and grounded-QA metrics.

The span grammar recognizes the two citation forms that occur in generated
evidence text: bracketed ``[3.1-7.7seconds]`` (the "seconds" unit and inner
spaces are optional, so bare ``[0.1-0.3]`` also parses) and prose
``from 5.581 to 16.924 seconds``. When a video duration is supplied and
every number in the text is <= 1.0, values are treated as normalized
fractions of the duration and scaled to seconds.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Optional, Sequence

from .core import EvchainError, QASample, TimeSpan

_FLOAT = r"\d+(?:\.\d+)?"

BRACKET_RE = re.compile(rf"\[\s*({_FLOAT})\s*-\s*({_FLOAT})\s*(?:seconds)?\s*\]", re.IGNORECASE)
PROSE_RE = re.compile(rf"from\s+({_FLOAT})\s+to\s+({_FLOAT})\s+seconds", re.IGNORECASE)


class EmptyChain(EvchainError):
    pass


class UnmatchedSample(EvchainError):
    pass


def _raw_pairs(text: str) -> list[tuple[float, float]]:
    hits = []
    for regex in (BRACKET_RE, PROSE_RE):
        for m in regex.finditer(text):
            hits.append((m.start(), float(m.group(1)), float(m.group(2))))
    hits.sort(key=lambda h: h[0])
    return [(a, b) for _, a, b in hits]


def parse_spans(text: str, duration_s: Optional[float] = None) -> list[TimeSpan]:
    """Extract every temporal citation from text, in text order.

    Degenerate pairs (start >= end) are dropped; unparseable text yields an
    empty list rather than an error.
    """
    pairs = _raw_pairs(text)
    if not pairs:
        return []
    if duration_s is not None and all(v <= 1.0 for pair in pairs for v in pair):
        pairs = [(a * duration_s, b * duration_s) for a, b in pairs]
    return [TimeSpan(a, b) for a, b in pairs if a < b]


def format_seconds(x: float, places: int = 6) -> str:
    """Minimal decimal rendering with at most ``places`` fractional digits
    and at least one (``1.0``, ``0.062``, ``3.1``)."""
    s = f"{x:.{places}f}".rstrip("0")
    if s.endswith("."):
        s += "0"
    return s


def format_span(span: TimeSpan) -> str:
    """Canonical bracketed citation; parse(format(s)) agrees with s to 1e-6 s."""
    return f"[{format_seconds(span.t_s)}-{format_seconds(span.t_e)}seconds]"


def _intersection(a: TimeSpan, b: TimeSpan) -> float:
    return max(0.0, min(a.t_e, b.t_e) - max(a.t_s, b.t_s))


def iop(pred: TimeSpan, gt: TimeSpan) -> float:
    """Intersection over prediction: overlap / predicted length."""
    return _intersection(pred, gt) / pred.length


def iou(pred: TimeSpan, gt: TimeSpan) -> float:
    """Intersection over union of the two intervals."""
    inter = _intersection(pred, gt)
    union = pred.length + gt.length - inter
    return inter / union


WINDOW_POLICIES = ("best_step", "hull", "first")


def chain_to_window(
    spans: Sequence[TimeSpan],
    policy: str = "hull",
    scores: Optional[Sequence[float]] = None,
) -> TimeSpan:
    """Collapse a multi-step chain's spans into the single predicted window.

    ``hull`` -> [min start, max end]; ``first`` -> first span in text order;
    ``best_step`` -> the highest-scored span, falling back to the longest
    when no per-step scores exist.
    """
    if not spans:
        raise EmptyChain("cannot derive a window from zero spans")
    if policy == "hull":
        return TimeSpan(min(s.t_s for s in spans), max(s.t_e for s in spans))
    if policy == "first":
        return spans[0]
    if policy == "best_step":
        if scores is not None and len(scores) == len(spans):
            best = max(range(len(spans)), key=lambda i: (scores[i], -i))
        else:
            best = max(range(len(spans)), key=lambda i: (spans[i].length, -i))
        return spans[best]
    raise ValueError(f"unknown window policy {policy!r}")


@dataclass(frozen=True)
class GroundedPrediction:
    """A model's answer plus (optionally) its predicted evidence window."""

    sample_id: str
    predicted_answer_idx: int
    predicted_window: Optional[TimeSpan] = None
    source: str = ""


@dataclass(frozen=True)
class SampleResult:
    sample_id: str
    correct: bool
    iop: float
    iou: float
    has_window: bool


@dataclass(frozen=True)
class GqaReport:
    acc: float
    iop_at_05: float
    mean_iop: float
    iou_at_05: float
    mean_iou: float
    acc_at_gqa: float
    n_samples: int
    rows: tuple[SampleResult, ...]

    def as_dict(self) -> dict:
        return {
            "n_samples": self.n_samples,
            "Acc": self.acc,
            "IoP@0.5": self.iop_at_05,
            "mIoP": self.mean_iop,
            "IoU@0.5": self.iou_at_05,
            "mIoU": self.mean_iou,
            "Acc@GQA": self.acc_at_gqa,
        }


def evaluate_gqa(
    predictions: Sequence[GroundedPrediction],
    gold: Sequence[QASample],
) -> GqaReport:
    """Score grounded-QA predictions against gold samples with gt windows.

    Metrics are computed over the gold set; a gold sample without a
    prediction, or a prediction without a window, contributes zeros. Every
    prediction must match a gold sample that carries a gt window.
    """
    gold_by_id = {s.sample_id: s for s in gold}
    by_sample: dict[str, GroundedPrediction] = {}
    for pred in predictions:
        g = gold_by_id.get(pred.sample_id)
        if g is None:
            raise UnmatchedSample(f"prediction for unknown sample {pred.sample_id!r}")
        if g.gt_window is None:
            raise UnmatchedSample(f"gold sample {pred.sample_id!r} has no gt window")
        by_sample[pred.sample_id] = pred

    rows = []
    for s in gold:
        pred = by_sample.get(s.sample_id)
        if pred is None:
            rows.append(SampleResult(s.sample_id, False, 0.0, 0.0, False))
            continue
        correct = pred.predicted_answer_idx == s.answer_idx
        if pred.predicted_window is None or s.gt_window is None:
            rows.append(SampleResult(s.sample_id, correct, 0.0, 0.0, False))
        else:
            rows.append(
                SampleResult(
                    s.sample_id,
                    correct,
                    iop(pred.predicted_window, s.gt_window),
                    iou(pred.predicted_window, s.gt_window),
                    True,
                )
            )

    n = len(rows)
    if n == 0:
        return GqaReport(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0, ())
    return GqaReport(
        acc=sum(r.correct for r in rows) / n,
        iop_at_05=sum(r.iop >= 0.5 for r in rows) / n,
        mean_iop=sum(r.iop for r in rows) / n,
        iou_at_05=sum(r.iou >= 0.5 for r in rows) / n,
        mean_iou=sum(r.iou for r in rows) / n,
        acc_at_gqa=sum(r.correct and r.iop >= 0.5 for r in rows) / n,
        n_samples=n,
        rows=tuple(rows),
    )
