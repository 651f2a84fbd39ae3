"""Prompt templates and transcript rendering for every model call.

All renderers are pure string functions: same inputs, same bytes. That is
what makes response caching and golden-file runs possible, so keep any
non-determinism (timestamps, random ids) out of here.
"""

from __future__ import annotations

from typing import Sequence

from .core import EvidenceChain, EvidencePool, EvidenceSegment, QASample, option_letter
from .metrics import format_seconds

# Purpose tags carried on every scorer call; they key the cache and let the
# offline mock dispatch on call site.
PURPOSE_CAPTION = "caption"
PURPOSE_REFINE = "refine"
PURPOSE_SUMMARIZE = "summarize"
PURPOSE_DIRECT = "direct_evidence"
PURPOSE_GT_GUIDED = "gt_guided"
PURPOSE_CHAIN_SCORING = "chain_scoring"
PURPOSE_FILTERING = "filtering"


def _fmt3(x: float) -> str:
    return format_seconds(x, places=3)


def options_block(sample: QASample) -> str:
    return " ".join(f"{option_letter(i)}. {opt}" for i, opt in enumerate(sample.options))


def norm_window(seg: EvidenceSegment, duration_s: float) -> tuple[str, str]:
    """Segment window as normalized fractions, clamped into [0, 1]."""
    ns, ne = seg.span.normalized(duration_s)
    return _fmt3(max(0.0, min(ns, 1.0))), _fmt3(max(0.0, min(ne, 1.0)))


def abs_window(seg: EvidenceSegment, duration_s: float) -> tuple[str, str]:
    """Segment window in seconds, clamped into [0, duration]."""
    lo = max(0.0, min(round(seg.span.t_s, 3), duration_s))
    hi = max(0.0, min(round(seg.span.t_e, 3), duration_s))
    return _fmt3(lo), _fmt3(hi)


def render_caption_prompt(sample: QASample, seg: EvidenceSegment) -> str:
    """Narration request for one segment; the window appears in the prompt so
    every segment gets its own cache entry."""
    lo, hi = abs_window(seg, sample.video.duration_s)
    return (
        f"Video segment from {lo} to {hi} seconds "
        f"(full video duration {_fmt3(sample.video.duration_s)} seconds).\n"
        "Please provide short and concise evidence from this video segment that can help "
        "answer the question. Describe the contents of this segment that are relevant to "
        "the given question, but do not simply answer the question.\n"
        f"Question: {sample.question}\n"
        f"Options: {options_block(sample)}\n"
        "The format should be as follows:\n"
        "Evidence: your_evidence_here"
    )


def pool_transcript(pool: EvidencePool, duration_s: float) -> str:
    """Numbered evidence listing with normalized windows, one line per segment."""
    lines = []
    for i, seg in enumerate(pool.segments):
        lo, hi = norm_window(seg, duration_s)
        lines.append(f"{i}. [{lo}-{hi}seconds] {seg.text}")
    return "\n".join(lines)


def render_refine_prompt(sample: QASample, pool: EvidencePool, k: int) -> str:
    return (
        f'Use the following video transcript to gather a list of evidence to help answer '
        f'the question "{sample.question}". Options: {options_block(sample)}\n'
        "\n"
        "Transcript:\n"
        f"{pool_transcript(pool, sample.video.duration_s)}\n"
        "\n"
        "Provide the evidence in the following json format that will help reach the answer "
        "in a step by step manner.\n"
        "Format:\n"
        "{\n"
        '    "evidence_chain": [\n'
        "        {\n"
        '            "start_time": float,\n'
        '            "end_time": float,\n'
        '            "evidence": str\n'
        "        },\n"
        "        ...\n"
        "    ]\n"
        "}\n"
        "\n"
        f"Limit your evidence chain to at most {k} steps. Respond directly with the json. "
        "Please return the evidence as a valid JSON object with proper formatting. Ensure "
        'all strings are enclosed in double quotes (") and no invalid syntax is used.'
    )


def chain_transcript(chain: EvidenceChain, duration_s: float) -> str:
    """Chain steps with absolute-seconds windows, one ``[t1-t2seconds]`` line
    per step in canonical order."""
    lines = []
    for seg in chain.steps:
        lo, hi = abs_window(seg, duration_s)
        lines.append(f"[{lo}-{hi}seconds] {seg.text}")
    return "\n".join(lines)


def render_summarize_prompt(sample: QASample, chain: EvidenceChain) -> str:
    duration = _fmt3(sample.video.duration_s)
    return (
        "You're the assistant to seek the visual evidence chain from the video to answer "
        f'the question "{sample.question}"\n'
        f"Options: {options_block(sample)}\n"
        "\n"
        "Visual Evidence Observed from Video:\n"
        f"{chain_transcript(chain, sample.video.duration_s)}\n"
        "\n"
        f"The total duration of the video is {duration} seconds. Each evidence is the "
        "narrated question-relevant information within the [t1-t2seconds] interval of "
        "the video.\n"
        "\n"
        "Please utilize both the timestamps of the evidence and the temporal hint in the "
        "question, and also focus on the objects/events in the evidence that strongly "
        "indicate the moment described in the question, and then think step-by-step using "
        "the most relevant evidence to derive your answer.\n"
        "Please rewrite relevant evidence and its temporal span into a chain-of-thought "
        "reasoning based on the video. Please provide your step-by-step reasoning "
        "full_chain_of_thought and keep the [t1-t2seconds] when you describe the visual "
        "evidence. You can merge [t1-t2seconds] and [t3-t4seconds] as [t1-t4seconds] when "
        "they're the same evidence information. Based on your step-by-step reasoning, "
        "select the most appropriate option letter as your final_answer. Please try to "
        "only include the evidence that is relevant and necessary for answering the "
        "question.\n"
        "Format:\n"
        "{\n"
        '    "full_chain_of_thought": str,\n'
        '    "final_answer": str\n'
        "}\n"
        "Respond directly with the JSON."
    )


def render_direct_evidence_prompt(sample: QASample) -> str:
    return (
        f"Question: {sample.question}\n"
        f"Options: {options_block(sample)}\n"
        "Please provide detail sequence of information of each part of the video that "
        "help answering the question. The format should be in the form of: "
        "[start_time1-end_time1] This clip 1 shows that xxx which indicate xxx. "
        "[start_time2-end_time2] This clip 2 shows that xxx which indicate xxx..."
    )


def render_gt_guided_prompt(sample: QASample, attempt: int) -> str:
    # The attempt number is part of the prompt so each sampling round gets a
    # distinct cache key.
    return (
        f"Question: {sample.question}\n"
        f"Options: {options_block(sample)}\n"
        "Please provide your evidence chain in order in the video that help answering "
        "the question.\n"
        f"Attempt {attempt}."
    )


def scoring_context(segments: Sequence[EvidenceSegment], duration_s: float) -> str:
    """Context string for answer-likelihood scoring: one evidence line per
    segment, canonical order, absolute windows."""
    ordered = sorted(segments, key=lambda s: s.sort_key())
    lines = []
    for seg in ordered:
        lo, hi = abs_window(seg, duration_s)
        lines.append(f"[{lo}-{hi}seconds] {seg.text}")
    return "\n".join(lines)


def render_answer_prompt(question: str, options: Sequence[str], context_text: str) -> str:
    """MCQ scoring prompt used by remote scorers to elicit a single-letter
    answer whose token log-probabilities we read."""
    opts = " ".join(f"{option_letter(i)}. {o}" for i, o in enumerate(options))
    parts = []
    if context_text:
        parts.append(f"Evidence:\n{context_text}\n")
    parts.append(f"Question: {question}\nOptions: {opts}\n")
    parts.append("Answer with the single letter of the best option.")
    return "\n".join(parts)
