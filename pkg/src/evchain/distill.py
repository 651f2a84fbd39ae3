"""Chain-of-thought summarization, answer filtering, and record emission.

A found chain becomes training data in three moves: the narrator rewrites it
into one time-citing reasoning text, the scorer checks that this text alone
is enough to pick the right answer (ties count as failures; ambiguous
evidence must not enter training data), and the survivors are emitted once
per requested target mode.
"""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from .core import (
    DistilledSample,
    EvchainError,
    EvidenceChain,
    OptionDistribution,
    QASample,
    match_option,
    option_letter,
)
from . import prompts
from .metrics import parse_spans
from .scorer import Scorer, ScorerError, ScorerRequest


class UnparseableSummary(EvchainError):
    pass


class SpanlessSummary(EvchainError):
    pass


_FIELD_RES = {
    "full_chain_of_thought": re.compile(
        r'"full_chain_of_thought"\s*:\s*"((?:[^"\\]|\\.)*)"', re.DOTALL
    ),
    "final_answer": re.compile(r'"final_answer"\s*:\s*"((?:[^"\\]|\\.)*)"', re.DOTALL),
}


def _parse_summary_reply(reply: str) -> Optional[tuple[str, str]]:
    for candidate in (reply, reply[reply.find("{"): reply.rfind("}") + 1]):
        if not candidate:
            continue
        try:
            obj = json.loads(candidate)
        except (ValueError, TypeError):
            continue
        if isinstance(obj, dict) and "full_chain_of_thought" in obj and "final_answer" in obj:
            return str(obj["full_chain_of_thought"]), str(obj["final_answer"])
    # Last resort: field-by-field regex for almost-JSON replies.
    cot_m = _FIELD_RES["full_chain_of_thought"].search(reply)
    ans_m = _FIELD_RES["final_answer"].search(reply)
    if cot_m and ans_m:
        try:
            return (
                json.loads(f'"{cot_m.group(1)}"'),
                json.loads(f'"{ans_m.group(1)}"'),
            )
        except ValueError:
            return None
    return None


def summarize_chain(
    chain: EvidenceChain,
    sample: QASample,
    scorer: Scorer,
    max_attempts: int = 3,
) -> tuple[str, int]:
    """Rewrite a chain into chain-of-thought text with inline time citations.

    Returns (cot_text, predicted_answer_idx). Raises UnparseableSummary when
    the narrator never produces the two required fields (or an answer that
    maps to no option), SpanlessSummary when the reasoning cites no interval.
    """
    if not chain.steps or any(not s.text for s in chain.steps):
        raise ValueError("summarize_chain needs a non-empty, captioned chain")
    base_prompt = prompts.render_summarize_prompt(sample, chain)
    parsed = None
    last_reply = ""
    for attempt in range(max_attempts):
        prompt = base_prompt if attempt == 0 else f"{base_prompt}\nAttempt {attempt + 1}."
        try:
            last_reply = scorer.generate_text(prompt, prompts.PURPOSE_SUMMARIZE)
        except ScorerError:
            continue
        parsed = _parse_summary_reply(last_reply)
        if parsed is not None:
            break
    if parsed is None:
        raise UnparseableSummary(
            f"sample {sample.sample_id}: no usable summary after {max_attempts} attempts: "
            f"{last_reply[:200]!r}"
        )
    cot_text, final_answer = parsed
    cot_text = cot_text.strip()
    if not parse_spans(cot_text, duration_s=sample.video.duration_s):
        raise SpanlessSummary(f"sample {sample.sample_id}: summary cites no time span")
    answer_idx = match_option(final_answer, sample.options)
    if answer_idx is None:
        raise UnparseableSummary(
            f"sample {sample.sample_id}: final answer {final_answer!r} matches no option"
        )
    return cot_text, answer_idx


@dataclass(frozen=True)
class FilterVerdict:
    passed: bool
    distribution: OptionDistribution
    predicted_idx: Optional[int]


def filter_chain(context_text: str, sample: QASample, scorer: Scorer) -> FilterVerdict:
    """Keep a chain only if the scorer, reading the context alone, puts its
    unique argmax on the ground-truth option."""
    dist = scorer.score_options(
        ScorerRequest(sample.question, sample.options, context_text, prompts.PURPOSE_FILTERING)
    )
    winner = dist.argmax_unique()
    return FilterVerdict(winner == sample.answer_idx, dist, winner)


def target_text(record: DistilledSample) -> str:
    """Training target for a record per its mode: answer only, reasoning
    then answer, or answer then reasoning."""
    answer = f"{option_letter(record.answer_idx)}. {record.options[record.answer_idx]}"
    if record.target_mode == "QA":
        return answer
    if record.target_mode == "QEA":
        return f"{record.cot_text}\nAnswer: {answer}"
    if record.target_mode == "QAE":
        return f"Answer: {answer}\n{record.cot_text}"
    raise ValueError(f"unknown target_mode {record.target_mode!r}")


def emit_training_samples(
    sample: QASample,
    chain: EvidenceChain,
    cot_text: str,
    modes: Iterable[str],
    passed_filter: bool = True,
    override_filter: bool = False,
) -> list[DistilledSample]:
    """One record per requested mode for a chain that passed the filter
    (or was explicitly forced through for ablation datasets)."""
    if not passed_filter and not override_filter:
        return []
    duration = sample.video.duration_s
    spans = parse_spans(cot_text, duration_s=duration)
    if not spans:
        raise SpanlessSummary(f"sample {sample.sample_id}: cot_text cites no time span")
    for span in spans:
        if not span.within(duration):
            raise ValueError(
                f"sample {sample.sample_id}: cited span [{span.t_s}, {span.t_e}] exceeds "
                f"video duration {duration}"
            )
    records = []
    for mode in sorted(modes):
        records.append(
            DistilledSample(
                sample_id=sample.sample_id,
                video_id=sample.video.id,
                duration_s=duration,
                question=sample.question,
                options=sample.options,
                answer_idx=sample.answer_idx,
                chain=chain,
                cot_text=cot_text,
                target_mode=mode,
            )
        )
    return records


def hop_histogram(records: Sequence[DistilledSample]) -> dict[int, int]:
    """Chain length distribution, one count per sample (emission modes of
    the same sample share one chain and are not double counted)."""
    by_sample: dict[str, int] = {}
    for r in records:
        by_sample[r.sample_id] = len(r.chain)
    return dict(Counter(by_sample.values()))
