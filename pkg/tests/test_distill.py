import json

import pytest

from evchain.core import EvidencePool, make_chain
from evchain.distill import (
    SpanlessSummary,
    UnparseableSummary,
    emit_training_samples,
    filter_chain,
    hop_histogram,
    summarize_chain,
    target_text,
)
from evchain.metrics import format_span, parse_spans
from evchain.scorer import MockScorer
from evchain.search import SearchConfig, beam_search

from conftest import StubScorer, make_mock, make_sample, make_segments


def _chain(sample, n=2, relevant_all=True):
    segs = make_segments(sample, [(i * 5.0, i * 5.0 + 4.0) for i in range(n)])
    scorer = make_mock(sample, segs, [s.seg_id for s in segs])
    return make_chain(segs, score=1.0, frozen=True), scorer


def test_summarize_canned_reply():
    sample = make_sample(3, sample_id="sm", duration=20.0, question="sm q?")
    chain, scorer = _chain(sample)
    reply = json.dumps({
        "full_chain_of_thought": "The clue appears from [3.1-7.7seconds] in the video.",
        "final_answer": "C",
    })
    scorer.add_canned(sample.question, reply)
    cot, idx = summarize_chain(chain, sample, scorer)
    assert idx == 2
    assert "[3.1-7.7seconds]" in cot


def test_summarize_missing_final_answer():
    sample = make_sample(3, sample_id="sm2", duration=20.0, question="sm2 q?")
    chain, scorer = _chain(sample)
    scorer.add_canned(sample.question,
                      json.dumps({"full_chain_of_thought": "at [1.0-2.0seconds] x"}))
    with pytest.raises(UnparseableSummary):
        summarize_chain(chain, sample, scorer)


def test_summarize_unmappable_answer():
    sample = make_sample(3, sample_id="sm3", duration=20.0, question="sm3 q?")
    chain, scorer = _chain(sample)
    scorer.add_canned(sample.question, json.dumps({
        "full_chain_of_thought": "at [1.0-2.0seconds] x", "final_answer": "Z",
    }))
    with pytest.raises(UnparseableSummary):
        summarize_chain(chain, sample, scorer)


def test_summarize_spanless():
    sample = make_sample(3, sample_id="sm4", duration=20.0, question="sm4 q?")
    chain, scorer = _chain(sample)
    scorer.add_canned(sample.question, json.dumps({
        "full_chain_of_thought": "no time citations at all", "final_answer": "A",
    }))
    with pytest.raises(SpanlessSummary):
        summarize_chain(chain, sample, scorer)


def test_summarize_almost_json_reply():
    # Replies wrapped in prose still parse via the field regex, including
    # escaped characters.
    sample = make_sample(3, sample_id="sm8", duration=20.0, question="sm8 q?")
    chain, scorer = _chain(sample)
    scorer.add_canned(sample.question,
                      'Sure! Here you go: {"full_chain_of_thought": '
                      '"line one\\nsee [1.0-2.0seconds]", "final_answer": "B",}')
    cot, idx = summarize_chain(chain, sample, scorer)
    assert idx == 1
    assert "line one\nsee" in cot


def test_summarize_retries_then_succeeds():
    sample = make_sample(3, sample_id="sm7", duration=20.0, question="sm7 q?")
    chain, scorer = _chain(sample)
    good = json.dumps({
        "full_chain_of_thought": "clue at [1.0-2.0seconds]", "final_answer": "B",
    })
    # Attempt 1 gets garbage; the retry prompt carries an attempt marker the
    # canned table can target.
    scorer.canned = [("Attempt 2", good), (sample.question, "garbage")]
    cot, idx = summarize_chain(chain, sample, scorer, max_attempts=3)
    assert idx == 1
    assert "[1.0-2.0seconds]" in cot


def test_summarize_mock_end_to_end():
    sample = make_sample(5, sample_id="sm5", duration=30.0, question="sm5 q?")
    chain, scorer = _chain(sample, n=3)
    cot, idx = summarize_chain(chain, sample, scorer)
    assert idx == sample.answer_idx  # full coverage -> mock answers correctly
    assert len(parse_spans(cot, duration_s=sample.video.duration_s)) >= 1


def test_summarize_requires_captioned_chain():
    sample = make_sample(5, sample_id="sm6", duration=30.0, question="sm6 q?")
    segs = make_segments(sample, [(0.0, 5.0)])
    bare = segs[0].with_text("")
    with pytest.raises(ValueError):
        summarize_chain(make_chain([bare], score=0.5), sample, MockScorer())


def test_filter_argmax_cases():
    sample = make_sample(5, sample_id="fl", question="fl q?")
    passing = filter_chain("ctx", sample, StubScorer((0.1, 0.7, 0.1, 0.05, 0.05)))
    assert passing.passed and passing.predicted_idx == 1
    failing = filter_chain("ctx", sample, StubScorer((0.7, 0.1, 0.1, 0.05, 0.05)))
    assert not failing.passed and failing.predicted_idx == 0


def test_filter_tie_fails():
    sample = make_sample(5, sample_id="fl2", question="fl2 q?")
    verdict = filter_chain("ctx", sample, StubScorer((0.2,) * 5))
    assert not verdict.passed
    assert verdict.predicted_idx is None


def test_filter_full_coverage_passes():
    sample = make_sample(5, sample_id="fl3", duration=25.0, question="fl3 q?")
    segs = make_segments(sample, [(0.0, 5.0), (10.0, 15.0)])
    scorer = make_mock(sample, segs, [s.seg_id for s in segs])
    context = " ".join(s.text for s in segs)
    verdict = filter_chain(context, sample, scorer)
    assert verdict.passed
    assert verdict.distribution.probs[sample.answer_idx] == 1.0
    # Disjoint context scores at base probability and fails on the tie.
    assert not filter_chain("unrelated text", sample, scorer).passed


def test_emit_modes_and_targets():
    sample = make_sample(5, sample_id="em", duration=50.0, question="em q?")
    chain, _ = _chain(sample)
    cot = "From [2.0-6.0seconds] the marker is visible."
    records = emit_training_samples(sample, chain, cot, {"QA", "QEA", "QAE"})
    assert len(records) == 3
    assert {r.target_mode for r in records} == {"QA", "QEA", "QAE"}
    assert all(r.sample_id == sample.sample_id for r in records)
    by_mode = {r.target_mode: r for r in records}
    assert by_mode["QA"].cot_text == cot  # stored even when the target omits it
    assert cot not in target_text(by_mode["QA"])
    assert target_text(by_mode["QEA"]).startswith(cot)
    assert target_text(by_mode["QAE"]).startswith("Answer:")
    assert target_text(by_mode["QAE"]).endswith(cot)


def test_emit_respects_filter():
    sample = make_sample(5, sample_id="em2", duration=50.0, question="em2 q?")
    chain, _ = _chain(sample)
    cot = "From [2.0-6.0seconds] the marker is visible."
    assert emit_training_samples(sample, chain, cot, {"QA"}, passed_filter=False) == []
    forced = emit_training_samples(sample, chain, cot, {"QA"}, passed_filter=False,
                                   override_filter=True)
    assert len(forced) == 1


def test_emit_validates_spans():
    sample = make_sample(5, sample_id="em3", duration=10.0, question="em3 q?")
    chain, _ = _chain(sample)
    with pytest.raises(SpanlessSummary):
        emit_training_samples(sample, chain, "no spans", {"QA"})
    with pytest.raises(ValueError):
        emit_training_samples(sample, chain, "at [5.0-99.0seconds] oops", {"QA"})


def test_hop_histogram():
    sample_a = make_sample(5, sample_id="ha", duration=50.0, question="ha q?")
    sample_b = make_sample(5, sample_id="hb", duration=50.0, question="hb q?")
    sample_c = make_sample(5, sample_id="hc", duration=50.0, question="hc q?")
    cot = "From [2.0-6.0seconds] the marker is visible."
    records = []
    for sample, hops in ((sample_a, 1), (sample_b, 2), (sample_c, 2)):
        chain, _ = _chain(sample, n=hops)
        records += emit_training_samples(sample, chain, cot, {"QA", "QEA"})
    assert hop_histogram(records) == {1: 1, 2: 2}
    assert hop_histogram([]) == {}


def test_cot_round_trip_fixpoint():
    sample = make_sample(5, sample_id="rt", duration=60.0, question="rt q?")
    segs = make_segments(sample, [(0.0, 10.0), (20.0, 35.0), (40.0, 55.0)])
    scorer = make_mock(sample, segs, [s.seg_id for s in segs])
    pool = EvidencePool(sample.sample_id, tuple(segs), refined=True)
    chain, _ = beam_search(pool, sample, scorer, SearchConfig(T=0.5))
    cot, _ = summarize_chain(chain, sample, scorer)
    spans1 = parse_spans(cot, duration_s=sample.video.duration_s)
    rendered = " ".join(format_span(s) for s in spans1)
    spans2 = parse_spans(rendered)
    assert spans2 == spans1
    assert " ".join(format_span(s) for s in spans2) == rendered
