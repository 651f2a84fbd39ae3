import random

import pytest

from evchain import toy_corpus_path
from evchain.core import (
    EvidencePool,
    EvidenceSegment,
    OptionDistribution,
    QASample,
    TimeSpan,
    VideoRef,
)
from evchain.dataio import load_qa_dataset
from evchain.scorer import MockScorer, MockWorld, Scorer, ScorerRequest


@pytest.fixture(scope="session")
def toy_samples():
    return load_qa_dataset(toy_corpus_path()).samples


def make_sample(n_options=5, sample_id="s1", duration=40.0, question=None):
    options = ["red", "blue", "green", "yellow", "purple"][:n_options]
    return QASample(
        sample_id=sample_id,
        video=VideoRef(f"vid-{sample_id}", duration, uri=f"file:///{sample_id}.mp4"),
        question=question or f"What color is the marker in {sample_id}?",
        options=tuple(options),
        answer_idx=1,
    )


def make_segments(sample, spans, level=1):
    segs = []
    for i, (lo, hi) in enumerate(spans):
        seg_id = f"{sample.sample_id}/L{level}/{i}"
        segs.append(EvidenceSegment(seg_id, TimeSpan(lo, hi), level, f"evidence about {seg_id}"))
    return segs


def make_world(sample, segments, relevant, base_prob=None):
    """World whose markers are the seg ids themselves, which already appear
    in the fixture segments' text."""
    world = MockWorld(
        sample=sample,
        relevant=frozenset(relevant),
        base_prob=base_prob if base_prob is not None else 1 / len(sample.options),
        noise_seed=0,
        segments=tuple(segments),
    )
    world.markers = {s.seg_id: s.seg_id for s in segments}
    return world


def make_mock(sample, segments, relevant, base_prob=None):
    world = make_world(sample, segments, relevant, base_prob)
    return MockScorer(worlds={sample.sample_id: world})


def random_instance(rng: random.Random, pool_size=None, n_options=5, max_relevant=3):
    """Random refined pool + world for oracle tests."""
    pool_size = pool_size or rng.randint(2, 8)
    duration = rng.choice([16.0, 32.0, 50.0, 128.0])
    sample = make_sample(
        n_options=n_options,
        sample_id=f"rnd{rng.randint(0, 10**9)}",
        duration=duration,
        question=f"What happens in clip {rng.randint(0, 10**9)}?",
    )
    spans = []
    for _ in range(pool_size):
        lo = rng.uniform(0, duration - 1.0)
        hi = rng.uniform(lo + 0.5, duration)
        spans.append((lo, min(hi, duration)))
    segments = make_segments(sample, spans)
    relevant = rng.sample([s.seg_id for s in segments],
                          rng.randint(1, min(max_relevant, pool_size)))
    base = rng.uniform(0.05, 1 / n_options)
    scorer = make_mock(sample, segments, relevant, base_prob=base)
    pool = EvidencePool(sample.sample_id, tuple(segments), refined=True)
    return sample, pool, scorer, frozenset(relevant)


class StubScorer(Scorer):
    """Fixed-distribution scorer for filter tests."""

    def __init__(self, probs, reply="stub"):
        self.probs = tuple(probs)
        self.reply = reply

    def cache_id(self):
        return "stub"

    def score_options(self, req: ScorerRequest) -> OptionDistribution:
        return OptionDistribution(self.probs)

    def generate_text(self, prompt, purpose, media_uri=None):
        return self.reply
