"""Answer-likelihood scoring and text generation behind one contract.

Every model call in the pipeline goes through a ``Scorer``:

* ``score_options`` returns the probability of each answer option given a
  question and an evidence context.
* ``generate_text`` returns free text for a prompt (captioning, refinement,
  summarization, the direct baselines).

Three implementations ship here: ``MockScorer`` (a deterministic world model
that makes the whole pipeline testable offline), ``RemoteScorer`` (HTTP chat
endpoint with log-probability readout and retries), and ``CachingScorer``
(a file-backed cache wrapper so reruns are free and reproducible).
"""

from __future__ import annotations

import hashlib
import json
import math
import random
import re
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import httpx

from .core import (
    EvchainError,
    EvidenceSegment,
    OptionDistribution,
    QASample,
    option_letter,
)
from . import prompts
from .prompts import (
    PURPOSE_CAPTION,
    PURPOSE_DIRECT,
    PURPOSE_GT_GUIDED,
    PURPOSE_REFINE,
    PURPOSE_SUMMARIZE,
)
from .segmenter import HierarchyLevel, segment_video


class ScorerError(EvchainError):
    pass


class RemoteUnavailable(ScorerError):
    """Endpoint could not be reached or kept failing after retries."""

    def __init__(self, message: str, payload=None):
        super().__init__(message)
        self.payload = payload


class MalformedResponse(ScorerError):
    """Endpoint replied, but with nothing usable."""

    def __init__(self, message: str, payload=None):
        super().__init__(message)
        self.payload = payload


@dataclass(frozen=True)
class ScorerRequest:
    """One answer-likelihood query: P(options | question, context)."""

    question: str
    options: tuple[str, ...]
    context_text: str
    purpose: str

    def __post_init__(self):
        object.__setattr__(self, "options", tuple(self.options))
        if len(self.options) < 2:
            raise ValueError("scoring needs at least two options")

    def payload_key(self) -> str:
        return json.dumps(
            {"q": self.question, "o": list(self.options), "c": self.context_text},
            sort_keys=True,
            ensure_ascii=False,
        )


class Telemetry:
    """Thread-safe counters for cache and network behaviour."""

    def __init__(self):
        self._lock = threading.Lock()
        self.counts: dict[str, int] = {}

    def inc(self, name: str, by: int = 1):
        with self._lock:
            self.counts[name] = self.counts.get(name, 0) + by

    def get(self, name: str) -> int:
        return self.counts.get(name, 0)


class Scorer:
    """Contract all implementations satisfy. Implementations must be safe
    for concurrent use."""

    def cache_id(self) -> str:
        raise NotImplementedError

    def score_options(self, req: ScorerRequest) -> OptionDistribution:
        raise NotImplementedError

    def generate_text(self, prompt: str, purpose: str, media_uri: Optional[str] = None) -> str:
        raise NotImplementedError


# ---------------------------------------------------------------------------
# Deterministic mock
# ---------------------------------------------------------------------------

_SUBJECTS = ("a man", "a woman", "a child", "a dog", "the group", "a cyclist")
_ACTIONS = ("picks up", "points at", "walks past", "reaches for", "looks toward", "waves at")
_OBJECTS = ("a red ball", "the doorway", "a small table", "the camera", "another person", "a bicycle")

_MARKER_RE = re.compile(r"ev[0-9a-f]{10}")


def _sha(text: str) -> str:
    return hashlib.sha1(text.encode("utf-8")).hexdigest()


def marker_for_prompt(prompt: str) -> str:
    """Unique per-segment cue embedded in mock captions; how the mock world
    recognizes which evidence a context contains."""
    return "ev" + _sha(prompt)[:10]


@dataclass
class MockWorld:
    """Hidden ground truth for one sample.

    ``relevant`` is the set of segment ids that actually answer the question;
    the correct option's probability is base_prob + (1 - base_prob) * c where
    c is the fraction of relevant segments present in the context, and the
    remaining mass is spread uniformly over the wrong options.
    """

    sample: QASample
    relevant: frozenset
    base_prob: float
    noise_seed: int
    segments: tuple[EvidenceSegment, ...] = ()
    markers: dict = field(default_factory=dict)  # seg_id -> marker
    caption_bodies: dict = field(default_factory=dict)  # sha1(prompt) -> body

    def __post_init__(self):
        if not self.relevant:
            raise ValueError("relevant set must be non-empty")
        if self.segments:
            known = {s.seg_id for s in self.segments}
            if not set(self.relevant) <= known:
                raise ValueError("relevant set must be a subset of the pool's seg ids")
        # Keep base_prob <= 1/num_options for worlds meant to gate the
        # filter (zero coverage must not already win); larger values are
        # allowed for fixtures that exercise the raw formula.
        if not (0 < self.base_prob <= 1):
            raise ValueError("base_prob must be in (0, 1]")

    def coverage(self, context_text: str) -> float:
        hit = sum(1 for sid in self.relevant if self.markers.get(sid, "\0") in context_text)
        return hit / len(self.relevant)

    def distribution(self, context_text: str) -> OptionDistribution:
        n = len(self.sample.options)
        p_correct = self.base_prob + (1 - self.base_prob) * self.coverage(context_text)
        rest = (1.0 - p_correct) / (n - 1)
        probs = [rest] * n
        probs[self.sample.answer_idx] = p_correct
        return OptionDistribution(tuple(probs))


def build_mock_world(
    sample: QASample,
    segments: Sequence[EvidenceSegment],
    seed: int,
    max_relevant: int = 3,
    base_prob: Optional[float] = None,
) -> MockWorld:
    """Derive a sample's hidden world from the seed alone, so every stage of
    a run (and every rerun) reconstructs the identical world."""
    rng = random.Random(f"{seed}:{sample.sample_id}")
    seg_ids = sorted(s.seg_id for s in segments)
    size = rng.randint(1, min(max_relevant, len(seg_ids)))
    relevant = frozenset(rng.sample(seg_ids, size))
    world = MockWorld(
        sample=sample,
        relevant=relevant,
        base_prob=base_prob if base_prob is not None else 1 / len(sample.options),
        noise_seed=rng.getrandbits(32),
        segments=tuple(segments),
    )
    _fill_world_captions(world)
    return world


def _fill_world_captions(world: MockWorld):
    for seg in world.segments:
        prompt = prompts.render_caption_prompt(world.sample, seg)
        h = _sha(prompt)
        marker = "ev" + h[:10]
        rng = random.Random(int(h[:12], 16) ^ world.noise_seed)
        body = (
            f"{rng.choice(_SUBJECTS)} {rng.choice(_ACTIONS)} {rng.choice(_OBJECTS)} "
            f"(cue {marker})"
        )
        world.markers[seg.seg_id] = marker
        world.caption_bodies[h] = body


class MockScorer(Scorer):
    """Offline scorer driven by per-sample hidden worlds.

    Deterministic by construction: replies are pure functions of the prompt,
    the seed, and the worlds. Canned replies (substring -> reply) take
    precedence and let tests script exact model output. World lookup keys on
    the question text, so questions must be unique within a dataset.
    """

    def __init__(self, worlds: Optional[dict] = None, seed: int = 0, canned=None):
        self.worlds: dict[str, MockWorld] = worlds or {}
        self.seed = seed
        self.canned: list[tuple[str, str]] = list(canned or [])

    @classmethod
    def for_samples(
        cls,
        samples: Sequence[QASample],
        levels: Sequence[HierarchyLevel],
        seed: int,
        max_relevant: int = 3,
    ) -> "MockScorer":
        worlds = {}
        for sample in samples:
            segs = segment_video(sample.video, levels, owner_id=sample.sample_id)
            worlds[sample.sample_id] = build_mock_world(sample, segs, seed, max_relevant)
        return cls(worlds=worlds, seed=seed)

    def cache_id(self) -> str:
        return f"mock:{self.seed}"

    def add_canned(self, needle: str, reply: str):
        self.canned.append((needle, reply))

    def world_for_question(self, question: str) -> Optional[MockWorld]:
        for world in self.worlds.values():
            if world.sample.question == question:
                return world
        return None

    def _world_in_prompt(self, prompt: str) -> Optional[MockWorld]:
        for world in self.worlds.values():
            if world.sample.question and world.sample.question in prompt:
                return world
        return None

    def score_options(self, req: ScorerRequest) -> OptionDistribution:
        world = self.world_for_question(req.question)
        if world is None or len(world.sample.options) != len(req.options):
            n = len(req.options)
            return OptionDistribution(tuple([1.0 / n] * n))
        return world.distribution(req.context_text)

    def generate_text(self, prompt: str, purpose: str, media_uri: Optional[str] = None) -> str:
        for needle, reply in self.canned:
            if needle in prompt:
                return reply
        world = self._world_in_prompt(prompt)
        if purpose == PURPOSE_CAPTION:
            return self._caption(prompt, world)
        if purpose == PURPOSE_REFINE:
            return self._refine(prompt, world)
        if purpose == PURPOSE_SUMMARIZE:
            return self._summarize(prompt, world)
        if purpose in (PURPOSE_DIRECT, PURPOSE_GT_GUIDED):
            return self._direct_evidence(world)
        # Unknown purpose: deterministic filler keyed by the prompt.
        return f"mock reply {marker_for_prompt(prompt)}"

    def _caption(self, prompt: str, world: Optional[MockWorld]) -> str:
        h = _sha(prompt)
        if world is not None and h in world.caption_bodies:
            return f"Evidence: {world.caption_bodies[h]}"
        rng = random.Random(int(h[:12], 16) ^ self.seed)
        body = (
            f"{rng.choice(_SUBJECTS)} {rng.choice(_ACTIONS)} {rng.choice(_OBJECTS)} "
            f"(cue ev{h[:10]})"
        )
        return f"Evidence: {body}"

    _TRANSCRIPT_LINE = re.compile(
        r"^\s*(?:\d+\.\s*)?\[([0-9.]+)-([0-9.]+)seconds\]\s*(.+)$", re.MULTILINE
    )

    def _refine(self, prompt: str, world: Optional[MockWorld]) -> str:
        m = re.search(r"at most (\d+) steps", prompt)
        limit = int(m.group(1)) if m else 8
        items = []
        for lo, hi, text in self._TRANSCRIPT_LINE.findall(prompt):
            items.append((float(lo), float(hi), text.strip()))
        relevant_markers = set(world.markers[sid] for sid in world.relevant) if world else set()

        def is_relevant(item):
            return any(mk in item[2] for mk in relevant_markers)

        ranked = sorted(items, key=lambda it: (not is_relevant(it), it[0], it[1]))
        chain = [
            {"start_time": lo, "end_time": hi, "evidence": text}
            for lo, hi, text in ranked[:limit]
        ]
        return json.dumps({"evidence_chain": chain})

    def _summarize(self, prompt: str, world: Optional[MockWorld]) -> str:
        steps = self._TRANSCRIPT_LINE.findall(prompt)
        sentences = [
            f"Looking at [{lo}-{hi}seconds], we observe that {text.strip().rstrip('.')}."
            for lo, hi, text in steps
        ]
        if world is not None:
            dist = world.distribution(prompt)
            letter = option_letter(dist.argmax())
        else:
            letter = "A"
        cot = " ".join(sentences) + f" Therefore the answer is {letter}."
        return json.dumps({"full_chain_of_thought": cot, "final_answer": letter})

    def _direct_evidence(self, world: Optional[MockWorld]) -> str:
        if world is None:
            return "[0.1-0.3] The scene sets the context. [0.5-0.9] A key action occurs."
        by_id = {s.seg_id: s for s in world.segments}
        chosen = sorted(
            (by_id[sid] for sid in world.relevant), key=lambda s: s.sort_key()
        )[:2]
        dur = world.sample.video.duration_s
        lines = []
        for seg in chosen:
            lo, hi = prompts.abs_window(seg, dur)
            body = (
                world.caption_bodies.get(_sha(prompts.render_caption_prompt(world.sample, seg)))
                or seg.text
                or f"a key action (cue {world.markers.get(seg.seg_id, seg.seg_id)})"
            )
            lines.append(f"[{lo}-{hi}] This clip shows that {body}.")
        return " ".join(lines)


# ---------------------------------------------------------------------------
# File-backed response cache
# ---------------------------------------------------------------------------


class ResponseCache:
    """Append-only JSONL cache: one {cache_key, prompt_hash, text, timestamp}
    record per line. Replayed fully on open; later records win."""

    def __init__(self, path=None):
        self.path = path
        self._lock = threading.Lock()
        self._store: dict[str, str] = {}
        if path is not None:
            try:
                with open(path, "r", encoding="utf-8") as fh:
                    for line in fh:
                        line = line.strip()
                        if not line:
                            continue
                        rec = json.loads(line)
                        self._store[rec["cache_key"]] = rec["text"]
            except FileNotFoundError:
                pass

    def get(self, key: str) -> Optional[str]:
        with self._lock:
            return self._store.get(key)

    def put(self, key: str, prompt_hash: str, text: str):
        with self._lock:
            self._store[key] = text
            if self.path is not None:
                rec = {
                    "cache_key": key,
                    "prompt_hash": prompt_hash,
                    "text": text,
                    "timestamp": time.time(),
                }
                with open(self.path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps(rec, ensure_ascii=False) + "\n")

    def __len__(self):
        return len(self._store)


def cache_key(scorer_id: str, purpose: str, payload: str) -> str:
    return hashlib.sha256(f"{scorer_id}|{purpose}|{payload}".encode("utf-8")).hexdigest()


class CachingScorer(Scorer):
    """Wraps any scorer with a (optionally file-backed) response cache.

    The cache unit is one contract call: a generated text or a scored
    distribution. Keys cover scorer identity (endpoint/model or mock seed),
    purpose, and the full payload, so different configurations never share
    entries.
    """

    def __init__(self, base: Scorer, cache: Optional[ResponseCache] = None,
                 telemetry: Optional[Telemetry] = None):
        self.base = base
        self.cache = cache if cache is not None else ResponseCache()
        self.telemetry = telemetry if telemetry is not None else Telemetry()

    def cache_id(self) -> str:
        return self.base.cache_id()

    def score_options(self, req: ScorerRequest) -> OptionDistribution:
        self.telemetry.inc("score_calls")
        payload = req.payload_key()
        key = cache_key(self.base.cache_id(), f"score:{req.purpose}", payload)
        hit = self.cache.get(key)
        if hit is not None:
            self.telemetry.inc("cache_hits")
            return OptionDistribution(tuple(json.loads(hit)))
        self.telemetry.inc("cache_misses")
        self.telemetry.inc("base_calls")
        dist = self.base.score_options(req)
        self.cache.put(key, _sha(payload), json.dumps(list(dist.probs)))
        return dist

    def generate_text(self, prompt: str, purpose: str, media_uri: Optional[str] = None) -> str:
        self.telemetry.inc("generate_calls")
        payload = prompt if media_uri is None else f"{media_uri}\n{prompt}"
        key = cache_key(self.base.cache_id(), f"text:{purpose}", payload)
        hit = self.cache.get(key)
        if hit is not None:
            self.telemetry.inc("cache_hits")
            return hit
        self.telemetry.inc("cache_misses")
        self.telemetry.inc("base_calls")
        text = self.base.generate_text(prompt, purpose, media_uri=media_uri)
        self.cache.put(key, _sha(payload), text)
        return text


# ---------------------------------------------------------------------------
# Remote HTTP scorer
# ---------------------------------------------------------------------------


def _softmax(logps: Sequence[float]) -> list[float]:
    m = max(logps)
    exps = [math.exp(lp - m) for lp in logps]
    total = sum(exps)
    return [e / total for e in exps]


class RemoteScorer(Scorer):
    """Chat-completion client with log-probability answer scoring.

    Request/response field names are documented in docs/protocol.md. Answer
    probabilities come from per-token log-probabilities of the option
    letters, softmax-normalized; endpoints that return no log-probabilities
    fall back to sampling the answer ``sample_count`` times and using
    empirical frequencies.
    """

    TRANSIENT_STATUSES = {429, 500, 502, 503, 504}

    def __init__(
        self,
        endpoint: str,
        model: str,
        api_key: Optional[str] = None,
        timeout_s: float = 60.0,
        max_retries: int = 3,
        backoff_base_s: float = 0.5,
        max_inflight: int = 8,
        sample_count: int = 5,
        sample_temperature: float = 0.7,
        telemetry: Optional[Telemetry] = None,
        transport: Optional[httpx.BaseTransport] = None,
        sleeper: Callable[[float], None] = time.sleep,
    ):
        self.endpoint = endpoint.rstrip("/")
        self.model = model
        self.api_key = api_key
        self.max_retries = max_retries
        self.backoff_base_s = backoff_base_s
        self.sample_count = sample_count
        self.sample_temperature = sample_temperature
        self.telemetry = telemetry or Telemetry()
        self._sleep = sleeper
        self._gate = threading.Semaphore(max_inflight)
        self._client = httpx.Client(timeout=timeout_s, transport=transport)

    def cache_id(self) -> str:
        return f"remote:{self.endpoint}:{self.model}"

    def close(self):
        self._client.close()

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        return headers

    def _post(self, body: dict) -> dict:
        url = f"{self.endpoint}/chat/completions"
        last_err = None
        for attempt in range(self.max_retries + 1):
            self.telemetry.inc("remote_attempts")
            if attempt > 0:
                self.telemetry.inc("remote_retries")
                self._sleep(self.backoff_base_s * (2 ** (attempt - 1)))
            try:
                with self._gate:
                    resp = self._client.post(url, json=body, headers=self._headers())
            except httpx.HTTPError as exc:
                last_err = exc
                continue
            if resp.status_code in self.TRANSIENT_STATUSES:
                last_err = RuntimeError(f"HTTP {resp.status_code}: {resp.text[:500]}")
                continue
            if resp.status_code >= 400:
                self.telemetry.inc("remote_failures")
                raise RemoteUnavailable(
                    f"endpoint rejected request with HTTP {resp.status_code}",
                    payload=resp.text,
                )
            try:
                return resp.json()
            except ValueError:
                self.telemetry.inc("remote_failures")
                raise MalformedResponse("response body is not JSON", payload=resp.text)
        self.telemetry.inc("remote_failures")
        raise RemoteUnavailable(
            f"endpoint unavailable after {self.max_retries + 1} attempts: {last_err}",
            payload=str(last_err),
        )

    @staticmethod
    def _content(data: dict) -> str:
        try:
            return data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError):
            raise MalformedResponse("no message content in response", payload=data)

    def generate_text(self, prompt: str, purpose: str, media_uri: Optional[str] = None) -> str:
        if not prompt:
            raise ValueError("prompt must be non-empty")
        if media_uri:
            content = [
                {"type": "text", "text": prompt},
                {"type": "video_url", "video_url": {"url": media_uri}},
            ]
        else:
            content = prompt
        body = {
            "model": self.model,
            "messages": [{"role": "user", "content": content}],
            "temperature": 0.0,
        }
        data = self._post(body)
        text = self._content(data)
        if not isinstance(text, str) or not text.strip():
            raise MalformedResponse("empty generation", payload=data)
        return text

    def score_options(self, req: ScorerRequest) -> OptionDistribution:
        prompt = prompts.render_answer_prompt(req.question, req.options, req.context_text)
        body = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": 0.0,
            "max_tokens": 8,
            "logprobs": True,
            "top_logprobs": 20,
        }
        data = self._post(body)
        letters = [option_letter(i) for i in range(len(req.options))]
        dist = self._from_logprobs(data, letters)
        if dist is not None:
            return dist
        return self._from_sampling(req, letters, first=data)

    def _from_logprobs(self, data: dict, letters: list[str]) -> Optional[OptionDistribution]:
        try:
            tokens = data["choices"][0]["logprobs"]["content"]
        except (KeyError, IndexError, TypeError):
            return None
        if not tokens:
            return None
        for tok in tokens:
            token_text = str(tok.get("token", "")).strip().upper().rstrip(".):")
            if token_text not in letters:
                continue
            per_letter = {token_text: float(tok.get("logprob", 0.0))}
            for alt in tok.get("top_logprobs", []) or []:
                alt_text = str(alt.get("token", "")).strip().upper().rstrip(".):")
                if alt_text in letters and alt_text not in per_letter:
                    per_letter[alt_text] = float(alt["logprob"])
            logps = [per_letter.get(letter, -1e9) for letter in letters]
            return OptionDistribution(tuple(_softmax(logps)))
        return None

    def _from_sampling(self, req: ScorerRequest, letters: list[str], first=None):
        prompt = prompts.render_answer_prompt(req.question, req.options, req.context_text)
        counts = [0] * len(letters)
        usable = 0
        payloads = [first]
        for i in range(self.sample_count):
            body = {
                "model": self.model,
                "messages": [{"role": "user", "content": prompt}],
                "temperature": self.sample_temperature,
                "max_tokens": 8,
                "seed": i,
            }
            data = self._post(body)
            payloads.append(data)
            text = self._content(data).strip().upper()
            m = re.search(r"[A-E]", text[:4])
            if m and m.group(0) in letters:
                counts[letters.index(m.group(0))] += 1
                usable += 1
        if usable == 0:
            raise MalformedResponse(
                "no log-probabilities and no parseable sampled answers", payload=payloads
            )
        return OptionDistribution(tuple(c / usable for c in counts))
