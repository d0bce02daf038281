"""Deterministic synthetic videos and queries.

A video is a sequence of equal-length segments, each showing one event class.
Clip features are the class prototype, plus a slowly varying timeline
component shared by all videos, plus Gaussian noise.  Three query templates:

* plain       ``"<event>"``                     -- the single occurrence
* ordinal     ``"<event> the <k-th> time"``     -- the k-th occurrence
* relational  ``"<A> after <B>"``               -- first A that starts after B

An occurrence is a maximal run of consecutive segments with the same class;
runs last one or two segments.  Ordinal samples always repeat the event, so
local appearance alone cannot pick the answer.  Relational samples put the
answer A after B in time, the reverse of sentence order, and often add A runs
before B or after the answer as distractors.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .data import Sample, write_annotations
from .exceptions import ConfigurationError
from .io_utils import dump_json
from .language import Vocabulary, split_words
from .rng import derive_seed, make_rng
from .video import PRESET_DURATIONS, ClipFeatures, get_preset, write_features

EVENT_TOKENS = (
    "jumping", "waving", "sitting", "running", "eating", "drinking", "reading", "cooking",
    "dancing", "singing", "cleaning", "typing", "climbing", "throwing", "laughing", "walking",
)
ORDINALS = ("first", "second", "third")
FUNCTION_WORDS = ("the", "first", "second", "third", "time", "after", "before")
TEMPLATES = ("plain", "ordinal", "relational")

# segments per video and clips per segment for each preset
SEGMENT_LAYOUT = {"didemo": (6, 40), "charades": (16, 16)}


@dataclass
class GenerationSpec:
    plain: int = 0
    ordinal: int = 0
    relational: int = 0
    preset: str = "didemo"
    seed: int = 0
    world_seed: int = 0          # event prototypes and timeline; shared by train/test splits
    num_events: int = 8
    dim: int = 32
    noise: float = 0.1
    timeline: float = 0.5
    timeline_terms: int = 4
    max_ordinal: int = 3
    double_run_prob: float = 0.25

    def counts(self) -> Dict[str, int]:
        return {"plain": self.plain, "ordinal": self.ordinal, "relational": self.relational}

    def validate(self) -> None:
        if min(self.counts().values()) < 0:
            raise ConfigurationError("query counts must be non-negative")
        if not 2 <= self.num_events <= len(EVENT_TOKENS):
            raise ConfigurationError(f"num_events must be in [2, {len(EVENT_TOKENS)}]")
        if self.preset not in SEGMENT_LAYOUT:
            raise ConfigurationError(f"unknown preset {self.preset!r}")
        segments = SEGMENT_LAYOUT[self.preset][0]
        if not 1 <= self.max_ordinal <= len(ORDINALS):
            raise ConfigurationError(f"max_ordinal must be in [1, {len(ORDINALS)}]")
        # k separated runs need 2k - 1 segments
        if self.ordinal and 2 * self.max_ordinal - 1 > segments:
            raise ConfigurationError(f"ordinal k={self.max_ordinal} does not fit in "
                                     f"{segments} segments")
        if self.ordinal and self.num_events < 2:
            raise ConfigurationError("ordinal queries need a filler event class")
        if self.relational and self.num_events < 3:
            raise ConfigurationError("relational queries need at least 3 event classes")
        if self.relational and segments < 2:
            raise ConfigurationError("relational queries need at least 2 segments")
        if self.dim < 1 or self.noise < 0 or self.timeline < 0:
            raise ConfigurationError("dim must be positive; noise and timeline non-negative")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class EventVocabulary:
    tokens: List[str]
    prototypes: np.ndarray       # E x dim
    timeline_basis: np.ndarray   # terms x dim

    @classmethod
    def draw(cls, num_events: int, dim: int, seed: int, terms: int = 4) -> "EventVocabulary":
        rng = make_rng(derive_seed(seed, "event-vocabulary"))
        min_cos = np.cos(np.deg2rad(10.0))
        while True:
            protos = rng.standard_normal((num_events, dim))
            protos /= np.linalg.norm(protos, axis=1, keepdims=True)
            cos = np.abs(protos @ protos.T)[~np.eye(num_events, dtype=bool)]
            if cos.size == 0 or cos.max() < min_cos:
                break
        basis = rng.standard_normal((terms, dim)) / np.sqrt(dim)
        return cls(list(EVENT_TOKENS[:num_events]), protos, basis)


@dataclass
class SyntheticVideo:
    video_id: str
    events: List[int]            # class index per segment
    clips_per_segment: int
    segment_seconds: float

    @property
    def duration(self) -> float:
        return len(self.events) * self.segment_seconds


@dataclass
class SyntheticQuery:
    template: str
    text: str
    interval: Tuple[float, float]


@dataclass
class SyntheticDataset:
    spec: GenerationSpec
    events: EventVocabulary
    videos: List[SyntheticVideo] = field(default_factory=list)
    queries: List[SyntheticQuery] = field(default_factory=list)
    features: Dict[str, ClipFeatures] = field(default_factory=dict)

    @property
    def samples(self) -> List[Sample]:
        return [Sample(v.video_id, q.text, q.interval[0], q.interval[1],
                       query_id=f"q{i:05d}", template=q.template)
                for i, (v, q) in enumerate(zip(self.videos, self.queries))]

    @property
    def vocabulary(self) -> Vocabulary:
        return Vocabulary(list(self.events.tokens) + list(FUNCTION_WORDS))


def runs(events: Sequence[int]) -> List[Tuple[int, int, int]]:
    """Maximal same-class runs as (class, first segment, end segment)."""
    out = []
    for i, c in enumerate(events):
        if out and out[-1][0] == c and out[-1][2] == i:
            out[-1] = (c, out[-1][1], i + 1)
        else:
            out.append((c, i, i + 1))
    return out


def _layout(rng, spec: GenerationSpec, segments: int, labels: Sequence[int],
            others: Sequence[int]) -> List[int]:
    """Place runs of ``labels`` in order; the rest gets filler classes.

    Runs are 1 segment long, or 2 with probability ``double_run_prob``, and
    same-class neighbours are kept apart by at least one filler segment.
    """
    n = len(labels)
    lengths = [2 if rng.random() < spec.double_run_prob else 1 for _ in labels]
    need = [1 if i and labels[i] == labels[i - 1] else 0 for i in range(n)]
    while sum(lengths) + sum(need) > segments:
        longest = int(np.argmax(lengths))
        if lengths[longest] == 1:
            raise ConfigurationError(f"{n} runs do not fit in {segments} segments")
        lengths[longest] -= 1
    free = segments - sum(lengths) - sum(need)
    # spread the spare segments over the n + 1 gaps (stars and bars)
    cuts = np.sort(rng.choice(free + n, size=n, replace=False))
    extra = np.diff(np.concatenate([[-1], cuts, [free + n]])) - 1
    events: List[Optional[int]] = []
    for i, (label, length) in enumerate(zip(labels, lengths)):
        events += [None] * (int(extra[i]) + need[i])
        events += [label] * length
    events += [None] * int(extra[n])
    return _fill(rng, events, others)


def _fill(rng, events: List[Optional[int]], allowed: Sequence[int]) -> List[int]:
    return [int(rng.choice(allowed)) if e is None else e for e in events]


def _plain(rng, spec: GenerationSpec, segments: int):
    target = int(rng.integers(spec.num_events))
    others = [c for c in range(spec.num_events) if c != target]
    return _layout(rng, spec, segments, [target], others), target, None, None


def _ordinal(rng, spec: GenerationSpec, segments: int):
    target = int(rng.integers(spec.num_events))
    k = int(rng.integers(1, spec.max_ordinal + 1))
    n_runs = int(rng.integers(max(k, 2), spec.max_ordinal + 1)) if spec.max_ordinal >= 2 else 1
    others = [c for c in range(spec.num_events) if c != target]
    return _layout(rng, spec, segments, [target] * n_runs, others), target, k, None


# run orders for "A after B"; the answer is the first A run after the B run
RELATIONAL_PATTERNS = ("BA", "ABA", "BAA", "ABAA", "AABA")


def _relational(rng, spec: GenerationSpec, segments: int):
    a, b = (int(x) for x in rng.choice(spec.num_events, size=2, replace=False))
    fits = [p for p in RELATIONAL_PATTERNS if len(p) + p.count("AA") <= segments]
    pattern = fits[int(rng.integers(len(fits)))]
    labels = [a if ch == "A" else b for ch in pattern]
    others = [c for c in range(spec.num_events) if c not in (a, b)]
    return _layout(rng, spec, segments, labels, others), a, None, b


def _render(tokens: Sequence[str], template: str, target: int, k: Optional[int],
            other: Optional[int]) -> str:
    if template == "plain":
        return tokens[target]
    if template == "ordinal":
        return f"{tokens[target]} the {ORDINALS[k - 1]} time"
    return f"{tokens[target]} after {tokens[other]}"


def _ground_truth(events: Sequence[int], template: str, target: int, k: Optional[int],
                  other: Optional[int]) -> Tuple[int, int]:
    occ = [(s, e) for c, s, e in runs(events) if c == target]
    if template == "plain":
        return occ[0]
    if template == "ordinal":
        return occ[k - 1]
    b_end = next(e for c, s, e in runs(events) if c == other)
    return next((s, e) for s, e in occ if s >= b_end)


def clip_features(video: SyntheticVideo, events: EventVocabulary, spec: GenerationSpec,
                  rng: np.random.Generator) -> np.ndarray:
    labels = np.repeat(np.asarray(video.events), video.clips_per_segment)
    clips = labels.size
    tau = (np.arange(clips) + 0.5) / clips
    terms = np.arange(1, events.timeline_basis.shape[0] + 1)
    timeline = np.cos(np.pi * tau[:, None] * terms[None, :]) @ events.timeline_basis
    noise = rng.standard_normal((clips, spec.dim)) * spec.noise
    return events.prototypes[labels] + spec.timeline * timeline + noise


def generate(spec: GenerationSpec) -> SyntheticDataset:
    """Build videos, features and queries; a pure function of ``spec``."""
    spec.validate()
    segments, per_segment = SEGMENT_LAYOUT[spec.preset]
    preset = get_preset(spec.preset)
    duration = PRESET_DURATIONS[spec.preset]
    assert segments * per_segment == preset.clips
    events = EventVocabulary.draw(spec.num_events, spec.dim, spec.world_seed, spec.timeline_terms)
    dataset = SyntheticDataset(spec, events)

    order = [t for t in TEMPLATES for _ in range(spec.counts()[t])]
    make_rng(derive_seed(spec.seed, "template-order")).shuffle(order)
    builders = {"plain": _plain, "ordinal": _ordinal, "relational": _relational}
    for idx, template in enumerate(order):
        rng = make_rng(derive_seed(spec.seed, "sample", idx))
        seq, target, k, other = builders[template](rng, spec, segments)
        s, e = _ground_truth(seq, template, target, k, other)
        video = SyntheticVideo(f"v{idx:05d}", seq, per_segment, duration / segments)
        text = _render(events.tokens, template, target, k, other)
        query = SyntheticQuery(template, text, (s * video.segment_seconds, e * video.segment_seconds))
        dataset.videos.append(video)
        dataset.queries.append(query)
        dataset.features[video.video_id] = ClipFeatures(
            video.video_id, clip_features(video, events, spec, rng), duration / preset.clips)
    return dataset


def oracle_solve(video: SyntheticVideo, query_text: str, tokens: Sequence[str]) -> Tuple[float, float]:
    """Resolve a rendered query by scanning the segment labels directly."""
    words = split_words(query_text)
    classes = {tok: i for i, tok in enumerate(tokens)}
    seg = video.segment_seconds
    occurrences: Dict[int, List[Tuple[int, int]]] = {}
    start = 0
    for i in range(1, len(video.events) + 1):
        if i == len(video.events) or video.events[i] != video.events[start]:
            occurrences.setdefault(video.events[start], []).append((start, i))
            start = i
    try:
        if len(words) == 1:
            found = occurrences[classes[words[0]]]
            if len(found) != 1:
                raise ValueError("plain query with repeated event")
            a, b = found[0]
        elif len(words) == 4 and words[1] == "the" and words[3] == "time":
            a, b = occurrences[classes[words[0]]][ORDINALS.index(words[2])]
        elif len(words) == 3 and words[1] == "after":
            first_b_end = occurrences[classes[words[2]]][0][1]
            a, b = next(r for r in occurrences[classes[words[0]]] if r[0] >= first_b_end)
        else:
            raise ValueError("unrecognised template")
    except (KeyError, IndexError, StopIteration, ValueError) as exc:
        raise ConfigurationError(f"query {query_text!r} cannot be resolved on "
                                 f"{video.video_id}: {exc}") from None
    return (a * seg, b * seg)


def write_dataset(dataset: SyntheticDataset, out_dir, run_config: Optional[dict] = None) -> dict:
    """Write features, annotations, vocabulary and a manifest under ``out_dir``."""
    out = Path(out_dir)
    files = []
    for video in dataset.videos:
        write_features(out / "features" / f"{video.video_id}.json", dataset.features[video.video_id])
        files += [f"features/{video.video_id}.json", f"features/{video.video_id}.bin"]
    write_annotations(out / "annotations.jsonl", dataset.samples)
    vocab_path = out / "vocab.txt"
    vocab_path.parent.mkdir(parents=True, exist_ok=True)
    dataset.vocabulary.save(vocab_path)
    manifest = {
        "generation": dataset.spec.to_dict(),
        "run_config": run_config or {},
        "files": ["annotations.jsonl", "vocab.txt"] + files,
        "event_tokens": dataset.events.tokens,
        "videos": {v.video_id: {"events": v.events, "segment_seconds": v.segment_seconds,
                                "clips_per_segment": v.clips_per_segment}
                   for v in dataset.videos},
    }
    dump_json(out / "manifest.json", manifest)
    return manifest
