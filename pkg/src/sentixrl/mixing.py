"""Corpus mixing for class-balance experiments.

Two strategies over pooled source corpora that share one label domain:
uniform random sampling, and equal-category sampling that takes the same
number of utterances from every class. Sampling is at utterance
granularity; every sampled utterance carries its original conversation
prefix as context (context turns lose their gold labels so only sampled
targets count as examples).

Randomness comes from the Mersenne Twister (`random.Random`) consuming its
`random()` stream through a partial Fisher-Yates shuffle, which keeps the
sample for a given seed stable across platforms and Python versions.
"""

from __future__ import annotations

import random
import warnings
from dataclasses import dataclass
from enum import Enum

from .corpus import Conversation, Corpus, Utterance
from .errors import SentixrlError
from .labels import LabelDomain


class Strategy(str, Enum):
    RANDOM = "random"
    EQUAL_CATEGORY = "equal"


class InsufficientData(SentixrlError):
    """The pool cannot satisfy the requested sample."""


class DuplicateUtterance(SentixrlError):
    """Two pooled utterances share (corpus name, conversation id, turn index)."""


class NoLabels(SentixrlError):
    """A histogram was requested over a corpus with no labeled utterances."""


@dataclass(frozen=True)
class MixSpec:
    strategy: Strategy
    target_size: int
    seed: int
    sources: tuple[Corpus, ...]

    def __post_init__(self) -> None:
        if self.target_size < 1:
            raise ValueError("target_size must be >= 1")
        if not self.sources:
            raise ValueError("at least one source corpus is required")
        domains = {src.domain.labels if src.domain else None for src in self.sources}
        if None in domains or len(domains) != 1:
            raise ValueError("all sources must share one label domain")

    @property
    def domain(self) -> LabelDomain:
        assert self.sources[0].domain is not None
        return self.sources[0].domain


@dataclass(frozen=True)
class _PoolItem:
    source: str
    conversation: Conversation
    utterance: Utterance

    @property
    def key(self) -> tuple[str, str, int]:
        return (self.source, self.conversation.id, self.utterance.turn_index)


def _pool(sources: tuple[Corpus, ...]) -> list[_PoolItem]:
    items: list[_PoolItem] = []
    seen: set[tuple[str, str, int]] = set()
    for src in sources:
        for conv, utt in src.labeled():
            item = _PoolItem(source=src.name, conversation=conv, utterance=utt)
            if item.key in seen:
                raise DuplicateUtterance(f"duplicate pooled utterance {item.key}")
            seen.add(item.key)
            items.append(item)
    return items


def _sample(items: list[_PoolItem], k: int, rng: random.Random) -> list[_PoolItem]:
    # Partial Fisher-Yates driven by rng.random() only; rng.random() < 1
    # strictly, so the index below never reaches n - i.
    n = len(items)
    idx = list(range(n))
    for i in range(k):
        j = i + int(rng.random() * (n - i))
        idx[i], idx[j] = idx[j], idx[i]
    return [items[idx[i]] for i in range(k)]


def _context_conversation(item: _PoolItem) -> Conversation:
    """One sampled utterance plus its original conversation prefix."""
    conv_id = f"{item.source}/{item.conversation.id}/{item.utterance.turn_index}"
    turns: list[Utterance] = []
    for i, utt in enumerate(item.conversation.utterances[: item.utterance.turn_index]):
        turns.append(
            Utterance(
                conversation_id=conv_id,
                turn_index=i,
                speaker=utt.speaker,
                text=utt.text,
                gold_label=None,
            )
        )
    target = item.utterance
    turns.append(
        Utterance(
            conversation_id=conv_id,
            turn_index=len(turns),
            speaker=target.speaker,
            text=target.text,
            gold_label=target.gold_label,
            deduction=target.deduction,
        )
    )
    return Conversation(id=conv_id, utterances=tuple(turns))


def _build(items: list[_PoolItem], spec: MixSpec) -> Corpus:
    return Corpus(
        name=f"mix-{spec.strategy.value}-{spec.seed}",
        conversations=tuple(_context_conversation(item) for item in items),
        domain=spec.domain,
    )


def random_mix(spec: MixSpec) -> Corpus:
    """Uniform sample without replacement from the pooled labeled utterances."""
    if spec.strategy is not Strategy.RANDOM:
        raise ValueError("spec.strategy must be RANDOM")
    pool = _pool(spec.sources)
    if spec.target_size > len(pool):
        raise InsufficientData(
            f"requested {spec.target_size} utterances but pool has {len(pool)}"
        )
    rng = random.Random(spec.seed)
    return _build(_sample(pool, spec.target_size, rng), spec)


def equal_mix(spec: MixSpec) -> Corpus:
    """Sample the same number of utterances from every class.

    The per-class quota is floor(target_size / K), lowered to the scarcest
    class's count when that is smaller (with a warning, since the target
    size is then unreachable). Classes are drawn in domain order from one
    seeded stream.
    """
    if spec.strategy is not Strategy.EQUAL_CATEGORY:
        raise ValueError("spec.strategy must be EQUAL_CATEGORY")
    pool = _pool(spec.sources)
    by_class: dict[str, list[_PoolItem]] = {label: [] for label in spec.domain}
    for item in pool:
        by_class[item.utterance.gold_label].append(item)

    empty = [label for label, items in by_class.items() if not items]
    if empty:
        raise InsufficientData(f"classes with no labeled utterances: {empty}")

    k = len(spec.domain)
    quota = spec.target_size // k
    if quota == 0:
        raise InsufficientData(
            f"target_size {spec.target_size} is below the class count {k}"
        )
    scarcest = min(len(items) for items in by_class.values())
    if scarcest < quota:
        warnings.warn(
            f"target size {spec.target_size} unreachable: scarcest class has "
            f"{scarcest} utterances; sampling {scarcest} per class",
            RuntimeWarning,
            stacklevel=2,
        )
        quota = scarcest

    rng = random.Random(spec.seed)
    chosen: list[_PoolItem] = []
    for label in spec.domain:
        chosen.extend(_sample(by_class[label], quota, rng))
    return _build(chosen, spec)


@dataclass(frozen=True)
class CategoryHistogram:
    """Per-label counts and proportions over a corpus's labeled utterances."""

    domain: LabelDomain
    counts: dict[str, int]

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    @property
    def proportions(self) -> dict[str, float]:
        total = self.total
        return {label: count / total for label, count in self.counts.items()}

    def to_dict(self) -> dict:
        return {
            "total": self.total,
            "counts": dict(self.counts),
            "proportions": self.proportions,
        }


def histogram(corpus: Corpus, domain: LabelDomain | None = None) -> CategoryHistogram:
    """Exact per-label counts, zero-filled over the whole domain."""
    domain = domain or corpus.domain
    if domain is None:
        raise ValueError("corpus has no label domain; pass one explicitly")
    counts = {label: 0 for label in domain}
    found = False
    for _, utt in corpus.labeled():
        if utt.gold_label not in counts:
            raise ValueError(
                f"label {utt.gold_label!r} not in domain {domain.name!r}"
            )
        counts[utt.gold_label] += 1
        found = True
    if not found:
        raise NoLabels(f"corpus {corpus.name!r} has no labeled utterances")
    return CategoryHistogram(domain=domain, counts=counts)
