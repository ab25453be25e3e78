"""Canonical emotion label domains and cross-corpus label unification.

A LabelDomain is the closed, ordered set of labels a model is allowed to
emit. Heterogeneous source corpora are brought into one domain through a
MappingConfig (explicit alias table, no fuzzy matching), and fine-grained
emotions can be coarsened to sentiment polarity through a SentimentMap.
"""

from __future__ import annotations

import sys
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import SentixrlError

POSITIVE = "positive"
NEGATIVE = "negative"
NEUTRAL = "neutral"
POLARITIES = (POSITIVE, NEGATIVE, NEUTRAL)


class EmptyDomain(SentixrlError):
    """Fewer than two distinct labels after normalization."""


class InvalidLabel(SentixrlError):
    """A label token is empty, contains whitespace, or is not lowercase."""


class UnmappedLabel(SentixrlError):
    """A source label has no alias and is not a member of the target domain."""


class AmbiguousLabel(SentixrlError):
    """The label is flagged context-dependent and must not be coarsened."""


class MappingConfigError(SentixrlError):
    """A mapping configuration file is structurally invalid."""


def fold(text: str) -> str:
    """Normalize a raw label token: trim, then Unicode default case-fold."""
    return text.strip().casefold()


def _check_label(name: str) -> str:
    if not name:
        raise InvalidLabel("label is empty")
    if any(ch.isspace() for ch in name):
        raise InvalidLabel(f"label contains whitespace: {name!r}")
    if name != name.casefold():
        raise InvalidLabel(f"label is not lowercase: {name!r}")
    return name


@dataclass(frozen=True)
class LabelDomain:
    """Closed, ordered set of canonical emotion labels.

    Order is significant: it fixes confusion-matrix axes and the label
    enumeration order in rendered prompts.
    """

    name: str
    labels: tuple[str, ...]

    def __post_init__(self) -> None:
        for label in self.labels:
            _check_label(label)
        if len(set(self.labels)) != len(self.labels):
            raise InvalidLabel(f"duplicate labels in domain {self.name!r}")
        if len(self.labels) < 2:
            raise EmptyDomain(f"domain {self.name!r} needs at least 2 labels")

    def __contains__(self, label: object) -> bool:
        return label in self.labels

    def __iter__(self):
        return iter(self.labels)

    def __len__(self) -> int:
        return len(self.labels)

    def index(self, label: str) -> int:
        return self.labels.index(label)


def build_domain(labels: Iterable[str], name: str = "custom") -> LabelDomain:
    """Build a LabelDomain from raw label text.

    Tokens are trimmed and case-folded; duplicates collapse to their first
    occurrence, preserving order. Raises EmptyDomain when fewer than two
    distinct labels remain, InvalidLabel for whitespace-embedded tokens.
    """
    seen: list[str] = []
    for raw in labels:
        token = fold(raw)
        if not token:
            continue
        _check_label(token)
        if token not in seen:
            seen.append(token)
    if len(seen) < 2:
        raise EmptyDomain(f"need at least 2 distinct labels, got {seen!r}")
    return LabelDomain(name=name, labels=tuple(seen))


@dataclass(frozen=True)
class SentimentMap:
    """Coarse polarity per canonical label, with explicit exclusions.

    Labels in `excluded` are context-dependent (their polarity depends on
    the utterance text, not the label alone) and are never coarsened.
    """

    polarity: Mapping[str, str]
    excluded: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        for label, pol in self.polarity.items():
            _check_label(label)
            if pol not in POLARITIES:
                raise MappingConfigError(
                    f"polarity for {label!r} must be one of {POLARITIES}, got {pol!r}"
                )
        overlap = set(self.polarity) & self.excluded
        if overlap:
            raise MappingConfigError(
                f"labels both mapped and excluded: {sorted(overlap)}"
            )


@dataclass(frozen=True)
class MappingConfig:
    """Rules for folding heterogeneous source labels into one domain.

    `aliases` maps case-folded source tokens to canonical labels of
    `target`. Alias targets must be fixed points (an alias may not chain
    into another alias), which makes map_label idempotent by construction.
    """

    target: LabelDomain
    aliases: Mapping[str, str] = field(default_factory=dict)
    ambiguous: frozenset[str] = frozenset()
    sentiment: SentimentMap | None = None

    def __post_init__(self) -> None:
        for key, value in self.aliases.items():
            if key != fold(key):
                raise MappingConfigError(f"alias key not case-folded: {key!r}")
            if value not in self.target:
                raise MappingConfigError(
                    f"alias target {value!r} not in domain {self.target.name!r}"
                )
            chained = self.aliases.get(value, value)
            if chained != value:
                raise MappingConfigError(
                    f"alias chain {key!r} -> {value!r} -> {chained!r} breaks idempotence"
                )


def map_label(raw: str, cfg: MappingConfig) -> str:
    """Map one source label into the target domain.

    Aliases take precedence; otherwise a case-folded token already in the
    domain passes through. Anything else raises UnmappedLabel.
    """
    token = fold(raw)
    if token in cfg.aliases:
        return cfg.aliases[token]
    if token in cfg.target:
        return token
    raise UnmappedLabel(f"no mapping for label {raw!r}")


def coarsen_to_sentiment(label: str, sm: SentimentMap) -> str:
    """Return the configured polarity for a canonical label.

    Raises AmbiguousLabel for labels on the exclusion list (never guesses a
    polarity for them) and UnmappedLabel for labels the map does not cover.
    """
    if label in sm.excluded:
        raise AmbiguousLabel(f"label {label!r} is context-dependent; not coarsened")
    if label in sm.polarity:
        return sm.polarity[label]
    raise UnmappedLabel(f"no polarity configured for label {label!r}")


@dataclass(frozen=True)
class MappingReport:
    """Outcome of applying a MappingConfig to an observed label multiset."""

    unmapped: dict[str, int]
    unused_aliases: tuple[str, ...]
    counts: dict[str, int]

    @property
    def ok(self) -> bool:
        return not self.unmapped

    def total_mapped(self) -> int:
        return sum(self.counts.values())


def validate_mapping(
    cfg: MappingConfig, observed: Mapping[str, int] | Iterable[str]
) -> MappingReport:
    """Dry-run a mapping over observed source labels.

    The report carries problems instead of raising: unmapped observed
    labels with their counts, aliases that never fired, and per-canonical
    counts after mapping (zero-filled over the domain).
    """
    if not isinstance(observed, Mapping):
        tally: dict[str, int] = {}
        for raw in observed:
            tally[raw] = tally.get(raw, 0) + 1
        observed = tally

    counts = {label: 0 for label in cfg.target}
    unmapped: dict[str, int] = {}
    used: set[str] = set()
    for raw, n in observed.items():
        token = fold(raw)
        if token in cfg.aliases:
            used.add(token)
        try:
            canonical = map_label(raw, cfg)
        except UnmappedLabel:
            unmapped[token] = unmapped.get(token, 0) + n
            continue
        counts[canonical] += n

    unused = tuple(sorted(set(cfg.aliases) - used))
    return MappingReport(
        unmapped=dict(sorted(unmapped.items())), unused_aliases=unused, counts=counts
    )


# ---------------------------------------------------------------------------
# Configuration files
#
# TOML with four sections: `domain` (ordered label list), `aliases`
# (source -> canonical pairs), `ambiguous` (context-dependent labels), and
# `sentiment` (label -> polarity pairs). Unknown keys are rejected.
# ---------------------------------------------------------------------------

_CONFIG_KEYS = {"name", "domain", "aliases", "ambiguous", "sentiment"}


def parse_mapping_config(data: Mapping[str, object], source: str = "<config>") -> MappingConfig:
    unknown = set(data) - _CONFIG_KEYS
    if unknown:
        raise MappingConfigError(f"{source}: unknown keys {sorted(unknown)}")
    if "domain" not in data:
        raise MappingConfigError(f"{source}: missing required key 'domain'")

    raw_domain = data["domain"]
    if not isinstance(raw_domain, list) or not all(isinstance(x, str) for x in raw_domain):
        raise MappingConfigError(f"{source}: 'domain' must be a list of strings")
    name = data.get("name", Path(source).stem)
    if not isinstance(name, str):
        raise MappingConfigError(f"{source}: 'name' must be a string")
    try:
        domain = build_domain(raw_domain, name=name)
    except SentixrlError as exc:
        raise MappingConfigError(f"{source}: invalid domain: {exc}") from exc

    raw_aliases = data.get("aliases", {})
    if not isinstance(raw_aliases, Mapping):
        raise MappingConfigError(f"{source}: 'aliases' must be a table")
    aliases: dict[str, str] = {}
    for key, value in raw_aliases.items():
        if not isinstance(value, str):
            raise MappingConfigError(f"{source}: alias {key!r} must map to a string")
        folded = fold(key)
        if folded in aliases:
            raise MappingConfigError(
                f"{source}: alias keys collide after case-folding: {key!r}"
            )
        aliases[folded] = fold(value)

    raw_ambiguous = data.get("ambiguous", [])
    if not isinstance(raw_ambiguous, list) or not all(
        isinstance(x, str) for x in raw_ambiguous
    ):
        raise MappingConfigError(f"{source}: 'ambiguous' must be a list of strings")
    ambiguous = frozenset(fold(x) for x in raw_ambiguous)

    sentiment = None
    if "sentiment" in data:
        raw_sent = data["sentiment"]
        if not isinstance(raw_sent, Mapping):
            raise MappingConfigError(f"{source}: 'sentiment' must be a table")
        polarity = {}
        for key, value in raw_sent.items():
            if not isinstance(value, str):
                raise MappingConfigError(f"{source}: polarity for {key!r} must be a string")
            polarity[fold(key)] = fold(value)
        try:
            sentiment = SentimentMap(polarity=polarity, excluded=ambiguous)
        except SentixrlError as exc:
            raise MappingConfigError(f"{source}: {exc}") from exc
        uncovered = [
            label
            for label in domain
            if label not in sentiment.polarity and label not in sentiment.excluded
        ]
        if uncovered:
            raise MappingConfigError(
                f"{source}: sentiment map must cover the domain or list exclusions; "
                f"missing {uncovered}"
            )

    try:
        return MappingConfig(
            target=domain, aliases=aliases, ambiguous=ambiguous, sentiment=sentiment
        )
    except SentixrlError as exc:
        raise MappingConfigError(f"{source}: {exc}") from exc


def load_mapping_config(path: str | Path) -> MappingConfig:
    """Load a mapping configuration from a TOML file."""
    path = Path(path)
    try:
        with path.open("rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError:
        raise MappingConfigError(f"mapping config not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise MappingConfigError(f"{path}: {exc}") from exc
    return parse_mapping_config(data, source=str(path))


def default_mapping_config() -> MappingConfig:
    """The packaged unified mapping config (8-label domain)."""
    ref = resources.files("sentixrl").joinpath("configs/unified.toml")
    data = tomllib.loads(ref.read_text(encoding="utf-8"))
    return parse_mapping_config(data, source="unified.toml")


def unified_domain() -> LabelDomain:
    """The default 8-label unified emotion domain."""
    return default_mapping_config().target


# Label inventories of the public source corpora this tool ships unification
# defaults for, verbatim from each corpus's own annotation scheme. Reference
# data for tests and docs; the union maps exactly onto the unified domain.
SOURCE_CORPUS_LABELS: dict[str, tuple[str, ...]] = {
    "ocemotion": ("sadness", "happiness", "disgust", "anger", "like", "surprise", "fear"),
    "chinese_caption_sentiment": (
        "neutral", "happiness", "sadness", "disgust", "anger", "surprise", "fear",
    ),
    "smp2020_wect": ("neutral", "happy", "angry", "sad", "fear", "surprise"),
    "smp2020_ewect_covid": ("neutral", "happy", "angry", "sad", "fear", "surprise"),
    "emotion_corpus_microblog": (
        "happiness", "sadness", "disgust", "like", "fear", "surprise", "anger",
    ),
    "nlpcc2014_whole_sentence": (
        "happiness", "sadness", "disgust", "like", "fear", "surprise", "anger",
    ),
    "nlpcc2014": ("happiness", "sadness", "disgust", "like", "fear", "surprise", "anger"),
    "nlpcc2013_whole_sentence": (
        "happiness", "sadness", "disgust", "like", "fear", "surprise", "anger",
    ),
    "nlpcc2013": ("happiness", "sadness", "disgust", "like", "fear", "surprise", "anger"),
}
