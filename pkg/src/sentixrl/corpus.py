"""Conversation corpora: parsing, serialization, and history windows.

Corpus files are UTF-8 JSON Lines, one utterance per line:

    {"conversation_id": "c1", "turn_index": 0, "speaker": "A",
     "text": "hello", "label": "happiness"}

`label` may be omitted or null for unlabeled turns. An optional `deduction`
object ({"scene": ..., "persons": [...], "relations": [...]}) carries
precomputed context notes. Turn indices are normalized to contiguous
0-based order per conversation; source files may skip indices.
"""

from __future__ import annotations

import io
import json
from collections.abc import Iterable
from dataclasses import dataclass
from pathlib import Path

from .errors import SentixrlError
from .labels import LabelDomain, fold

DEDUCTION_FIELD_CAP = 500
DEDUCTION_LIST_CAP = 20


class ParseError(SentixrlError):
    """A corpus record is malformed. Carries the 1-based line number."""

    def __init__(self, line: int, cause: str):
        super().__init__(f"line {line}: {cause}")
        self.line = line
        self.cause = cause


class LabelError(SentixrlError):
    """A gold label is not a member of the corpus domain."""


class DuplicateTurn(SentixrlError):
    """Two records share the same (conversation_id, turn_index)."""


@dataclass(frozen=True)
class EmotionalDeduction:
    """Inferred context notes for one utterance: scene, persons, relations.

    All fields may be empty. `warning` is set when the notes came back
    unparseable and were degraded to empty rather than raising.
    """

    scene: str = ""
    persons: tuple[str, ...] = ()
    relations: tuple[str, ...] = ()
    warning: bool = False

    def __post_init__(self) -> None:
        if len(self.scene) > DEDUCTION_FIELD_CAP:
            raise ValueError("deduction scene exceeds length cap")
        for seq in (self.persons, self.relations):
            if len(seq) > DEDUCTION_LIST_CAP:
                raise ValueError("deduction list exceeds item cap")
            if any(len(item) > DEDUCTION_FIELD_CAP for item in seq):
                raise ValueError("deduction list item exceeds length cap")

    @property
    def empty(self) -> bool:
        return not (self.scene or self.persons or self.relations)


@dataclass(frozen=True)
class Utterance:
    conversation_id: str
    turn_index: int
    speaker: str
    text: str
    gold_label: str | None = None
    deduction: EmotionalDeduction | None = None

    def __post_init__(self) -> None:
        if self.turn_index < 0:
            raise ValueError("turn_index must be non-negative")
        if not self.text.strip():
            raise ValueError("utterance text must be non-empty")

    @property
    def uid(self) -> str:
        """Stable utterance id used to tag backend calls and traces."""
        return f"{self.conversation_id}:{self.turn_index}"


@dataclass(frozen=True)
class Conversation:
    id: str
    utterances: tuple[Utterance, ...]

    def __post_init__(self) -> None:
        for i, utt in enumerate(self.utterances):
            if utt.turn_index != i:
                raise ValueError(
                    f"conversation {self.id!r}: turn indices must be contiguous from 0"
                )

    def __len__(self) -> int:
        return len(self.utterances)

    def __iter__(self):
        return iter(self.utterances)


@dataclass(frozen=True)
class HistoryWindow:
    """The turns immediately preceding a target utterance, oldest first."""

    turns: tuple[tuple[str, str], ...]
    m: int


@dataclass(frozen=True)
class Corpus:
    name: str
    conversations: tuple[Conversation, ...]
    domain: LabelDomain | None = None

    def __len__(self) -> int:
        return len(self.conversations)

    def __iter__(self):
        return iter(self.conversations)

    def utterances(self) -> Iterable[Utterance]:
        for conv in self.conversations:
            yield from conv.utterances

    def labeled(self) -> Iterable[tuple[Conversation, Utterance]]:
        for conv in self.conversations:
            for utt in conv.utterances:
                if utt.gold_label is not None:
                    yield conv, utt


_RECORD_KEYS = {"conversation_id", "turn_index", "speaker", "text", "label", "deduction"}


def _parse_deduction(value: object, line: int) -> EmotionalDeduction:
    if not isinstance(value, dict):
        raise ParseError(line, "'deduction' must be an object")
    unknown = set(value) - {"scene", "persons", "relations"}
    if unknown:
        raise ParseError(line, f"unknown deduction keys {sorted(unknown)}")
    scene = value.get("scene", "")
    persons = value.get("persons", [])
    relations = value.get("relations", [])
    if not isinstance(scene, str):
        raise ParseError(line, "'deduction.scene' must be a string")
    for key, seq in (("persons", persons), ("relations", relations)):
        if not isinstance(seq, list) or not all(isinstance(x, str) for x in seq):
            raise ParseError(line, f"'deduction.{key}' must be a list of strings")
    try:
        return EmotionalDeduction(
            scene=scene, persons=tuple(persons), relations=tuple(relations)
        )
    except ValueError as exc:
        raise ParseError(line, str(exc)) from exc


def _parse_record(line_no: int, line: str, domain: LabelDomain | None) -> dict:
    try:
        record = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ParseError(line_no, f"invalid JSON: {exc.msg}") from exc
    if not isinstance(record, dict):
        raise ParseError(line_no, "record must be a JSON object")
    unknown = set(record) - _RECORD_KEYS
    if unknown:
        raise ParseError(line_no, f"unknown keys {sorted(unknown)}")
    missing = {"conversation_id", "turn_index", "speaker", "text"} - set(record)
    if missing:
        raise ParseError(line_no, f"missing keys {sorted(missing)}")

    conv_id = record["conversation_id"]
    turn = record["turn_index"]
    speaker = record["speaker"]
    text = record["text"]
    if not isinstance(conv_id, str) or not conv_id:
        raise ParseError(line_no, "'conversation_id' must be a non-empty string")
    if not isinstance(turn, int) or isinstance(turn, bool) or turn < 0:
        raise ParseError(line_no, "'turn_index' must be a non-negative integer")
    if not isinstance(speaker, str) or not speaker.strip():
        raise ParseError(line_no, "'speaker' must be a non-empty string")
    if not isinstance(text, str) or not text.strip():
        raise ParseError(line_no, "'text' must be a non-empty string")

    label = record.get("label")
    if label is not None:
        if not isinstance(label, str):
            raise ParseError(line_no, "'label' must be a string or null")
        label = fold(label)
        if domain is not None and label not in domain:
            raise LabelError(
                f"line {line_no}: gold label {label!r} not in domain {domain.name!r}"
            )

    deduction = None
    if record.get("deduction") is not None:
        deduction = _parse_deduction(record["deduction"], line_no)

    return {
        "conversation_id": conv_id,
        "turn_index": turn,
        "speaker": speaker,
        "text": text,
        "label": label,
        "deduction": deduction,
    }


def parse_corpus(
    source: bytes | str | io.IOBase | Iterable[str],
    domain: LabelDomain | None = None,
    name: str = "corpus",
) -> Corpus:
    """Parse a JSON Lines corpus.

    Accepts raw bytes/text, an open file object, or an iterable of lines.
    Records are grouped by conversation_id (first-appearance order kept),
    sorted by turn_index, and re-indexed to contiguous 0-based turns. Gold
    labels are validated against `domain` when one is given.
    """
    if isinstance(source, bytes):
        lines: Iterable[str] = source.decode("utf-8").splitlines()
    elif isinstance(source, str):
        lines = source.splitlines()
    elif isinstance(source, io.IOBase):
        raw = source.read()
        if isinstance(raw, bytes):
            raw = raw.decode("utf-8")
        lines = raw.splitlines()
    else:
        lines = source

    by_conv: dict[str, dict[int, dict]] = {}
    for line_no, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        record = _parse_record(line_no, line, domain)
        conv_id = record["conversation_id"]
        turns = by_conv.setdefault(conv_id, {})
        if record["turn_index"] in turns:
            raise DuplicateTurn(
                f"line {line_no}: duplicate turn ({conv_id!r}, {record['turn_index']})"
            )
        turns[record["turn_index"]] = record

    conversations = []
    for conv_id, turns in by_conv.items():
        utterances = tuple(
            Utterance(
                conversation_id=conv_id,
                turn_index=new_index,
                speaker=rec["speaker"],
                text=rec["text"],
                gold_label=rec["label"],
                deduction=rec["deduction"],
            )
            for new_index, (_, rec) in enumerate(sorted(turns.items()))
        )
        conversations.append(Conversation(id=conv_id, utterances=utterances))

    return Corpus(name=name, conversations=tuple(conversations), domain=domain)


def load_corpus(
    path: str | Path, domain: LabelDomain | None = None, name: str | None = None
) -> Corpus:
    path = Path(path)
    with path.open("rb") as fh:
        return parse_corpus(fh, domain=domain, name=name or path.stem)


def serialize_corpus(corpus: Corpus) -> str:
    """Render a corpus back to its JSON Lines form (deterministic bytes)."""
    out = []
    for utt in corpus.utterances():
        record: dict[str, object] = {
            "conversation_id": utt.conversation_id,
            "turn_index": utt.turn_index,
            "speaker": utt.speaker,
            "text": utt.text,
        }
        if utt.gold_label is not None:
            record["label"] = utt.gold_label
        if utt.deduction is not None:
            record["deduction"] = {
                "scene": utt.deduction.scene,
                "persons": list(utt.deduction.persons),
                "relations": list(utt.deduction.relations),
            }
        out.append(json.dumps(record, ensure_ascii=False, sort_keys=True))
    return "\n".join(out) + ("\n" if out else "")


def save_corpus(corpus: Corpus, path: str | Path) -> None:
    Path(path).write_text(serialize_corpus(corpus), encoding="utf-8")


def history_window(conv: Conversation, i: int, m: int) -> HistoryWindow:
    """The up-to-m utterances immediately preceding turn i, oldest first.

    Clips at the conversation start; never includes turn i itself.
    """
    if m < 0:
        raise ValueError("window size must be non-negative")
    if not 0 <= i < len(conv.utterances):
        raise IndexError(f"turn index {i} out of range for conversation {conv.id!r}")
    start = max(0, i - m)
    turns = tuple((u.speaker, u.text) for u in conv.utterances[start:i])
    return HistoryWindow(turns=turns, m=m)


CORPUS_SCHEMA_HELP = """\
Corpus file: UTF-8 JSON Lines, one utterance per line.

Required fields
  conversation_id  string   groups turns into one dialogue
  turn_index       integer  >= 0; per-conversation order (gaps allowed,
                            normalized to contiguous 0-based on load)
  speaker          string   non-empty speaker name or role
  text             string   non-empty utterance text

Optional fields
  label            string or null   gold emotion label; must belong to the
                                    active label domain when one is set
  deduction        object or null   precomputed context notes:
                                    {"scene": str, "persons": [str, ...],
                                     "relations": [str, ...]}

Example
  {"conversation_id": "c1", "turn_index": 0, "speaker": "A", "text": "hey"}
  {"conversation_id": "c1", "turn_index": 1, "speaker": "B", "text": "what now", "label": "anger"}
"""
