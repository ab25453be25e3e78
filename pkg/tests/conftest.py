import json
from pathlib import Path

import pytest

from sentixrl.corpus import Corpus, parse_corpus
from sentixrl.labels import LabelDomain, build_domain, unified_domain

DATA_DIR = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def unified() -> LabelDomain:
    return unified_domain()


@pytest.fixture
def small_domain() -> LabelDomain:
    return build_domain(["neutral", "happiness", "sadness"], name="small")


def make_corpus_text(rows: list[dict]) -> str:
    return "\n".join(json.dumps(row, ensure_ascii=False) for row in rows) + "\n"


def make_corpus(rows: list[dict], domain: LabelDomain | None = None, name: str = "test") -> Corpus:
    return parse_corpus(make_corpus_text(rows), domain=domain, name=name)


def utt_row(conv: str, turn: int, speaker: str = "A", text: str | None = None,
            label: str | None = None) -> dict:
    row = {
        "conversation_id": conv,
        "turn_index": turn,
        "speaker": speaker,
        "text": text if text is not None else f"utterance {turn} of {conv}",
    }
    if label is not None:
        row["label"] = label
    return row
