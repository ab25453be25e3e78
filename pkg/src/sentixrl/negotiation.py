"""The self-negotiation decision loop and the corpus evaluation driver.

One model alternates between two roles over at most `max_rounds` rounds:
the generator proposes an emotion label with reasoning, the discriminator
accepts or rejects the proposal. Two termination policies are supported:

* discriminator approval — a round ends the loop when the discriminator
  replies ACCEPT to the generator's labeled proposal;
* consecutive agreement — the loop ends when the generator produces the
  same label in two consecutive rounds (no discriminator calls).

When the round budget is exhausted without a decision, the result is an
outlier: a structural abstention, never a default label.
"""

from __future__ import annotations

import json
import logging
import math
import re
from collections.abc import Iterable
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .backend import Backend, BackendError, BackendRequest, BackendResponse, Message, extract_label
from .corpus import Conversation, Corpus, EmotionalDeduction, HistoryWindow, Utterance, history_window
from .errors import SentixrlError
from .labels import LabelDomain
from .prompts import (
    DEFAULT_INSTRUCTION,
    Instruction,
    TemplateSet,
    render_discriminator_prompt,
    render_generator_prompt,
    request_deduction,
)

logger = logging.getLogger(__name__)

TRACE_SCHEMA = "sentixrl.trace.v1"

DEFAULT_MAX_ROUNDS = 3
DEFAULT_HISTORY_WINDOW = 5


class Policy(str, Enum):
    DISCRIMINATOR_APPROVAL = "discriminator_approval"
    CONSECUTIVE_AGREEMENT = "consecutive_agreement"


class Verdict(str, Enum):
    ACCEPT = "accept"
    REJECT = "reject"
    NOT_EVALUATED = "not_evaluated"


class Outcome(str, Enum):
    ACCEPTED = "accepted"
    OUTLIER = "outlier"


class EmptyCorpus(SentixrlError):
    """The corpus has no conversations to evaluate."""


class EvaluationError(BackendError):
    """Every utterance in the run failed at the backend."""


@dataclass(frozen=True)
class NegotiationConfig:
    """Settings for one negotiation run."""

    domain: LabelDomain
    max_rounds: int = DEFAULT_MAX_ROUNDS
    policy: Policy = Policy.DISCRIMINATOR_APPROVAL
    templates: TemplateSet = field(default_factory=TemplateSet.default)
    instruction: Instruction = DEFAULT_INSTRUCTION
    deduction_enabled: bool = True
    temperature: float = 0.0
    max_tokens: int = 256
    extraction_strategy: str = "last"
    substring_labels: bool = False

    def __post_init__(self) -> None:
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be >= 1")


@dataclass(frozen=True)
class RoundRecord:
    n: int
    generator_text: str
    generator_label: str | None
    discriminator_text: str
    verdict: Verdict


@dataclass(frozen=True)
class Judgment:
    outcome: Outcome
    label: str | None
    rounds_used: int
    total_latency: float

    def __post_init__(self) -> None:
        if (self.outcome is Outcome.ACCEPTED) != (self.label is not None):
            raise ValueError("accepted judgments carry a label; outliers do not")

    @property
    def accepted(self) -> bool:
        return self.outcome is Outcome.ACCEPTED


@dataclass(frozen=True)
class NegotiationTrace:
    conversation_id: str
    turn_index: int
    gold_label: str | None
    rounds: tuple[RoundRecord, ...]
    judgment: Judgment
    deduction: EmotionalDeduction | None = None

    def to_dict(self) -> dict:
        ded = None
        if self.deduction is not None:
            ded = {
                "scene": self.deduction.scene,
                "persons": list(self.deduction.persons),
                "relations": list(self.deduction.relations),
                "warning": self.deduction.warning,
            }
        return {
            "schema": TRACE_SCHEMA,
            "conversation_id": self.conversation_id,
            "turn_index": self.turn_index,
            "gold": self.gold_label,
            "deduction": ded,
            "rounds": [
                {
                    "n": r.n,
                    "generator_text": r.generator_text,
                    "generator_label": r.generator_label,
                    "discriminator_text": r.discriminator_text,
                    "verdict": r.verdict.value,
                }
                for r in self.rounds
            ],
            "judgment": {
                "outcome": self.judgment.outcome.value,
                "label": self.judgment.label,
                "rounds_used": self.judgment.rounds_used,
                "total_latency": self.judgment.total_latency,
            },
        }


_VERDICT_RE = re.compile(r"\b(accept|reject)\b", re.IGNORECASE)


def parse_verdict(text: str) -> Verdict:
    """First whole-word ACCEPT/REJECT wins; neither present means reject.

    Failing toward rejection costs extra rounds instead of risking a false
    acceptance.
    """
    m = _VERDICT_RE.search(text)
    if m is None:
        return Verdict.REJECT
    return Verdict.ACCEPT if m.group(1).lower() == "accept" else Verdict.REJECT


class _LatencyTally:
    """Per-utterance wrapper that sums backend-reported call latencies.

    Owned by a single worker; never shared between threads.
    """

    def __init__(self, backend: Backend):
        self._backend = backend
        self.total = 0.0

    def complete(self, req: BackendRequest) -> BackendResponse:
        resp = self._backend.complete(req)
        self.total += resp.latency
        return resp


def negotiate(
    utt: Utterance,
    ctx: HistoryWindow,
    ded: EmotionalDeduction | None,
    cfg: NegotiationConfig,
    backend: Backend,
) -> NegotiationTrace:
    """Run one negotiation for a single utterance.

    Rounds are strictly sequential. Under discriminator approval, a round
    whose generator output contains no domain label skips the discriminator
    entirely (verdict not_evaluated) and moves on. Backend errors propagate
    to the caller with no partial trace. The judgment's total_latency sums
    the backend-reported latency of this negotiation's own calls.
    """
    tally = _LatencyTally(backend)
    bundle = render_generator_prompt(
        cfg.instruction, ctx, cfg.domain, ded, utt.text, cfg.templates
    )
    rounds: list[RoundRecord] = []
    judgment: Judgment | None = None
    prev_label: str | None = None

    for n in range(1, cfg.max_rounds + 1):
        gen_resp = tally.complete(
            BackendRequest(
                messages=(Message("user", bundle.text),),
                tag=(utt.uid, n, "generator"),
                temperature=cfg.temperature,
                max_tokens=cfg.max_tokens,
            )
        )
        label = extract_label(
            gen_resp.content,
            cfg.domain,
            strategy=cfg.extraction_strategy,
            substring=cfg.substring_labels,
        ).label

        if cfg.policy is Policy.CONSECUTIVE_AGREEMENT:
            rounds.append(
                RoundRecord(n, gen_resp.content, label, "", Verdict.NOT_EVALUATED)
            )
            if label is not None and label == prev_label:
                judgment = Judgment(Outcome.ACCEPTED, label, n, tally.total)
                break
            prev_label = label
            continue

        if label is None:
            rounds.append(
                RoundRecord(n, gen_resp.content, None, "", Verdict.NOT_EVALUATED)
            )
            continue

        disc_bundle = render_discriminator_prompt(bundle, gen_resp.content, cfg.templates)
        disc_resp = tally.complete(
            BackendRequest(
                messages=(Message("user", disc_bundle.text),),
                tag=(utt.uid, n, "discriminator"),
                temperature=cfg.temperature,
                max_tokens=cfg.max_tokens,
            )
        )
        verdict = parse_verdict(disc_resp.content)
        rounds.append(RoundRecord(n, gen_resp.content, label, disc_resp.content, verdict))
        if verdict is Verdict.ACCEPT:
            judgment = Judgment(Outcome.ACCEPTED, label, n, tally.total)
            break

    if judgment is None:
        judgment = Judgment(Outcome.OUTLIER, None, len(rounds), tally.total)

    return NegotiationTrace(
        conversation_id=utt.conversation_id,
        turn_index=utt.turn_index,
        gold_label=utt.gold_label,
        rounds=tuple(rounds),
        judgment=judgment,
        deduction=ded,
    )


@dataclass(frozen=True)
class PredictionEntry:
    """Outcome for one labeled utterance: a trace, or a recorded failure."""

    conversation_id: str
    turn_index: int
    gold_label: str
    trace: NegotiationTrace | None
    error: str | None
    latency: float

    def to_dict(self) -> dict:
        if self.trace is not None:
            record = self.trace.to_dict()
            record["latency"] = self.latency
            return record
        return {
            "schema": TRACE_SCHEMA,
            "conversation_id": self.conversation_id,
            "turn_index": self.turn_index,
            "gold": self.gold_label,
            "error": self.error,
            "latency": self.latency,
        }


def _percentile(sorted_values: list[float], q: float) -> float:
    # Nearest-rank percentile over a non-empty sorted list.
    rank = max(1, math.ceil(q * len(sorted_values)))
    return sorted_values[rank - 1]


@dataclass(frozen=True)
class LatencySummary:
    count: int
    mean: float
    p50: float
    p95: float

    @classmethod
    def from_values(cls, values: Iterable[float]) -> "LatencySummary":
        ordered = sorted(values)
        if not ordered:
            return cls(count=0, mean=0.0, p50=0.0, p95=0.0)
        return cls(
            count=len(ordered),
            mean=sum(ordered) / len(ordered),
            p50=_percentile(ordered, 0.50),
            p95=_percentile(ordered, 0.95),
        )

    def to_dict(self) -> dict:
        return {"count": self.count, "mean": self.mean, "p50": self.p50, "p95": self.p95}


@dataclass(frozen=True)
class PredictionSet:
    """All per-utterance outcomes of one corpus evaluation, in corpus order."""

    corpus_name: str
    entries: tuple[PredictionEntry, ...]

    def pairs(self) -> list[tuple[str, str | None]]:
        """(gold, predicted-or-None) for every successfully traced utterance."""
        return [
            (e.gold_label, e.trace.judgment.label)
            for e in self.entries
            if e.trace is not None
        ]

    @property
    def skipped(self) -> int:
        return sum(1 for e in self.entries if e.error is not None)

    @property
    def abstentions(self) -> int:
        return sum(
            1
            for e in self.entries
            if e.trace is not None and not e.trace.judgment.accepted
        )

    def latency_summary(self) -> LatencySummary:
        return LatencySummary.from_values(
            e.latency for e in self.entries if e.trace is not None
        )

    def to_jsonl(self) -> str:
        lines = [
            json.dumps(e.to_dict(), ensure_ascii=False, sort_keys=True)
            for e in self.entries
        ]
        return "\n".join(lines) + ("\n" if lines else "")

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_jsonl(), encoding="utf-8")


def evaluate_corpus(
    corpus: Corpus,
    cfg: NegotiationConfig,
    backend: Backend,
    concurrency: int = 1,
    history_m: int = DEFAULT_HISTORY_WINDOW,
    deduction_source: str = "live",
) -> PredictionSet:
    """Negotiate every labeled utterance of a corpus.

    Utterances without a gold label are skipped entirely. Independent
    negotiations run on up to `concurrency` worker threads; results are
    ordered by (conversation_id, turn_index) regardless of scheduling, so a
    deterministic backend yields byte-identical output at any worker count.

    `deduction_source` selects where context notes come from: "live" asks
    the backend per utterance, "corpus" uses the utterance's own deduction
    field, "off" disables them. A disabled `cfg.deduction_enabled` always
    wins.
    """
    if concurrency < 1:
        raise ValueError("concurrency must be >= 1")
    if deduction_source not in ("live", "corpus", "off"):
        raise ValueError(f"unknown deduction source {deduction_source!r}")
    if not corpus.conversations:
        raise EmptyCorpus(f"corpus {corpus.name!r} has no conversations")

    tasks: list[tuple[Conversation, Utterance]] = list(corpus.labeled())

    def run_one(task: tuple[Conversation, Utterance]) -> PredictionEntry:
        conv, utt = task
        ctx = history_window(conv, utt.turn_index, history_m)
        tally = _LatencyTally(backend)
        try:
            ded: EmotionalDeduction | None = None
            if cfg.deduction_enabled and deduction_source != "off":
                if deduction_source == "corpus":
                    ded = utt.deduction
                else:
                    ded = request_deduction(
                        tally,
                        ctx,
                        utt.text,
                        tag=(utt.uid, 0, "deduction"),
                        templates=cfg.templates,
                        temperature=cfg.temperature,
                        max_tokens=cfg.max_tokens,
                    )
            trace = negotiate(utt, ctx, ded, cfg, tally)
        except BackendError as exc:
            logger.warning("utterance %s skipped: %s", utt.uid, exc)
            return PredictionEntry(
                conversation_id=utt.conversation_id,
                turn_index=utt.turn_index,
                gold_label=utt.gold_label or "",
                trace=None,
                error=str(exc),
                latency=tally.total,
            )
        return PredictionEntry(
            conversation_id=utt.conversation_id,
            turn_index=utt.turn_index,
            gold_label=utt.gold_label or "",
            trace=trace,
            error=None,
            latency=tally.total,
        )

    if concurrency == 1 or len(tasks) <= 1:
        results = [run_one(t) for t in tasks]
    else:
        with ThreadPoolExecutor(max_workers=concurrency) as pool:
            results = list(pool.map(run_one, tasks))

    results.sort(key=lambda e: (e.conversation_id, e.turn_index))
    if tasks and all(e.error is not None for e in results):
        raise EvaluationError(
            f"all {len(results)} utterances failed; first error: {results[0].error}"
        )
    return PredictionSet(corpus_name=corpus.name, entries=tuple(results))


def load_trace_file(path: str | Path) -> list[dict]:
    """Read a trace JSONL file back into dicts, validating the schema tag."""
    records = []
    text = Path(path).read_text(encoding="utf-8")
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise SentixrlError(f"{path}: line {line_no}: invalid JSON: {exc.msg}") from exc
        if record.get("schema") != TRACE_SCHEMA:
            raise SentixrlError(
                f"{path}: line {line_no}: unsupported schema {record.get('schema')!r}"
            )
        records.append(record)
    return records
