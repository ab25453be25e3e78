"""Classification metrics, focal loss, and class-weight computation.

The confusion matrix keeps abstentions (outlier outcomes) separate from
label predictions; metric computation then either counts each abstention
as a miss for its gold class (the stricter default) or drops the sample.
Per-class and aggregate metrics are computed in exact rational arithmetic
and converted to float at the end, so identities like "balanced supports
make weighted F1 equal macro F1" hold exactly, not just approximately.
"""

from __future__ import annotations

import math
import warnings
from collections.abc import Sequence
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction

from .errors import SentixrlError
from .labels import LabelDomain


class DomainMismatch(SentixrlError):
    """A gold or predicted label is not a member of the domain."""


class EmptyMatrix(SentixrlError):
    """No scored samples to compute metrics over."""


class DomainError(SentixrlError):
    """A probability argument is outside its valid range."""


class NotNormalized(SentixrlError):
    """A probability vector does not sum to 1."""


class EmptyInput(SentixrlError):
    """An aggregate was requested over zero samples."""


class AllZero(SentixrlError):
    """Class weights were requested but every support is zero."""


class AbstentionMode(str, Enum):
    COUNT_AS_WRONG = "count_as_wrong"
    EXCLUDE = "exclude"


@dataclass(frozen=True)
class ConfusionMatrix:
    """K x K counts (rows = gold, columns = predicted) plus per-gold-class
    abstention counts. The mode stored here is only the default for metric
    computation; the counts themselves are mode-independent."""

    domain: LabelDomain
    counts: tuple[tuple[int, ...], ...]
    abstentions: tuple[int, ...]
    abstention_mode: AbstentionMode = AbstentionMode.COUNT_AS_WRONG

    def __post_init__(self) -> None:
        k = len(self.domain)
        if len(self.counts) != k or any(len(row) != k for row in self.counts):
            raise ValueError(f"counts must be a {k}x{k} matrix")
        if len(self.abstentions) != k:
            raise ValueError(f"abstentions must have {k} entries")
        if any(c < 0 for row in self.counts for c in row) or any(
            a < 0 for a in self.abstentions
        ):
            raise ValueError("counts must be non-negative")

    @property
    def total(self) -> int:
        return sum(sum(row) for row in self.counts) + sum(self.abstentions)

    @property
    def total_abstained(self) -> int:
        return sum(self.abstentions)


def confusion(
    preds: Sequence[str | None],
    golds: Sequence[str],
    dom: LabelDomain,
    mode: AbstentionMode = AbstentionMode.COUNT_AS_WRONG,
) -> ConfusionMatrix:
    """Tally (gold, predicted) pairs; a None prediction is an abstention."""
    if len(preds) != len(golds):
        raise ValueError(f"{len(preds)} predictions vs {len(golds)} golds")
    k = len(dom)
    counts = [[0] * k for _ in range(k)]
    abstentions = [0] * k
    for gold, pred in zip(golds, preds):
        if gold not in dom:
            raise DomainMismatch(f"gold label {gold!r} not in domain {dom.name!r}")
        g = dom.index(gold)
        if pred is None:
            abstentions[g] += 1
            continue
        if pred not in dom:
            raise DomainMismatch(f"predicted label {pred!r} not in domain {dom.name!r}")
        counts[g][dom.index(pred)] += 1
    return ConfusionMatrix(
        domain=dom,
        counts=tuple(tuple(row) for row in counts),
        abstentions=tuple(abstentions),
        abstention_mode=mode,
    )


@dataclass(frozen=True)
class PerClassMetrics:
    label: str
    precision: float
    recall: float
    f1: float
    support: int


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    macro_f1: float
    weighted_f1: float
    per_class: tuple[PerClassMetrics, ...]
    abstention_mode: AbstentionMode
    mean_focal_loss: float | None = None

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "macro_f1": self.macro_f1,
            "weighted_f1": self.weighted_f1,
            "abstention_mode": self.abstention_mode.value,
            "mean_focal_loss": self.mean_focal_loss,
            "per_class": [
                {
                    "label": c.label,
                    "precision": c.precision,
                    "recall": c.recall,
                    "f1": c.f1,
                    "support": c.support,
                }
                for c in self.per_class
            ],
        }


def _safe_div(num: int, den: int) -> Fraction:
    # Zero-denominator precision/recall convention: report 0, not undefined.
    return Fraction(num, den) if den else Fraction(0)


def compute_metrics(
    cm: ConfusionMatrix,
    mode: AbstentionMode | None = None,
    mean_focal_loss: float | None = None,
) -> MetricsReport:
    """Accuracy, macro/weighted F1, and per-class precision/recall/F1.

    In count-as-wrong mode every abstention adds a false negative to its
    gold class (and a miss to accuracy); in exclude mode abstained samples
    vanish from all counts and supports.
    """
    mode = mode or cm.abstention_mode
    k = len(cm.domain)
    if cm.total == 0:
        raise EmptyMatrix("confusion matrix has no samples")

    include_abstentions = mode is AbstentionMode.COUNT_AS_WRONG
    scored = sum(sum(row) for row in cm.counts)
    total = scored + cm.total_abstained if include_abstentions else scored
    if total == 0:
        raise EmptyMatrix("no scored samples after excluding abstentions")

    correct = sum(cm.counts[i][i] for i in range(k))
    accuracy = Fraction(correct, total)

    per_class: list[PerClassMetrics] = []
    f1s: list[Fraction] = []
    supports: list[int] = []
    for c in range(k):
        tp = cm.counts[c][c]
        fp = sum(cm.counts[g][c] for g in range(k)) - tp
        fn = sum(cm.counts[c][p] for p in range(k)) - tp
        support = tp + fn
        if include_abstentions:
            fn += cm.abstentions[c]
            support += cm.abstentions[c]
        precision = _safe_div(tp, tp + fp)
        recall = _safe_div(tp, tp + fn)
        if precision + recall > 0:
            f1 = 2 * precision * recall / (precision + recall)
        else:
            f1 = Fraction(0)
        per_class.append(
            PerClassMetrics(
                label=cm.domain.labels[c],
                precision=float(precision),
                recall=float(recall),
                f1=float(f1),
                support=support,
            )
        )
        f1s.append(f1)
        supports.append(support)

    present = [c for c in range(k) if supports[c] > 0]
    if not present:
        raise EmptyMatrix("no class has support")
    macro_f1 = sum((f1s[c] for c in present), Fraction(0)) / len(present)
    weighted_f1 = sum(
        (supports[c] * f1s[c] for c in present), Fraction(0)
    ) / sum(supports[c] for c in present)

    return MetricsReport(
        accuracy=float(accuracy),
        macro_f1=float(macro_f1),
        weighted_f1=float(weighted_f1),
        per_class=tuple(per_class),
        abstention_mode=mode,
        mean_focal_loss=mean_focal_loss,
    )


@dataclass(frozen=True)
class FocalParams:
    alpha: float = 0.25
    gamma: float = 2.0

    def __post_init__(self) -> None:
        if self.alpha < 0 or self.gamma < 0:
            raise ValueError("alpha and gamma must be non-negative")


def focal_loss(p_t: float, fp: FocalParams = FocalParams()) -> float:
    """-alpha * (1 - p_t)^gamma * ln(p_t) for the true-class probability p_t.

    The modulating factor (1 - p_t)^gamma down-weights confidently correct
    samples; gamma=0, alpha=1 reduces to plain cross-entropy.
    """
    if not 0.0 < p_t <= 1.0:
        raise DomainError(f"p_t must be in (0, 1], got {p_t}")
    if p_t == 1.0:
        return 0.0
    return fp.alpha * (1.0 - p_t) ** fp.gamma * -math.log(p_t)


def mean_focal_loss(
    samples: Sequence[tuple[Sequence[float], int]],
    fp: FocalParams = FocalParams(),
    tolerance: float = 1e-6,
) -> float:
    """Mean focal loss over (probability vector, gold index) samples."""
    if not samples:
        raise EmptyInput("no samples")
    losses = []
    for vector, gold in samples:
        if abs(math.fsum(vector) - 1.0) > tolerance:
            raise NotNormalized(f"probability vector sums to {math.fsum(vector)}")
        if not 0 <= gold < len(vector):
            raise IndexError(f"gold index {gold} out of range")
        losses.append(focal_loss(vector[gold], fp))
    return math.fsum(losses) / len(losses)


def class_weights(supports: Sequence[int]) -> tuple[float, ...]:
    """Inverse-frequency weights, mean-normalized over the present classes.

    weight_c = total / (K * support_c) with K the number of classes that
    have any support; equal supports therefore give weight 1 everywhere.
    Zero-support classes get weight 0 with a warning.
    """
    if any(s < 0 for s in supports):
        raise ValueError("supports must be non-negative")
    total = sum(supports)
    if total == 0:
        raise AllZero("all class supports are zero")
    present = sum(1 for s in supports if s > 0)
    if present < len(supports):
        warnings.warn(
            "zero-support classes receive weight 0", RuntimeWarning, stacklevel=2
        )
    return tuple(total / (present * s) if s > 0 else 0.0 for s in supports)


# Reference per-class weights for the Twitter 2015/2017 sentiment corpora.
# Shipped as published reference data for imbalance reporting; they are not
# produced by (or asserted against) class_weights above.
TWITTER_2015_CLASS_WEIGHTS = {"neutral": 0.563, "positive": 1.139, "negative": 2.884}
TWITTER_2017_CLASS_WEIGHTS = {"neutral": 0.723, "positive": 0.786, "negative": 2.899}
