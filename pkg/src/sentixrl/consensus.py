"""Monte-Carlo simulation of the negotiation loop, with a closed-form oracle.

Synthetic agents stand in for the model: each round the generator is
correct with probability p, and the discriminator accepts a correct label
with probability a and an incorrect one with probability b. Rounds are
independent, so the per-round acceptance probability is q = p*a + (1-p)*b
and every reported quantity has a closed form the simulator can be checked
against.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass

from .errors import SentixrlError


class DegenerateParams(SentixrlError):
    """A conditional quantity is undefined because nothing is ever accepted."""


@dataclass(frozen=True)
class SimParams:
    p_correct: float
    accept_correct: float
    accept_incorrect: float
    max_rounds: int = 3
    trials: int = 100_000
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("p_correct", "accept_correct", "accept_incorrect"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {value}")
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be >= 1")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")

    @property
    def q(self) -> float:
        """Per-round acceptance probability."""
        return self.p_correct * self.accept_correct + (
            1.0 - self.p_correct
        ) * self.accept_incorrect


@dataclass(frozen=True)
class SimStats:
    """Exact distribution of the negotiation outcome for given parameters."""

    p_accepted: float
    p_accepted_correct: float
    p_outlier: float
    p_correct_given_accepted: float | None
    mean_rounds: float
    rounds_variance: float
    per_round_accept: tuple[float, ...]

    def conditional_accuracy(self) -> float:
        if self.p_correct_given_accepted is None:
            raise DegenerateParams(
                "P(correct | accepted) is undefined when nothing is ever accepted"
            )
        return self.p_correct_given_accepted


def closed_form_consensus(sp: SimParams) -> SimStats:
    """Analytic outcome distribution.

    With q the per-round acceptance probability and N the round budget:
    P(outlier) = (1-q)^N, P(accept at round n) = (1-q)^(n-1) * q, and
    P(correct | accepted) = p*a/q. Rounds used is min(Geometric(q), N),
    which gives the mean and variance directly.
    """
    q = sp.q
    n_rounds = sp.max_rounds
    p_outlier = (1.0 - q) ** n_rounds
    per_round = tuple((1.0 - q) ** (n - 1) * q for n in range(1, n_rounds + 1))
    p_accepted = 1.0 - p_outlier

    if q > 0.0:
        p_correct_given_accepted = sp.p_correct * sp.accept_correct / q
    else:
        p_correct_given_accepted = None
    p_accepted_correct = (
        p_accepted * p_correct_given_accepted if p_correct_given_accepted is not None else 0.0
    )

    mean_rounds = sum(n * pr for n, pr in enumerate(per_round, start=1))
    mean_rounds += n_rounds * p_outlier
    second_moment = sum(n * n * pr for n, pr in enumerate(per_round, start=1))
    second_moment += n_rounds * n_rounds * p_outlier
    variance = max(0.0, second_moment - mean_rounds * mean_rounds)

    return SimStats(
        p_accepted=p_accepted,
        p_accepted_correct=p_accepted_correct,
        p_outlier=p_outlier,
        p_correct_given_accepted=p_correct_given_accepted,
        mean_rounds=mean_rounds,
        rounds_variance=variance,
        per_round_accept=per_round,
    )


@dataclass(frozen=True)
class SimReport:
    """Empirical estimates from seeded Monte-Carlo trials, with standard errors."""

    params: SimParams
    p_accepted: float
    p_accepted_correct: float
    p_outlier: float
    mean_rounds: float
    se_accepted: float
    se_accepted_correct: float
    se_outlier: float
    se_mean_rounds: float

    def to_dict(self) -> dict:
        return {
            "trials": self.params.trials,
            "seed": self.params.seed,
            "p_accepted": self.p_accepted,
            "p_accepted_correct": self.p_accepted_correct,
            "p_outlier": self.p_outlier,
            "mean_rounds": self.mean_rounds,
            "se_accepted": self.se_accepted,
            "se_accepted_correct": self.se_accepted_correct,
            "se_outlier": self.se_outlier,
            "se_mean_rounds": self.se_mean_rounds,
        }


def _proportion_se(p_hat: float, n: int) -> float:
    return math.sqrt(p_hat * (1.0 - p_hat) / n)


def simulate_consensus(sp: SimParams) -> SimReport:
    """Run independent synthetic negotiations and report outcome frequencies.

    Fully determined by the seed: the same SimParams always produce the
    same report.
    """
    rng = random.Random(sp.seed)
    n_accepted = 0
    n_accepted_correct = 0
    n_outlier = 0
    sum_rounds = 0
    sum_rounds_sq = 0

    for _ in range(sp.trials):
        rounds_used = sp.max_rounds
        accepted = False
        correct = False
        for n in range(1, sp.max_rounds + 1):
            correct = rng.random() < sp.p_correct
            accept_p = sp.accept_correct if correct else sp.accept_incorrect
            if rng.random() < accept_p:
                accepted = True
                rounds_used = n
                break
        if accepted:
            n_accepted += 1
            if correct:
                n_accepted_correct += 1
        else:
            n_outlier += 1
        sum_rounds += rounds_used
        sum_rounds_sq += rounds_used * rounds_used

    trials = sp.trials
    mean_rounds = sum_rounds / trials
    if trials > 1:
        sample_var = (sum_rounds_sq - trials * mean_rounds * mean_rounds) / (trials - 1)
        se_mean = math.sqrt(max(0.0, sample_var) / trials)
    else:
        se_mean = 0.0

    return SimReport(
        params=sp,
        p_accepted=n_accepted / trials,
        p_accepted_correct=n_accepted_correct / trials,
        p_outlier=n_outlier / trials,
        mean_rounds=mean_rounds,
        se_accepted=_proportion_se(n_accepted / trials, trials),
        se_accepted_correct=_proportion_se(n_accepted_correct / trials, trials),
        se_outlier=_proportion_se(n_outlier / trials, trials),
        se_mean_rounds=se_mean,
    )
