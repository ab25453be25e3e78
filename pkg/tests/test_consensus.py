import math

import pytest

from sentixrl.consensus import (
    DegenerateParams,
    SimParams,
    closed_form_consensus,
    simulate_consensus,
)

# Fixed verification grid: (p_correct, accept_correct, accept_incorrect, max_rounds).
GRID = [
    (0.7, 0.9, 0.2, 3),
    (0.5, 0.8, 0.3, 3),
    (0.9, 0.95, 0.05, 3),
    (0.3, 0.6, 0.4, 5),
    (0.8, 0.5, 0.5, 2),
    (0.6, 0.7, 0.1, 4),
    (0.2, 0.9, 0.6, 3),
    (0.95, 0.99, 0.01, 1),
    (0.4, 0.85, 0.15, 6),
    (0.55, 0.75, 0.25, 3),
]
DEGENERATE_ACCEPT = (1.0, 1.0, 0.0, 3)  # q = 1
DEGENERATE_REJECT = (0.5, 0.0, 0.0, 3)  # q = 0


def params(point, trials=100_000, seed=0):
    p, a, b, n = point
    return SimParams(
        p_correct=p, accept_correct=a, accept_incorrect=b,
        max_rounds=n, trials=trials, seed=seed,
    )


class TestClosedForm:
    def test_hand_computed_outlier_probability(self):
        stats = closed_form_consensus(params((0.7, 0.9, 0.2, 3)))
        # q = 0.7*0.9 + 0.3*0.2 = 0.69; (1 - 0.69)^3 = 0.029791
        assert stats.p_outlier == pytest.approx(0.029791, abs=1e-12)

    def test_q_one_accepts_immediately(self):
        stats = closed_form_consensus(params(DEGENERATE_ACCEPT))
        assert stats.p_outlier == 0.0
        assert stats.p_accepted == 1.0
        assert stats.mean_rounds == 1.0

    def test_q_zero_always_outlier(self):
        stats = closed_form_consensus(params(DEGENERATE_REJECT))
        assert stats.p_outlier == 1.0
        assert stats.mean_rounds == 3.0
        assert stats.p_correct_given_accepted is None
        with pytest.raises(DegenerateParams):
            stats.conditional_accuracy()

    def test_round_probabilities_sum_to_one(self):
        for point in GRID:
            stats = closed_form_consensus(params(point))
            total = sum(stats.per_round_accept) + stats.p_outlier
            assert total == pytest.approx(1.0, abs=1e-12)

    def test_conditional_accuracy(self):
        stats = closed_form_consensus(params((0.7, 0.9, 0.2, 3)))
        assert stats.p_correct_given_accepted == pytest.approx(0.63 / 0.69, abs=1e-12)
        assert stats.conditional_accuracy() == stats.p_correct_given_accepted

    def test_parameter_validation(self):
        with pytest.raises(ValueError):
            SimParams(p_correct=1.5, accept_correct=0.5, accept_incorrect=0.5)
        with pytest.raises(ValueError):
            SimParams(p_correct=0.5, accept_correct=0.5, accept_incorrect=0.5, max_rounds=0)


class TestSimulation:
    def test_deterministic_for_seed(self):
        sp = params(GRID[0], trials=5_000, seed=42)
        assert simulate_consensus(sp) == simulate_consensus(sp)

    def test_report_serialization(self):
        report = simulate_consensus(params(GRID[0], trials=1_000, seed=1))
        payload = report.to_dict()
        assert payload["trials"] == 1_000 and payload["seed"] == 1
        assert set(payload) >= {"p_accepted", "p_outlier", "mean_rounds"}

    def test_degenerate_accept_exact(self):
        report = simulate_consensus(params(DEGENERATE_ACCEPT, trials=20_000))
        assert report.p_accepted == 1.0
        assert report.p_accepted_correct == 1.0
        assert report.p_outlier == 0.0
        assert report.mean_rounds == 1.0

    def test_degenerate_reject_exact(self):
        report = simulate_consensus(params(DEGENERATE_REJECT, trials=20_000))
        assert report.p_outlier == 1.0
        assert report.p_accepted == 0.0
        assert report.mean_rounds == 3.0

    @pytest.mark.parametrize("idx,point", list(enumerate(GRID)))
    def test_monte_carlo_matches_closed_form(self, idx, point):
        sp = params(point, trials=100_000, seed=1000 + idx)
        report = simulate_consensus(sp)
        exact = closed_form_consensus(sp)
        trials = sp.trials

        def se(p):
            return math.sqrt(p * (1.0 - p) / trials)

        assert abs(report.p_accepted - exact.p_accepted) <= 3 * se(exact.p_accepted)
        assert abs(report.p_outlier - exact.p_outlier) <= 3 * se(exact.p_outlier)
        assert abs(report.p_accepted_correct - exact.p_accepted_correct) <= 3 * se(
            exact.p_accepted_correct
        )
        se_rounds = math.sqrt(exact.rounds_variance / trials)
        assert abs(report.mean_rounds - exact.mean_rounds) <= 3 * se_rounds
