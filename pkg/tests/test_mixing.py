import math

import pytest

from conftest import make_corpus, utt_row
from sentixrl.corpus import parse_corpus, serialize_corpus
from sentixrl.labels import build_domain
from sentixrl.mixing import (
    InsufficientData,
    MixSpec,
    NoLabels,
    Strategy,
    equal_mix,
    histogram,
    random_mix,
)


@pytest.fixture(scope="module")
def pool_domain():
    return build_domain(["neutral", "happiness", "sadness"], name="pool3")


@pytest.fixture(scope="module")
def big_pool(pool_domain):
    """1000 labeled utterances with class shares 0.5 / 0.3 / 0.2."""
    labels = ["neutral"] * 500 + ["happiness"] * 300 + ["sadness"] * 200
    rows = [
        utt_row(f"c{i // 10}", i % 10, text=f"turn {i}", label=label)
        for i, label in enumerate(labels)
    ]
    return make_corpus(rows, domain=pool_domain, name="pool")


def spec_for(strategy, size, seed, *sources):
    return MixSpec(strategy=strategy, target_size=size, seed=seed, sources=tuple(sources))


def sampled_uids(corpus):
    return sorted(
        utt.uid for _, utt in corpus.labeled()
    )


class TestRandomMix:
    def test_same_seed_is_identical(self, big_pool):
        a = random_mix(spec_for(Strategy.RANDOM, 50, 7, big_pool))
        b = random_mix(spec_for(Strategy.RANDOM, 50, 7, big_pool))
        assert serialize_corpus(a) == serialize_corpus(b)

    def test_different_seed_differs(self, big_pool):
        a = random_mix(spec_for(Strategy.RANDOM, 50, 7, big_pool))
        b = random_mix(spec_for(Strategy.RANDOM, 50, 8, big_pool))
        assert serialize_corpus(a) != serialize_corpus(b)

    def test_full_pool_is_permutation(self, pool_domain):
        rows = [utt_row("c", i, label=("neutral" if i % 2 else "sadness")) for i in range(10)]
        pool = make_corpus(rows, domain=pool_domain)
        mixed = random_mix(spec_for(Strategy.RANDOM, 10, 3, pool))
        labeled = list(mixed.labeled())
        assert len(labeled) == 10
        originals = sorted(f"c:{i}" for i in range(10))
        sampled = sorted(conv.id.split("/", 1)[1].replace("/", ":") for conv, _ in labeled)
        assert sampled == originals

    def test_oversized_request_rejected(self, pool_domain):
        pool = make_corpus([utt_row("c", 0, label="neutral"), utt_row("c", 1, label="sadness")], domain=pool_domain)
        with pytest.raises(InsufficientData):
            random_mix(spec_for(Strategy.RANDOM, 3, 0, pool))

    def test_no_duplicates(self, big_pool):
        mixed = random_mix(spec_for(Strategy.RANDOM, 400, 11, big_pool))
        ids = [conv.id for conv in mixed]
        assert len(ids) == len(set(ids)) == 400

    def test_proportions_within_hypergeometric_bounds(self, big_pool):
        # Fixed seed grid verified to stay under 3 sigma for every class.
        pool_size, sample = 1000, 100
        shares = {"neutral": 0.5, "happiness": 0.3, "sadness": 0.2}
        fpc = (pool_size - sample) / (pool_size - 1)
        for seed in range(100):
            mixed = random_mix(spec_for(Strategy.RANDOM, sample, seed, big_pool))
            hist = histogram(mixed)
            for label, p in shares.items():
                sigma = math.sqrt(sample * p * (1 - p) * fpc)
                assert abs(hist.counts[label] - sample * p) <= 3 * sigma

    def test_context_prefix_preserved_without_labels(self, pool_domain):
        rows = [
            utt_row("c", 0, speaker="A", text="first", label="neutral"),
            utt_row("c", 1, speaker="B", text="second", label="sadness"),
            utt_row("c", 2, speaker="A", text="third", label="happiness"),
        ]
        pool = make_corpus(rows, domain=pool_domain)
        mixed = random_mix(spec_for(Strategy.RANDOM, 3, 0, pool))
        target_conv = next(conv for conv in mixed if conv.id.endswith("/2"))
        assert [u.text for u in target_conv] == ["first", "second", "third"]
        assert [u.gold_label for u in target_conv] == [None, None, "happiness"]

    def test_strategy_mismatch(self, big_pool):
        with pytest.raises(ValueError):
            random_mix(spec_for(Strategy.EQUAL_CATEGORY, 10, 0, big_pool))


class TestEqualMix:
    def test_exact_division(self, big_pool):
        mixed = equal_mix(spec_for(Strategy.EQUAL_CATEGORY, 9, 5, big_pool))
        hist = histogram(mixed)
        assert all(count == 3 for count in hist.counts.values())

    def test_scarce_class_bounds_quota_with_warning(self, pool_domain):
        rows = (
            [utt_row("a", i, label="neutral") for i in range(5)]
            + [utt_row("b", i, label="happiness") for i in range(5)]
            + [utt_row("c", i, label="sadness") for i in range(2)]
        )
        pool = make_corpus(rows, domain=pool_domain)
        with pytest.warns(RuntimeWarning):
            mixed = equal_mix(spec_for(Strategy.EQUAL_CATEGORY, 9, 1, pool))
        hist = histogram(mixed)
        assert hist.total == 6
        assert all(count == 2 for count in hist.counts.values())

    def test_empty_class_rejected(self, pool_domain):
        rows = [utt_row("a", 0, label="neutral"), utt_row("a", 1, label="happiness")]
        pool = make_corpus(rows, domain=pool_domain)
        with pytest.raises(InsufficientData):
            equal_mix(spec_for(Strategy.EQUAL_CATEGORY, 2, 0, pool))

    def test_target_below_class_count_rejected(self, big_pool):
        with pytest.raises(InsufficientData):
            equal_mix(spec_for(Strategy.EQUAL_CATEGORY, 2, 0, big_pool))

    def test_flat_histogram_across_seeds(self, big_pool):
        for seed in range(100):
            mixed = equal_mix(spec_for(Strategy.EQUAL_CATEGORY, 30, seed, big_pool))
            counts = histogram(mixed).counts.values()
            assert max(counts) - min(counts) <= 1

    def test_same_seed_is_identical(self, big_pool):
        a = equal_mix(spec_for(Strategy.EQUAL_CATEGORY, 30, 2, big_pool))
        b = equal_mix(spec_for(Strategy.EQUAL_CATEGORY, 30, 2, big_pool))
        assert serialize_corpus(a) == serialize_corpus(b)


class TestPooling:
    def test_sources_must_share_domain(self, pool_domain):
        other = build_domain(["anger", "fear"])
        a = make_corpus([utt_row("a", 0, label="neutral")], domain=pool_domain)
        b = make_corpus([utt_row("b", 0, label="anger")], domain=other)
        with pytest.raises(ValueError):
            spec_for(Strategy.RANDOM, 1, 0, a, b)

    def test_multi_source_pool(self, pool_domain):
        a = make_corpus(
            [utt_row("a", i, label="neutral") for i in range(3)],
            domain=pool_domain, name="srcA",
        )
        b = make_corpus(
            [utt_row("b", i, label="sadness") for i in range(3)],
            domain=pool_domain, name="srcB",
        )
        mixed = random_mix(spec_for(Strategy.RANDOM, 6, 0, a, b))
        assert histogram(mixed).total == 6
        prefixes = {conv.id.split("/")[0] for conv in mixed}
        assert prefixes == {"srcA", "srcB"}


class TestHistogram:
    def test_single_label(self, pool_domain):
        corpus = make_corpus([utt_row("c", 0, label="sadness")], domain=pool_domain)
        hist = histogram(corpus)
        assert hist.counts == {"neutral": 0, "happiness": 0, "sadness": 1}
        assert hist.proportions["sadness"] == 1.0

    def test_proportions_sum_to_one(self, big_pool):
        hist = histogram(big_pool)
        assert abs(sum(hist.proportions.values()) - 1.0) <= 1e-9

    def test_additive_over_concatenation(self, pool_domain):
        rows_a = [utt_row("a", i, label="neutral") for i in range(4)]
        rows_b = [utt_row("b", i, label="sadness") for i in range(2)]
        a = make_corpus(rows_a, domain=pool_domain)
        b = make_corpus(rows_b, domain=pool_domain)
        both = make_corpus(rows_a + rows_b, domain=pool_domain)
        combined = histogram(both)
        for label in pool_domain:
            assert combined.counts[label] == histogram(a).counts.get(label, 0) + (
                histogram(b).counts.get(label, 0)
            )

    def test_unlabeled_corpus_rejected(self, pool_domain):
        corpus = make_corpus([utt_row("c", 0)], domain=pool_domain)
        with pytest.raises(NoLabels):
            histogram(corpus)

    def test_missing_domain_rejected(self):
        corpus = parse_corpus('{"conversation_id": "c", "turn_index": 0, "speaker": "A", "text": "x"}')
        with pytest.raises(ValueError):
            histogram(corpus)
