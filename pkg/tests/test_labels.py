import pytest
from hypothesis import given
from hypothesis import strategies as st

from sentixrl.labels import (
    SOURCE_CORPUS_LABELS,
    AmbiguousLabel,
    EmptyDomain,
    InvalidLabel,
    LabelDomain,
    MappingConfig,
    MappingConfigError,
    SentimentMap,
    UnmappedLabel,
    build_domain,
    coarsen_to_sentiment,
    default_mapping_config,
    load_mapping_config,
    map_label,
    unified_domain,
    validate_mapping,
)


class TestBuildDomain:
    def test_dedupe_and_casefold(self):
        dom = build_domain(["Joy", "joy", "anger"])
        assert dom.labels == ("joy", "anger")

    def test_seven_label_inventory_preserves_order(self):
        labels = ["happiness", "sadness", "disgust", "anger", "like", "surprise", "fear"]
        dom = build_domain(labels)
        assert dom.labels == tuple(labels)

    def test_blank_input_is_empty_domain(self):
        with pytest.raises(EmptyDomain):
            build_domain([" "])

    def test_single_distinct_label_is_empty_domain(self):
        with pytest.raises(EmptyDomain):
            build_domain(["anger", "ANGER"])

    def test_whitespace_embedded_token_rejected(self):
        with pytest.raises(InvalidLabel):
            build_domain(["very happy", "sad"])

    def test_domain_requires_lowercase(self):
        with pytest.raises(InvalidLabel):
            LabelDomain(name="bad", labels=("Anger", "joy"))


class TestMapLabel:
    def test_identity_for_in_domain(self, small_domain):
        cfg = MappingConfig(target=small_domain)
        assert map_label("neutral", cfg) == "neutral"

    def test_alias_with_casefold(self, small_domain):
        cfg = MappingConfig(target=small_domain, aliases={"happy": "happiness"})
        assert map_label("Happy", cfg) == "happiness"

    def test_unmapped(self, small_domain):
        cfg = MappingConfig(target=small_domain)
        with pytest.raises(UnmappedLabel):
            map_label("bored", cfg)

    def test_alias_target_must_be_canonical(self, small_domain):
        with pytest.raises(MappingConfigError):
            MappingConfig(target=small_domain, aliases={"happy": "joy"})

    def test_alias_chains_rejected(self, small_domain):
        # happiness -> sadness would re-map an alias target, breaking idempotence
        with pytest.raises(MappingConfigError):
            MappingConfig(
                target=small_domain,
                aliases={"happy": "happiness", "happiness": "sadness"},
            )

    @given(st.sampled_from(["neutral", "happiness", "sadness", "happy", "HAPPY", "Sad"]))
    def test_idempotent(self, raw):
        dom = build_domain(["neutral", "happiness", "sadness"])
        cfg = MappingConfig(target=dom, aliases={"happy": "happiness", "sad": "sadness"})
        once = map_label(raw, cfg)
        assert map_label(once, cfg) == once


class TestCoarsen:
    def test_lookup(self):
        sm = SentimentMap(polarity={"happiness": "positive"})
        assert coarsen_to_sentiment("happiness", sm) == "positive"

    def test_excluded_label_is_ambiguous(self):
        sm = SentimentMap(polarity={}, excluded=frozenset({"surprise"}))
        with pytest.raises(AmbiguousLabel):
            coarsen_to_sentiment("surprise", sm)

    def test_absent_label_is_unmapped(self):
        sm = SentimentMap(polarity={"happiness": "positive"})
        with pytest.raises(UnmappedLabel):
            coarsen_to_sentiment("fear", sm)

    def test_default_config_excludes_surprise(self):
        cfg = default_mapping_config()
        assert cfg.sentiment is not None
        with pytest.raises(AmbiguousLabel):
            coarsen_to_sentiment("surprise", cfg.sentiment)
        assert coarsen_to_sentiment("happiness", cfg.sentiment) == "positive"
        assert coarsen_to_sentiment("fear", cfg.sentiment) == "negative"


class TestValidateMapping:
    def test_clean_mapping(self, small_domain):
        cfg = MappingConfig(target=small_domain)
        report = validate_mapping(cfg, {"neutral": 2, "sadness": 1})
        assert report.ok
        assert report.unused_aliases == ()
        assert report.counts == {"neutral": 2, "happiness": 0, "sadness": 1}

    def test_alias_counts(self, small_domain):
        cfg = MappingConfig(target=small_domain, aliases={"happy": "happiness"})
        report = validate_mapping(cfg, {"happy": 3})
        assert report.counts["happiness"] == 3

    def test_unmapped_surfaced(self, small_domain):
        cfg = MappingConfig(target=small_domain)
        report = validate_mapping(cfg, {"meh": 1, "neutral": 1})
        assert not report.ok
        assert report.unmapped == {"meh": 1}

    @given(
        st.lists(
            st.sampled_from(["neutral", "happiness", "sadness", "happy", "HAPPY"]),
            min_size=1,
            max_size=30,
        )
    )
    def test_cardinality_preserved_when_clean(self, raws):
        dom = build_domain(["neutral", "happiness", "sadness"])
        cfg = MappingConfig(target=dom, aliases={"happy": "happiness"})
        report = validate_mapping(cfg, raws)
        assert report.ok
        assert report.total_mapped() == len(raws)


class TestConfigFiles:
    def test_unified_domain_has_eight_labels(self, unified):
        assert len(unified) == 8
        assert unified.labels == (
            "neutral", "happiness", "sadness", "anger",
            "disgust", "fear", "surprise", "like",
        )

    def test_loader_rejects_unknown_keys(self, tmp_path):
        path = tmp_path / "bad.toml"
        path.write_text('domain = ["a", "b"]\nextra = 1\n', encoding="utf-8")
        with pytest.raises(MappingConfigError):
            load_mapping_config(path)

    def test_loader_rejects_colliding_aliases(self, tmp_path):
        path = tmp_path / "bad.toml"
        path.write_text(
            'domain = ["joy", "anger"]\n[aliases]\nHappy = "joy"\nhappy = "joy"\n',
            encoding="utf-8",
        )
        with pytest.raises(MappingConfigError):
            load_mapping_config(path)

    def test_loader_requires_sentiment_totality(self, tmp_path):
        path = tmp_path / "bad.toml"
        path.write_text(
            'domain = ["joy", "anger"]\n[sentiment]\njoy = "positive"\n',
            encoding="utf-8",
        )
        with pytest.raises(MappingConfigError):
            load_mapping_config(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(MappingConfigError):
            load_mapping_config(tmp_path / "nope.toml")

    def test_source_corpus_union_covers_unified_domain(self, unified):
        cfg = default_mapping_config()
        mapped: set[str] = set()
        for labels in SOURCE_CORPUS_LABELS.values():
            for raw in labels:
                mapped.add(map_label(raw, cfg))
        assert mapped == set(unified.labels)
