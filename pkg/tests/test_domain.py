import json

import pytest

from counterspeech.domain import (
    Evidence,
    EvidenceBundle,
    MetricAggregate,
    MisinfoPost,
    ResponseRecord,
    ScoreReport,
    bundle_from_dict,
    bundle_to_dict,
    dump_dataset,
    load_dataset,
    parse_dataset_line,
    validate_dataset,
)
from counterspeech.errors import DuplicateId, EmptyText


class TestMisinfoPost:
    def test_valid_post(self):
        post = MisinfoPost("p1", "The flu shot causes the flu.", "influenza")
        assert post.topic == "influenza"

    def test_empty_text_rejected(self):
        with pytest.raises(EmptyText):
            MisinfoPost("p1", "   ")

    def test_empty_id_rejected(self):
        with pytest.raises(ValueError):
            MisinfoPost("", "some text")

    def test_unknown_topic_rejected(self):
        with pytest.raises(ValueError):
            MisinfoPost("p1", "text", topic="measles")

    def test_unknown_source_label_rejected(self):
        with pytest.raises(ValueError):
            MisinfoPost("p1", "text", source_label="guessed")


class TestValidateDataset:
    def test_distinct_ids_retained_in_order(self):
        posts = [MisinfoPost("a", "one post"), MisinfoPost("b", "two post")]
        assert validate_dataset(posts) == posts

    def test_duplicate_id_rejected(self):
        posts = [MisinfoPost("p1", "one"), MisinfoPost("p1", "two")]
        with pytest.raises(DuplicateId) as err:
            validate_dataset(posts)
        assert err.value.post_id == "p1"
        assert "p1" in str(err.value)

    def test_ids_pairwise_distinct_after_validation(self):
        posts = [MisinfoPost(f"p{i}", f"text {i}") for i in range(20)]
        validated = validate_dataset(posts)
        assert len({p.id for p in validated}) == len(validated)


class TestEvidence:
    def test_requires_known_origin(self):
        with pytest.raises(ValueError):
            Evidence(text="x y z", origin="archive")

    def test_factual_score_range(self):
        with pytest.raises(ValueError):
            Evidence(text="x y z", origin="dynamic", factual_score=1.2)

    def test_round_trip(self):
        ev = Evidence(
            text="Vaccines are tested.", origin="dynamic",
            retrieval_score=0.5, source_url="https://x.test/a", factual_score=0.9,
        )
        bundle = EvidenceBundle(post_id="p1", items=(ev,), k_used=10, summary="s")
        assert bundle_from_dict(bundle_to_dict(bundle)) == bundle


class TestEvidenceBundle:
    def test_items_capped_by_k(self):
        items = tuple(
            Evidence(text=f"snippet {i} text", origin="static") for i in range(3)
        )
        with pytest.raises(ValueError):
            EvidenceBundle(post_id="p1", items=items, k_used=2)

    def test_k_used_positive(self):
        with pytest.raises(ValueError):
            EvidenceBundle(post_id="p1", items=(), k_used=0)

    def test_joined_text(self):
        items = (
            Evidence(text="first snippet", origin="static"),
            Evidence(text="second snippet", origin="dynamic"),
        )
        bundle = EvidenceBundle(post_id="p1", items=items, k_used=5)
        assert bundle.joined_text() == "first snippet\nsecond snippet"


class TestResponseRecord:
    def test_refined_requires_refiner(self):
        with pytest.raises(ValueError):
            ResponseRecord(
                post_id="p1", draft="d", config_id="c", prompt_style="guided",
                agents_used=frozenset({"generator"}), refined="r",
            )

    def test_refiner_requires_refined(self):
        with pytest.raises(ValueError):
            ResponseRecord(
                post_id="p1", draft="d", config_id="c", prompt_style="guided",
                agents_used=frozenset({"generator", "refiner"}),
            )

    def test_final_text_prefers_refined(self):
        record = ResponseRecord(
            post_id="p1", draft="draft", config_id="c", prompt_style="cot",
            agents_used=frozenset({"generator", "refiner"}), refined="polished",
        )
        assert record.final_text == "polished"

    def test_round_trip(self):
        record = ResponseRecord(
            post_id="p1", draft="draft", config_id="c", prompt_style="guided",
            agents_used=frozenset({"generator", "static_ret"}),
        )
        assert ResponseRecord.from_dict(record.to_dict()) == record


class TestScoreReport:
    def _report(self):
        per = {
            "p1": {"politeness": 0.9, "relevance": 0.5},
            "p2": {"politeness": 0.7, "relevance": 1.0},
        }
        agg = {
            "politeness": MetricAggregate(mean=0.8, std=0.1, n=2),
            "relevance": MetricAggregate(mean=0.75, std=0.25, n=2),
        }
        return ScoreReport(per_response=per, aggregate=agg)

    def test_json_round_trip(self):
        report = self._report()
        again = ScoreReport.from_json(report.to_json())
        assert again.to_dict() == report.to_dict()

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            ScoreReport(
                per_response={"p1": {"politeness": 1.5}},
                aggregate={"politeness": MetricAggregate(1.5, 0.0, 1)},
            )

    def test_inconsistent_mean_rejected(self):
        with pytest.raises(ValueError):
            ScoreReport(
                per_response={"p1": {"politeness": 0.4}},
                aggregate={"politeness": MetricAggregate(0.9, 0.0, 1)},
            )


class TestIngestionFormat:
    def test_unknown_keys_ignored(self):
        line = json.dumps(
            {"id": "p1", "text": "flu facts", "topic": "influenza",
             "source_label": "human_annotated", "subreddit": "r/health"}
        )
        post = parse_dataset_line(line)
        assert post.id == "p1"

    def test_missing_key_rejected(self):
        with pytest.raises(ValueError):
            parse_dataset_line(json.dumps({"id": "p1"}))

    def test_file_round_trip(self, tmp_path):
        posts = [
            MisinfoPost("p1", "one text", "covid19", "classifier_labeled"),
            MisinfoPost("p2", "two text", "hiv"),
        ]
        path = tmp_path / "data.jsonl"
        dump_dataset(posts, path)
        assert load_dataset(path) == posts
