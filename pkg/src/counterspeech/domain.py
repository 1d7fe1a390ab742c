"""Core data types shared by every pipeline stage.

All types are frozen dataclasses: once constructed they are safe to share
across concurrent workers. Serialization is line-delimited JSON with sorted
keys so artifacts are byte-stable across runs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional

from .errors import DuplicateId, EmptyText

TOPICS = ("covid19", "hiv", "influenza", "other")
SOURCE_LABELS = ("human_annotated", "classifier_labeled")
ORIGINS = ("static", "dynamic")
PROMPT_STYLES = ("direct", "guided", "cot")
AGENT_NAMES = ("static_ret", "dynamic_ret", "summarizer", "generator", "refiner")
METRICS = ("politeness", "relevance", "informativeness", "factual_accuracy")


@dataclass(frozen=True)
class MisinfoPost:
    """One labeled health-misinformation item, the pipeline input."""

    id: str
    text: str
    topic: str = "other"
    source_label: str = "human_annotated"

    def __post_init__(self):
        if not self.id:
            raise ValueError("post id must be non-empty")
        if not self.text.strip():
            raise EmptyText(self.id)
        if self.topic not in TOPICS:
            raise ValueError(f"unknown topic {self.topic!r}; expected one of {TOPICS}")
        if self.source_label not in SOURCE_LABELS:
            raise ValueError(
                f"unknown source_label {self.source_label!r}; expected one of {SOURCE_LABELS}"
            )


@dataclass(frozen=True)
class Evidence:
    """One retrieved factual snippet with its provenance and scores."""

    text: str
    origin: str
    retrieval_score: float = 0.0
    source_url: Optional[str] = None
    factual_score: Optional[float] = None

    def __post_init__(self):
        if not self.text.strip():
            raise ValueError("evidence text must be non-empty")
        if self.origin not in ORIGINS:
            raise ValueError(f"unknown origin {self.origin!r}; expected one of {ORIGINS}")
        if self.retrieval_score < 0:
            raise ValueError("retrieval_score must be >= 0")
        if self.factual_score is not None and not 0.0 <= self.factual_score <= 1.0:
            raise ValueError("factual_score must lie in [0, 1]")


@dataclass(frozen=True)
class EvidenceBundle:
    """Merged, ranked, filtered evidence for one post plus its summary."""

    post_id: str
    items: tuple[Evidence, ...]
    k_used: int
    summary: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "items", tuple(self.items))
        if self.k_used < 1:
            raise ValueError("k_used must be a positive integer")
        if len(self.items) > self.k_used:
            raise ValueError(
                f"bundle holds {len(self.items)} items but k_used={self.k_used}"
            )

    def joined_text(self, sep: str = "\n") -> str:
        return sep.join(item.text for item in self.items)


@dataclass(frozen=True)
class ResponseRecord:
    """Draft and refined counterspeech with run-config provenance."""

    post_id: str
    draft: str
    config_id: str
    prompt_style: str
    agents_used: frozenset[str]
    refined: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "agents_used", frozenset(self.agents_used))
        if not self.draft.strip():
            raise ValueError("draft must be non-empty")
        if self.prompt_style not in PROMPT_STYLES:
            raise ValueError(f"unknown prompt_style {self.prompt_style!r}")
        unknown = self.agents_used - set(AGENT_NAMES)
        if unknown:
            raise ValueError(f"unknown agents: {sorted(unknown)}")
        if ("refiner" in self.agents_used) != (self.refined is not None):
            raise ValueError("refined text must be present iff the refiner ran")

    @property
    def final_text(self) -> str:
        return self.refined if self.refined is not None else self.draft

    def to_dict(self) -> dict:
        return {
            "post_id": self.post_id,
            "draft": self.draft,
            "refined": self.refined,
            "config_id": self.config_id,
            "prompt_style": self.prompt_style,
            "agents_used": sorted(self.agents_used),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ResponseRecord":
        return cls(
            post_id=d["post_id"],
            draft=d["draft"],
            refined=d.get("refined"),
            config_id=d["config_id"],
            prompt_style=d["prompt_style"],
            agents_used=frozenset(d["agents_used"]),
        )


@dataclass(frozen=True)
class MetricAggregate:
    mean: float
    std: float
    n: int


@dataclass(frozen=True)
class ScoreReport:
    """Per-response metric values plus mean/std aggregates.

    Aggregates use the population standard deviation (divisor n); see
    evaluation.aggregate for the sample-std alternative.
    """

    per_response: Mapping[str, Mapping[str, float]]
    aggregate: Mapping[str, MetricAggregate]

    def __post_init__(self):
        per = {pid: dict(scores) for pid, scores in self.per_response.items()}
        object.__setattr__(self, "per_response", per)
        object.__setattr__(self, "aggregate", dict(self.aggregate))
        for pid, scores in per.items():
            for metric, value in scores.items():
                if not 0.0 <= value <= 1.0:
                    raise ValueError(
                        f"score {metric}={value} for {pid!r} outside [0, 1]"
                    )
        for metric, agg in self.aggregate.items():
            values = [s[metric] for s in per.values() if metric in s]
            if not values:
                continue
            if agg.n != len(values):
                raise ValueError(f"aggregate n for {metric} does not match")
            if not math.isclose(agg.mean, sum(values) / len(values), abs_tol=1e-9):
                raise ValueError(f"aggregate mean for {metric} inconsistent")

    def to_dict(self) -> dict:
        return {
            "per_response": {pid: dict(s) for pid, s in sorted(self.per_response.items())},
            "aggregate": {
                m: {"mean": a.mean, "std": a.std, "n": a.n}
                for m, a in sorted(self.aggregate.items())
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: Mapping) -> "ScoreReport":
        return cls(
            per_response=d["per_response"],
            aggregate={
                m: MetricAggregate(a["mean"], a["std"], a["n"])
                for m, a in d["aggregate"].items()
            },
        )

    @classmethod
    def from_json(cls, text: str) -> "ScoreReport":
        return cls.from_dict(json.loads(text))


def validate_dataset(records: Iterable[MisinfoPost]) -> list[MisinfoPost]:
    """Reject duplicate ids and empty texts, preserving input order.

    MisinfoPost construction already rejects empty text, so the text check
    here only guards records built by other means.
    """
    seen: set[str] = set()
    out: list[MisinfoPost] = []
    for post in records:
        if post.id in seen:
            raise DuplicateId(post.id)
        if not post.text.strip():
            raise EmptyText(post.id)
        seen.add(post.id)
        out.append(post)
    return out


def parse_dataset_line(line: str) -> MisinfoPost:
    """Parse one ingestion record: a flat JSON object with keys
    id, text, topic, source_label. Unknown keys are ignored."""
    raw = json.loads(line)
    if not isinstance(raw, dict):
        raise ValueError("dataset record must be a JSON object")
    try:
        return MisinfoPost(
            id=str(raw["id"]),
            text=str(raw["text"]),
            topic=str(raw.get("topic", "other")),
            source_label=str(raw.get("source_label", "human_annotated")),
        )
    except KeyError as exc:
        raise ValueError(f"dataset record missing key {exc}") from exc


def load_dataset(path) -> list[MisinfoPost]:
    """Read a line-delimited dataset file and validate it."""
    posts = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                posts.append(parse_dataset_line(line))
    return validate_dataset(posts)


def dump_dataset(posts: Iterable[MisinfoPost], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for post in posts:
            fh.write(json.dumps({
                "id": post.id,
                "text": post.text,
                "topic": post.topic,
                "source_label": post.source_label,
            }, sort_keys=True) + "\n")


def evidence_to_dict(ev: Evidence) -> dict:
    return {
        "text": ev.text,
        "source_url": ev.source_url,
        "origin": ev.origin,
        "retrieval_score": ev.retrieval_score,
        "factual_score": ev.factual_score,
    }


def evidence_from_dict(d: Mapping) -> Evidence:
    return Evidence(
        text=d["text"],
        source_url=d.get("source_url"),
        origin=d["origin"],
        retrieval_score=d.get("retrieval_score", 0.0),
        factual_score=d.get("factual_score"),
    )


def bundle_to_dict(bundle: EvidenceBundle) -> dict:
    return {
        "post_id": bundle.post_id,
        "items": [evidence_to_dict(e) for e in bundle.items],
        "summary": bundle.summary,
        "k_used": bundle.k_used,
    }


def bundle_from_dict(d: Mapping) -> EvidenceBundle:
    return EvidenceBundle(
        post_id=d["post_id"],
        items=tuple(evidence_from_dict(e) for e in d["items"]),
        summary=d.get("summary"),
        k_used=d["k_used"],
    )
