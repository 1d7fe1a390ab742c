"""Four-metric evaluation harness plus annotation agreement statistics.

Politeness comes from a pluggable classifier port; relevance is BM25 of the
response against its post, self-normalized by the post's own score;
informativeness and factual accuracy are judge scores on a fixed 1-5 rubric
mapped affinely onto [0, 1]. Kappa and agreement support the annotation
consistency checks.
"""

from __future__ import annotations

import hashlib
import json
import math
from collections import Counter
from dataclasses import dataclass
from typing import Mapping, Optional, Protocol, Sequence

import requests

from .domain import METRICS, MetricAggregate, MisinfoPost, ScoreReport
from .errors import (
    DegenerateMarginals,
    EmptyText,
    InvalidParams,
    ScorerUnavailable,
)
from .llm_gateway import ChatBackend, judge_score
from .textmetrics import bm25_score, corpus_stats, tokenize

INFORMATIVENESS_RUBRIC = """Evaluate the informativeness of the following counterspeech response on a scale
of 1 to 5.

Score 1: Not Informative: The response lacks substance or is irrelevant.
Score 2: Slightly Informative: Some relevant points but too vague or missing
key details.
Score 3: Moderately Informative: Provides a basic understanding but lacks
depth.
Score 4: Mostly Informative: Covers most aspects well, with minor gaps.
Score 5: Completely Informative: Comprehensive, well-structured, detailed,
and highly informative."""

FACTUAL_ACCURACY_RUBRIC = """Your task is to assess the factual accuracy of the counterspeech response using
the provided evidence. Compare the response against the evidence and determine
its correctness using the scoring criteria below. You need to verify the
link/reference (if available) in the counterspeech response and also need to
write a comment explaining why you chose this score.

Score 1: Completely Inaccurate: Mostly inaccurate, contains false claims.
Score 2: Mostly Inaccurate: Some correct facts, but also contains misleading
information.
Score 3: Partially Accurate: Mostly correct, but lacks sufficient evidence.
Score 4: Mostly Accurate: Accurate, well-supported, minor inconsistencies.
Score 5: Completely Accurate: Fully fact-based, verified by reliable sources."""


@dataclass(frozen=True)
class JudgeRubric:
    metric: str
    template: str
    scale_min: int = 1
    scale_max: int = 5

    def __post_init__(self):
        if self.metric not in ("informativeness", "factual_accuracy"):
            raise ValueError(f"unknown judged metric {self.metric!r}")
        for level in range(self.scale_min, self.scale_max + 1):
            if f"Score {level}:" not in self.template:
                raise ValueError(f"rubric lacks the Score {level} description")


def default_rubric(metric: str) -> JudgeRubric:
    if metric == "informativeness":
        return JudgeRubric(metric=metric, template=INFORMATIVENESS_RUBRIC)
    if metric == "factual_accuracy":
        return JudgeRubric(metric=metric, template=FACTUAL_ACCURACY_RUBRIC)
    raise ValueError(f"no rubric for metric {metric!r}")


class PolitenessScorer(Protocol):
    def score(self, text: str) -> float: ...


def politeness(response: str, scorer: PolitenessScorer) -> float:
    """Probability-of-polite from the classifier port; out-of-range values
    are protocol violations, not scores."""
    value = scorer.score(response)
    if not isinstance(value, (int, float)) or not 0.0 <= float(value) <= 1.0:
        raise ScorerUnavailable(f"politeness scorer returned {value!r}, expected [0, 1]")
    return float(value)


def relevance(post: MisinfoPost, response: str, k1: float = 1.5, b: float = 0.75) -> float:
    """BM25 of the response (query) against the post (single-doc corpus),
    normalized by the post's self-score. Shared terms contribute exactly
    what they contribute to the self-score, so the ratio stays in [0, 1]."""
    post_tokens = tokenize(post.text)
    response_tokens = tokenize(response)
    if not post_tokens:
        raise EmptyText(post.id)
    if not response_tokens:
        raise EmptyText("response")
    stats = corpus_stats([post_tokens])
    raw = bm25_score(response_tokens, post_tokens, stats, k1, b)
    self_score = bm25_score(post_tokens, post_tokens, stats, k1, b)
    return min(1.0, raw / self_score)


def judged_metric(
    response: str, context: str, rubric: JudgeRubric, backend: ChatBackend
) -> float:
    """Judge the response on the rubric's 1-5 scale, normalized to [0, 1]
    via (score - 1) / 4."""
    parts = [rubric.template]
    if context:
        parts.append(f"Evidence:\n{context}")
    parts.append(f"Counterspeech Response:\n{response}")
    parts.append("Score:")
    score = judge_score("\n\n".join(parts), backend)
    return (score - rubric.scale_min) / (rubric.scale_max - rubric.scale_min)


class GatewayFactualJudge:
    """Adapter exposing the factual-accuracy rubric judge as a plain
    per-snippet scorer for the dynamic-retrieval filter."""

    def __init__(self, backend: ChatBackend, rubric: Optional[JudgeRubric] = None):
        self.backend = backend
        self.rubric = rubric or default_rubric("factual_accuracy")

    def score(self, text: str) -> float:
        prompt = f"{self.rubric.template}\n\nStatement:\n{text}\n\nScore:"
        value = judge_score(prompt, self.backend)
        return (value - self.rubric.scale_min) / (self.rubric.scale_max - self.rubric.scale_min)


class HttpPolitenessScorer:
    """Politeness port over HTTP JSON: POST {text} -> {score}. Accepts the
    legacy key polite_probability as a fallback."""

    def __init__(self, endpoint: str, timeout: float = 15.0):
        self.endpoint = endpoint
        self.timeout = timeout

    def score(self, text: str) -> float:
        try:
            resp = requests.post(
                self.endpoint,
                data=json.dumps({"text": text}),
                headers={"Content-Type": "application/json"},
                timeout=self.timeout,
            )
        except requests.RequestException as exc:
            raise ScorerUnavailable(str(exc)) from exc
        if resp.status_code != 200:
            raise ScorerUnavailable(f"HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            payload = resp.json()
            raw = payload.get("score", payload.get("polite_probability"))
            return float(raw)
        except (ValueError, TypeError) as exc:
            raise ScorerUnavailable(f"malformed politeness response: {exc}") from exc


class PinnedPolitenessScorer:
    def __init__(self, value: float):
        self.value = value

    def score(self, text: str) -> float:
        return self.value


class HashPolitenessScorer:
    """Deterministic mock: seeded hash of the text mapped into [0, 1]."""

    def __init__(self, seed: int = 0):
        self.seed = seed

    def score(self, text: str) -> float:
        digest = hashlib.sha256(f"{self.seed}:{text}".encode("utf-8")).digest()
        return int.from_bytes(digest[:4], "big") / 0xFFFFFFFF


@dataclass(frozen=True)
class AnnotationPair:
    item_id: str
    label_a: int
    label_b: int
    label_domain: frozenset[int]

    def __post_init__(self):
        object.__setattr__(self, "label_domain", frozenset(self.label_domain))
        if self.label_a not in self.label_domain or self.label_b not in self.label_domain:
            raise ValueError(
                f"labels ({self.label_a}, {self.label_b}) outside domain "
                f"{sorted(self.label_domain)}"
            )


def load_annotations(path) -> list[AnnotationPair]:
    """Read line-delimited {item_id, label_a, label_b} records; the label
    domain is the set of labels observed across the file."""
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    domain = frozenset(int(r["label_a"]) for r in rows) | frozenset(
        int(r["label_b"]) for r in rows
    )
    return [
        AnnotationPair(
            item_id=str(r["item_id"]),
            label_a=int(r["label_a"]),
            label_b=int(r["label_b"]),
            label_domain=domain,
        )
        for r in rows
    ]


def agreement_rate(pairs: Sequence[AnnotationPair]) -> float:
    if not pairs:
        raise InvalidParams("agreement_rate requires at least one pair")
    return sum(1 for p in pairs if p.label_a == p.label_b) / len(pairs)


def cohen_kappa(pairs: Sequence[AnnotationPair]) -> float:
    """Chance-corrected agreement (p_o - p_e) / (1 - p_e) with p_e from the
    marginal label frequencies of each annotator."""
    if not pairs:
        raise InvalidParams("cohen_kappa requires at least one pair")
    n = len(pairs)
    p_obs = sum(1 for p in pairs if p.label_a == p.label_b) / n
    freq_a = Counter(p.label_a for p in pairs)
    freq_b = Counter(p.label_b for p in pairs)
    p_exp = sum(
        (freq_a[label] / n) * (freq_b[label] / n) for label in set(freq_a) | set(freq_b)
    )
    if p_exp == 1.0:
        raise DegenerateMarginals("both annotators constant on one label; kappa undefined")
    return (p_obs - p_exp) / (1.0 - p_exp)


def aggregate(
    per_response: Mapping[str, Mapping[str, float]], sample_std: bool = False
) -> ScoreReport:
    """Fold per-response scores into a ScoreReport. Population std (divisor
    n) by default; sample_std switches to divisor n-1 (0.0 for n=1)."""
    if not per_response:
        raise InvalidParams("aggregate requires at least one scored response")
    metrics: list[str] = [m for m in METRICS if any(m in s for s in per_response.values())]
    for scores in per_response.values():
        for metric in scores:
            if metric not in metrics:
                metrics.append(metric)
    agg: dict[str, MetricAggregate] = {}
    for metric in metrics:
        values = [s[metric] for s in per_response.values() if metric in s]
        n = len(values)
        mean = sum(values) / n
        sq = sum((v - mean) ** 2 for v in values)
        if sample_std:
            std = math.sqrt(sq / (n - 1)) if n > 1 else 0.0
        else:
            std = math.sqrt(sq / n)
        agg[metric] = MetricAggregate(mean=mean, std=std, n=n)
    return ScoreReport(per_response=per_response, aggregate=agg)


def format_cell(mean: float, std: float) -> str:
    """Render one aggregate as the two-decimal "mean (std)" table cell."""
    return f"{mean:.2f} ({std:.2f})"


def summary_table_csv(report: ScoreReport, label: str = "") -> str:
    """One-row comma-separated summary with "mean (std)" cells per metric."""
    metrics = list(report.aggregate.keys())
    header = ",".join(["method"] + metrics)
    cells = [format_cell(report.aggregate[m].mean, report.aggregate[m].std) for m in metrics]
    return header + "\n" + ",".join([label] + cells) + "\n"


def write_per_response_scores(report: ScoreReport, path) -> None:
    """Line-delimited per-response scores, one JSON object per post."""
    with open(path, "w", encoding="utf-8") as fh:
        for post_id in sorted(report.per_response):
            record = {"post_id": post_id, **report.per_response[post_id]}
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def read_per_response_scores(path) -> dict[str, dict[str, float]]:
    out: dict[str, dict[str, float]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            post_id = record.pop("post_id")
            out[post_id] = {k: float(v) for k, v in record.items()}
    return out


def score_response(
    post: MisinfoPost,
    response_text: str,
    evidence_context: str,
    politeness_scorer: PolitenessScorer,
    judge_backend: ChatBackend,
) -> dict[str, float]:
    """Score one response on all four metrics. factual accuracy judges
    against the gathered evidence context; informativeness needs none."""
    return {
        "politeness": politeness(response_text, politeness_scorer),
        "relevance": relevance(post, response_text),
        "informativeness": judged_metric(
            response_text, "", default_rubric("informativeness"), judge_backend
        ),
        "factual_accuracy": judged_metric(
            response_text, evidence_context, default_rubric("factual_accuracy"), judge_backend
        ),
    }
