"""Deterministic text mathematics: tokenizer, BM25, BLEU, cosine.

One tokenizer feeds BM25, BLEU, and the keyword index so every metric sees
the same token stream. All functions are pure; no global state.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass
from typing import Mapping, Sequence

from .errors import DimensionMismatch, EmptyInput, InvalidParams, ZeroVector

# Unicode letters and digits, underscore excluded.
_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


def tokenize(text: str) -> list[str]:
    """Lowercase and split on non-alphanumeric boundaries; digits kept."""
    return _TOKEN_RE.findall(text.lower())


def token_spans(text: str) -> list[tuple[str, int, int]]:
    """Tokens with their (start, end) character offsets in the original text."""
    return [(m.group(0).lower(), m.start(), m.end()) for m in _TOKEN_RE.finditer(text)]


@dataclass(frozen=True)
class CorpusStats:
    """Corpus-level quantities BM25 needs: N, avgdl, and document frequencies."""

    doc_count: int
    avg_doc_len: float
    doc_freq: Mapping[str, int]

    def __post_init__(self):
        object.__setattr__(self, "doc_freq", dict(self.doc_freq))
        if self.doc_count < 1:
            raise InvalidParams("doc_count must be positive")
        if self.avg_doc_len <= 0:
            raise InvalidParams("avg_doc_len must be > 0")
        for term, df in self.doc_freq.items():
            if not 1 <= df <= self.doc_count:
                raise InvalidParams(f"doc_freq[{term!r}]={df} outside [1, N]")


def corpus_stats(docs: Sequence[Sequence[str]]) -> CorpusStats:
    """Compute CorpusStats over tokenized documents."""
    if not docs:
        raise InvalidParams("corpus must contain at least one document")
    total = sum(len(d) for d in docs)
    if total == 0:
        raise InvalidParams("corpus has no tokens; avg_doc_len would be 0")
    df: Counter[str] = Counter()
    for doc in docs:
        df.update(set(doc))
    return CorpusStats(doc_count=len(docs), avg_doc_len=total / len(docs), doc_freq=dict(df))


def bm25_score(
    query: Sequence[str],
    doc: Sequence[str],
    stats: CorpusStats,
    k1: float = 1.5,
    b: float = 0.75,
) -> float:
    """Okapi BM25 with log1p idf, summed over unique query terms.

    idf(t) = ln(1 + (N - df + 0.5)/(df + 0.5)) is non-negative for df <= N,
    so scores never go below zero.
    """
    if k1 <= 0:
        raise InvalidParams(f"k1 must be > 0, got {k1}")
    if not 0.0 <= b <= 1.0:
        raise InvalidParams(f"b must lie in [0, 1], got {b}")
    tf = Counter(doc)
    dl = len(doc)
    n = stats.doc_count
    score = 0.0
    for term in set(query):
        f = tf.get(term, 0)
        if f == 0:
            continue
        df = stats.doc_freq.get(term, 0)
        idf = math.log(1.0 + (n - df + 0.5) / (df + 0.5))
        score += idf * (f * (k1 + 1.0)) / (f + k1 * (1.0 - b + b * dl / stats.avg_doc_len))
    return score


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu(candidate: Sequence[str], reference: Sequence[str], max_n: int = 4) -> float:
    """Unsmoothed BLEU: geometric mean of modified n-gram precisions times
    the brevity penalty. Any zero precision collapses the score to 0, which
    is the informative behavior for the evidence-overlap diagnostic."""
    if max_n < 1:
        raise InvalidParams(f"max_n must be >= 1, got {max_n}")
    if not candidate or not reference:
        raise EmptyInput("bleu requires non-empty candidate and reference")
    log_sum = 0.0
    for n in range(1, max_n + 1):
        cand_ngrams = _ngrams(candidate, n)
        total = sum(cand_ngrams.values())
        if total == 0:
            return 0.0
        ref_ngrams = _ngrams(reference, n)
        clipped = sum(min(c, ref_ngrams.get(g, 0)) for g, c in cand_ngrams.items())
        if clipped == 0:
            return 0.0
        log_sum += math.log(clipped / total)
    brevity = math.exp(min(0.0, 1.0 - len(reference) / len(candidate)))
    return math.exp(log_sum / max_n) * brevity


def minmax_normalize(scores: Sequence[float]) -> list[float]:
    """Min-max normalize a score batch; constant or singleton batches map
    to all-1.0 so a lone result still counts as a full-strength match."""
    if not scores:
        return []
    lo, hi = min(scores), max(scores)
    if hi == lo:
        return [1.0] * len(scores)
    return [(s - lo) / (hi - lo) for s in scores]


def cosine(a: Sequence[float], b: Sequence[float]) -> float:
    """Cosine similarity dot(a,b)/(|a||b|), clamped to [-1, 1]."""
    if len(a) != len(b):
        raise DimensionMismatch(f"vector lengths differ: {len(a)} vs {len(b)}")
    dot = sum(x * y for x, y in zip(a, b))
    na = math.sqrt(sum(x * x for x in a))
    nb = math.sqrt(sum(y * y for y in b))
    if na == 0.0 or nb == 0.0:
        raise ZeroVector("cosine undefined for the zero vector")
    return max(-1.0, min(1.0, dot / (na * nb)))
