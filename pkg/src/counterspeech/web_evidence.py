"""Dynamic retrieval: web search, page fetch, sentence extraction, fact filter.

All three ports (search provider, page fetcher, factual judge) are abstract
so tests and offline runs use canned fixtures. Page-level failures are
logged and skipped; only a search failure aborts a retrieval call.
"""

from __future__ import annotations

import hashlib
import html as html_lib
import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Protocol, Sequence
from urllib.parse import urlparse

import requests

from .domain import Evidence, MisinfoPost
from .errors import (
    FetchTimeout,
    InvalidParams,
    JudgeUnavailable,
    NonHtmlContent,
    PortError,
    ProviderUnavailable,
    RateLimited,
)
from .textmetrics import tokenize

log = logging.getLogger(__name__)

DEFAULT_QUERY_LIMIT = 500
DEFAULT_USER_AGENT = "counterspeech-engine/0.1"
FETCH_FANOUT = 4


@dataclass(frozen=True)
class SearchResult:
    title: str
    url: str
    snippet: str = ""

    def __post_init__(self):
        parsed = urlparse(self.url)
        if not parsed.scheme or not parsed.netloc:
            raise ValueError(f"search result url not syntactically valid: {self.url!r}")


@dataclass(frozen=True)
class ExtractionConfig:
    max_results: int = 5
    max_sentences_per_page: int = 10
    min_sentence_tokens: int = 5
    fact_threshold: float = 0.65
    fetch_timeout: float = 10.0

    def __post_init__(self):
        if self.max_results < 1 or self.max_sentences_per_page < 1 or self.min_sentence_tokens < 1:
            raise InvalidParams("extraction limits must be >= 1")
        if not 0.0 <= self.fact_threshold <= 1.0:
            raise InvalidParams("fact_threshold must lie in [0, 1]")


@dataclass(frozen=True)
class FetchedPage:
    url: str
    content_type: str
    body: str


class SearchProvider(Protocol):
    query_limit: int

    def run_query(self, query: str, max_results: int) -> list[SearchResult]: ...


class PageFetcher(Protocol):
    def fetch(self, url: str, timeout: float, user_agent: str) -> FetchedPage: ...


class JudgeScorer(Protocol):
    def score(self, text: str) -> float: ...


def search(query: str, max_results: int, provider: SearchProvider) -> list[SearchResult]:
    """Query the provider with the post text truncated to its length limit."""
    if not query.strip():
        raise InvalidParams("search query must be non-empty")
    limit = getattr(provider, "query_limit", DEFAULT_QUERY_LIMIT)
    results = provider.run_query(query[:limit], max_results)
    return results[:max_results]


_TAG_BLOCKS = re.compile(r"<(script|style)[\s\S]*?</\1>", re.IGNORECASE)
_TAGS = re.compile(r"<[^>]+>")
_SENTENCE_SPLIT = re.compile(r"(?<=[.?!])\s+")


def visible_text(markup: str) -> str:
    """Strip script/style blocks and tags, unescape entities, collapse space."""
    text = _TAG_BLOCKS.sub(" ", markup)
    text = _TAGS.sub(" ", text)
    text = html_lib.unescape(text)
    return re.sub(r"\s+", " ", text).strip()


def split_sentences(text: str) -> list[str]:
    """Split on terminal punctuation followed by whitespace."""
    return [s.strip() for s in _SENTENCE_SPLIT.split(text) if s.strip()]


def fetch_and_extract(
    result: SearchResult, cfg: ExtractionConfig, fetcher: PageFetcher
) -> list[Evidence]:
    """Fetch one result page and extract candidate factual sentences in
    document order. factual_score stays unset until the filter runs."""
    page = fetcher.fetch(result.url, timeout=cfg.fetch_timeout, user_agent=DEFAULT_USER_AGENT)
    if "html" not in page.content_type.lower():
        raise NonHtmlContent(f"{result.url}: content type {page.content_type!r}")
    sentences = split_sentences(visible_text(page.body))
    kept = [s for s in sentences if len(tokenize(s)) >= cfg.min_sentence_tokens]
    return [
        Evidence(text=s, origin="dynamic", source_url=result.url)
        for s in kept[: cfg.max_sentences_per_page]
    ]


def factual_filter(
    evidence: Sequence[Evidence], judge: JudgeScorer, threshold: float
) -> list[Evidence]:
    """Judge every item and keep those scoring strictly above the threshold,
    preserving order. A non-empty result therefore has mean score above the
    threshold as well."""
    if not 0.0 <= threshold <= 1.0:
        raise InvalidParams("threshold must lie in [0, 1]")
    kept: list[Evidence] = []
    for item in evidence:
        score = judge.score(item.text)
        if not 0.0 <= score <= 1.0:
            raise JudgeUnavailable(f"judge returned {score} outside [0, 1]")
        if score > threshold:
            kept.append(replace(item, factual_score=score))
    return kept


def dynamic_retrieve(
    post: MisinfoPost,
    cfg: ExtractionConfig,
    provider: SearchProvider,
    fetcher: PageFetcher,
    judge: JudgeScorer,
) -> list[Evidence]:
    """search -> fetch/extract each result (page failures skipped) -> filter.

    Fetches fan out over a small thread pool; assembly re-establishes
    provider order so concurrency never changes the output.
    """
    results = search(post.text, cfg.max_results, provider)
    if not results:
        return []

    def one(result: SearchResult) -> list[Evidence]:
        try:
            return fetch_and_extract(result, cfg, fetcher)
        except (FetchTimeout, NonHtmlContent, PortError) as exc:
            log.warning("skipping %s: %s", result.url, exc)
            return []

    with ThreadPoolExecutor(max_workers=min(FETCH_FANOUT, len(results))) as pool:
        batches = list(pool.map(one, results))
    pooled = [item for batch in batches for item in batch]
    return factual_filter(pooled, judge, cfg.fact_threshold)


class HttpSearchProvider:
    """Search port over HTTP JSON: POST {query, max_results} returns a list
    of {title, url, snippet} (bare or under a "results" key)."""

    query_limit = DEFAULT_QUERY_LIMIT

    def __init__(self, endpoint: str, timeout: float = 15.0):
        self.endpoint = endpoint
        self.timeout = timeout

    def run_query(self, query: str, max_results: int) -> list[SearchResult]:
        try:
            resp = requests.post(
                self.endpoint,
                data=json.dumps({"query": query, "max_results": max_results}),
                headers={"Content-Type": "application/json"},
                timeout=self.timeout,
            )
        except requests.RequestException as exc:
            raise ProviderUnavailable(str(exc)) from exc
        if resp.status_code == 429:
            retry_after = resp.headers.get("Retry-After")
            raise RateLimited(retry_after=float(retry_after) if retry_after else None)
        if resp.status_code != 200:
            raise ProviderUnavailable(f"HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            payload = resp.json()
            rows = payload["results"] if isinstance(payload, dict) else payload
            return [
                SearchResult(
                    title=str(r.get("title", "")),
                    url=str(r["url"]),
                    snippet=str(r.get("snippet", "")),
                )
                for r in rows
            ]
        except (ValueError, KeyError, TypeError, AttributeError) as exc:
            raise ProviderUnavailable(f"malformed search response: {exc}") from exc


class HttpFetcher:
    """GET a result URL with a fixed user agent and timeout."""

    def __init__(self, timeout_status_as_unavailable: bool = False):
        self.timeout_status_as_unavailable = timeout_status_as_unavailable

    def fetch(self, url: str, timeout: float, user_agent: str) -> FetchedPage:
        try:
            resp = requests.get(url, timeout=timeout, headers={"User-Agent": user_agent})
        except requests.Timeout as exc:
            raise FetchTimeout(f"{url}: {exc}") from exc
        except requests.RequestException as exc:
            raise FetchTimeout(f"{url}: {exc}") from exc
        content_type = resp.headers.get("Content-Type", "text/html")
        return FetchedPage(url=url, content_type=content_type, body=resp.text)


def url_key(url: str) -> str:
    """Filename stem used by the fixture page store."""
    return hashlib.sha256(url.encode("utf-8")).hexdigest()[:16]


class DirectoryFetcher:
    """Fixture fetcher: pages stored as <url-hash>.html in a directory."""

    def __init__(self, root):
        self.root = Path(root)

    def store(self, url: str, body: str) -> Path:
        path = self.root / f"{url_key(url)}.html"
        path.write_text(body, encoding="utf-8")
        return path

    def fetch(self, url: str, timeout: float, user_agent: str) -> FetchedPage:
        path = self.root / f"{url_key(url)}.html"
        if not path.exists():
            raise FetchTimeout(f"no fixture page for {url}")
        return FetchedPage(url=url, content_type="text/html", body=path.read_text(encoding="utf-8"))


_MOCK_SENTENCES = (
    "Public health agencies report that claims about {t} are tracked through ongoing clinical surveillance.",
    "Peer reviewed research has found no credible evidence supporting viral claims about {t}.",
    "Medical experts recommend consulting verified guidance before acting on posts about {t}.",
    "Recent fact checks conclude that circulating statements about {t} misrepresent the underlying studies.",
    "Official monitoring data show that {t} outcomes remain consistent with published safety profiles.",
    "Independent reviewers verified that corrections about {t} cite primary scientific literature.",
)


class MockSearchProvider:
    """Deterministic offline provider: fabricates result URLs from a seeded
    hash of the query."""

    query_limit = DEFAULT_QUERY_LIMIT

    def __init__(self, seed: int = 0, page_count: int = 3):
        self.seed = seed
        self.page_count = page_count

    def run_query(self, query: str, max_results: int) -> list[SearchResult]:
        digest = hashlib.sha256(f"{self.seed}:{query}".encode("utf-8")).hexdigest()[:12]
        count = min(self.page_count, max_results)
        return [
            SearchResult(
                title=f"Mock result {i + 1}",
                url=f"https://mock.invalid/{digest}/{i}",
                snippet="",
            )
            for i in range(count)
        ]


class MockFetcher:
    """Deterministic offline fetcher: builds a small factual-looking page
    from a seeded hash of the URL."""

    def __init__(self, seed: int = 0, topic_word: str = "the claim"):
        self.seed = seed
        self.topic_word = topic_word

    def fetch(self, url: str, timeout: float, user_agent: str) -> FetchedPage:
        digest = hashlib.sha256(f"{self.seed}:{url}".encode("utf-8")).digest()
        count = 2 + digest[0] % 3
        picks = [
            _MOCK_SENTENCES[digest[1 + i] % len(_MOCK_SENTENCES)].format(t=self.topic_word)
            for i in range(count)
        ]
        body = "<html><body><p>" + " ".join(dict.fromkeys(picks)) + "</p></body></html>"
        return FetchedPage(url=url, content_type="text/html", body=body)


class PinnedJudge:
    """Judge pinned to one score; used to pin factual filtering in tests."""

    def __init__(self, value: float):
        self.value = value

    def score(self, text: str) -> float:
        return self.value


class HashJudge:
    """Deterministic judge: seeded hash of the text mapped into [0, 1]."""

    def __init__(self, seed: int = 0):
        self.seed = seed

    def score(self, text: str) -> float:
        digest = hashlib.sha256(f"{self.seed}:{text}".encode("utf-8")).digest()
        return int.from_bytes(digest[:4], "big") / 0xFFFFFFFF


class SequenceJudge:
    """Judge replaying a fixed score sequence in call order."""

    def __init__(self, scores: Sequence[float]):
        self.scores = list(scores)
        self.calls = 0

    def score(self, text: str) -> float:
        if self.calls >= len(self.scores):
            raise JudgeUnavailable("sequence judge exhausted")
        value = self.scores[self.calls]
        self.calls += 1
        return value


