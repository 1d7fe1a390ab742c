"""Pluggable chat-completion and embedding ports.

The wire protocol is the chat-completions JSON schema (POST {model,
messages, temperature, top_p, max_tokens}) that every local and hosted
LLM server exposes. Deterministic in-process mocks cover every pipeline
path offline: echo, canned-map, and a seeded rubric judge.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
import time
from dataclasses import dataclass, replace
from typing import Callable, Optional, Protocol, Sequence

import requests

from .errors import (
    BackendUnavailable,
    ContextTooLong,
    DimensionMismatch,
    EmbedderUnavailable,
    UnparseableJudgeOutput,
)
from .textmetrics import tokenize

log = logging.getLogger(__name__)

DEFAULT_MODEL_ID = "Llama-3.1-8B-Instruct"
DEFAULT_EMBED_MODEL_ID = "sentence-transformers/all-mpnet-base-v2"

STAGES = ("summarize", "generate", "refine", "judge")

# (temperature, top_p, max_tokens) per pipeline stage.
_STAGE_DEFAULTS = {
    "summarize": (0.3, 0.8, 384),
    "generate": (0.6, 0.85, 512),
    "refine": (0.4, 0.85, 512),
    "judge": (0.0, 1.0, 16),
}


@dataclass(frozen=True)
class GenParams:
    temperature: float
    top_p: float
    max_tokens: int
    stage: str

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if not 0.0 < self.top_p <= 1.0:
            raise ValueError("top_p must lie in (0, 1]")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")
        if self.stage not in STAGES:
            raise ValueError(f"unknown stage {self.stage!r}")

    @classmethod
    def for_stage(cls, stage: str, **overrides) -> "GenParams":
        try:
            temperature, top_p, max_tokens = _STAGE_DEFAULTS[stage]
        except KeyError:
            raise ValueError(f"unknown stage {stage!r}") from None
        params = cls(temperature=temperature, top_p=top_p, max_tokens=max_tokens, stage=stage)
        return replace(params, **overrides) if overrides else params


@dataclass(frozen=True)
class ChatRequest:
    user: str
    params: GenParams
    system: Optional[str] = None
    model_id: str = DEFAULT_MODEL_ID

    def __post_init__(self):
        if not self.user:
            raise ValueError("user message must be non-empty")


class ChatBackend(Protocol):
    def complete(self, req: ChatRequest) -> str: ...


class EmbeddingBackend(Protocol):
    dimension: int

    def embed(self, texts: Sequence[str]) -> list[list[float]]: ...


class TransientBackendError(Exception):
    """Internal marker for failures worth retrying."""


def complete(
    req: ChatRequest,
    backend: ChatBackend,
    retries: int = 3,
    backoff: float = 0.5,
    sleep: Callable[[float], None] = time.sleep,
) -> str:
    """Run one chat completion, retrying transient failures with
    exponential backoff. ContextTooLong is surfaced immediately."""
    last: Exception | None = None
    for attempt in range(retries):
        try:
            return backend.complete(req)
        except ContextTooLong:
            raise
        except TransientBackendError as exc:
            last = exc
            log.debug("chat attempt %d/%d failed: %s", attempt + 1, retries, exc)
            if attempt + 1 < retries:
                sleep(backoff * (2 ** attempt))
        except BackendUnavailable:
            raise
    raise BackendUnavailable(f"chat backend failed after {retries} attempts: {last}")


def embed(texts: Sequence[str], backend: EmbeddingBackend) -> list[list[float]]:
    """Embed a batch, preserving order and multiplicity."""
    if not texts:
        raise ValueError("embed requires at least one text")
    vectors = backend.embed(list(texts))
    if len(vectors) != len(texts):
        raise EmbedderUnavailable(
            f"backend returned {len(vectors)} vectors for {len(texts)} inputs"
        )
    dims = {len(v) for v in vectors}
    if len(dims) != 1:
        raise DimensionMismatch(f"ragged embedding batch: dimensions {sorted(dims)}")
    return [list(v) for v in vectors]


_INT_RE = re.compile(r"-?\d+")

_REASK_SUFFIX = "\n\nRespond with a single integer from 1 to 5 and nothing else."


def _parse_judge(completion: str) -> Optional[int]:
    m = _INT_RE.search(completion)
    if m is None:
        return None
    value = int(m.group(0))
    return value if 1 <= value <= 5 else None


def judge_score(prompt: str, backend: ChatBackend, retries: int = 3, backoff: float = 0.0) -> int:
    """Ask the judge for a 1-5 score; one re-ask on unparseable output."""
    params = GenParams.for_stage("judge")
    first = complete(ChatRequest(user=prompt, params=params), backend, retries, backoff)
    score = _parse_judge(first)
    if score is not None:
        return score
    second = complete(
        ChatRequest(user=prompt + _REASK_SUFFIX, params=params), backend, retries, backoff
    )
    score = _parse_judge(second)
    if score is not None:
        return score
    raise UnparseableJudgeOutput(
        f"no 1-5 score in judge output: {first[:80]!r} then {second[:80]!r}"
    )


def prompt_key(prompt: str) -> str:
    """Stable hash used to key canned-map mock responses."""
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()[:16]


class MockChatBackend:
    """Deterministic offline chat backend.

    Modes:
      echo        - returns the user message unchanged
      canned      - looks responses up by prompt_key(user); missing keys
                    fall back to fallback_text if set, else fail loudly
      rubric_judge- emits "Score: k" with k in 1..5 derived from a seeded
                    hash of the prompt
    """

    def __init__(
        self,
        mode: str = "echo",
        canned: Optional[dict[str, str]] = None,
        seed: int = 0,
        fallback_text: Optional[str] = None,
    ):
        if mode not in ("echo", "canned", "rubric_judge"):
            raise ValueError(f"unknown mock mode {mode!r}")
        self.mode = mode
        self.canned = dict(canned or {})
        self.seed = seed
        self.fallback_text = fallback_text
        self.calls: list[ChatRequest] = []

    def complete(self, req: ChatRequest) -> str:
        self.calls.append(req)
        if self.mode == "echo":
            return req.user
        if self.mode == "canned":
            key = prompt_key(req.user)
            if key in self.canned:
                return self.canned[key]
            if self.fallback_text is not None:
                return self.fallback_text
            raise BackendUnavailable(f"no canned response for prompt key {key}")
        digest = hashlib.sha256(f"{self.seed}:{req.user}".encode("utf-8")).digest()
        return f"Score: {1 + digest[0] % 5}"


class StageRouterChatBackend:
    """Routes completions to a backend chosen by the request's stage, so an
    offline run can echo generation stages while a seeded rubric judge
    answers judge prompts."""

    def __init__(self, default: ChatBackend, routes: Optional[dict[str, ChatBackend]] = None):
        self.default = default
        self.routes = dict(routes or {})

    def complete(self, req: ChatRequest) -> str:
        backend = self.routes.get(req.params.stage, self.default)
        return backend.complete(req)


class FailingChatBackend:
    """Always raises; exercises retry exhaustion."""

    def __init__(self, transient: bool = True):
        self.transient = transient
        self.attempts = 0

    def complete(self, req: ChatRequest) -> str:
        self.attempts += 1
        if self.transient:
            raise TransientBackendError("backend down")
        raise BackendUnavailable("backend down")


class MockEmbedder:
    """Deterministic feature-hash embedder: each token lands in a signed
    bucket, the vector is L2-normalized. Identical token streams map to
    identical vectors; token-free texts fall back to the first basis
    vector so cosine stays defined."""

    def __init__(self, dimension: int = 32):
        if dimension < 2:
            raise ValueError("dimension must be >= 2")
        self.dimension = dimension

    def _embed_one(self, text: str) -> list[float]:
        vec = [0.0] * self.dimension
        tokens = tokenize(text)
        if not tokens:
            vec[0] = 1.0
            return vec
        for token in tokens:
            digest = hashlib.sha256(token.encode("utf-8")).digest()
            bucket = digest[0] % self.dimension
            sign = 1.0 if digest[1] % 2 == 0 else -1.0
            vec[bucket] += sign
        norm = sum(x * x for x in vec) ** 0.5
        if norm == 0.0:
            vec[0] = 1.0
            return vec
        return [x / norm for x in vec]

    def embed(self, texts: Sequence[str]) -> list[list[float]]:
        return [self._embed_one(t) for t in texts]


def _bearer_headers(api_key: Optional[str]) -> dict[str, str]:
    headers = {"Content-Type": "application/json"}
    if api_key:
        headers["Authorization"] = f"Bearer {api_key}"
    return headers


class HttpChatBackend:
    """Chat-completions HTTP client."""

    def __init__(self, endpoint: str, api_key: Optional[str] = None, timeout: float = 60.0):
        self.endpoint = endpoint
        self.api_key = api_key
        self.timeout = timeout

    def complete(self, req: ChatRequest) -> str:
        messages = []
        if req.system:
            messages.append({"role": "system", "content": req.system})
        messages.append({"role": "user", "content": req.user})
        payload = {
            "model": req.model_id,
            "messages": messages,
            "temperature": req.params.temperature,
            "top_p": req.params.top_p,
            "max_tokens": req.params.max_tokens,
        }
        try:
            resp = requests.post(
                self.endpoint,
                data=json.dumps(payload),
                headers=_bearer_headers(self.api_key),
                timeout=self.timeout,
            )
        except requests.RequestException as exc:
            raise TransientBackendError(str(exc)) from exc
        if resp.status_code in (408, 429) or resp.status_code >= 500:
            raise TransientBackendError(f"HTTP {resp.status_code}")
        if resp.status_code >= 400:
            body = resp.text[:500]
            if "context" in body.lower() and ("length" in body.lower() or "long" in body.lower()):
                raise ContextTooLong(body)
            raise BackendUnavailable(f"HTTP {resp.status_code}: {body}")
        try:
            data = resp.json()
            return data["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise BackendUnavailable(f"malformed chat response: {exc}") from exc


class HttpEmbeddingBackend:
    """Embeddings HTTP client: POST {input, model} -> {data: [{embedding}]}."""

    def __init__(
        self,
        endpoint: str,
        api_key: Optional[str] = None,
        timeout: float = 60.0,
        model_id: str = DEFAULT_EMBED_MODEL_ID,
    ):
        self.endpoint = endpoint
        self.api_key = api_key
        self.timeout = timeout
        self.model_id = model_id
        self.dimension = -1  # learned from the first response

    def embed(self, texts: Sequence[str]) -> list[list[float]]:
        payload = {"input": list(texts), "model": self.model_id}
        try:
            resp = requests.post(
                self.endpoint,
                data=json.dumps(payload),
                headers=_bearer_headers(self.api_key),
                timeout=self.timeout,
            )
        except requests.RequestException as exc:
            raise EmbedderUnavailable(str(exc)) from exc
        if resp.status_code != 200:
            raise EmbedderUnavailable(f"HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            vectors = [row["embedding"] for row in resp.json()["data"]]
        except (ValueError, KeyError, TypeError) as exc:
            raise EmbedderUnavailable(f"malformed embedding response: {exc}") from exc
        if vectors:
            self.dimension = len(vectors[0])
        return vectors
