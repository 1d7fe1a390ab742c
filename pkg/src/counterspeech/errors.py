"""Exception hierarchy shared across the pipeline.

Errors are grouped by the failure domain they report: data validation,
metric preconditions, retrieval channels, and remote ports. Port errors
all derive from PortError so the orchestrator can treat any backend
outage uniformly.
"""


class CounterspeechError(Exception):
    """Base class for all engine errors."""


# --- data validation ---

class DuplicateId(CounterspeechError):
    def __init__(self, post_id: str):
        super().__init__(f"duplicate post id: {post_id!r}")
        self.post_id = post_id


class EmptyText(CounterspeechError):
    def __init__(self, subject: str):
        super().__init__(f"empty text: {subject!r}")
        self.subject = subject


class ConfigError(CounterspeechError):
    """Invalid run or CLI configuration."""


# --- metric / math preconditions ---

class InvalidParams(CounterspeechError):
    """Parameter outside its documented domain (e.g. k1 <= 0)."""


class EmptyInput(CounterspeechError):
    """A metric was fed an empty sequence it cannot score."""


class DimensionMismatch(CounterspeechError):
    """Vectors of unequal length where equal length is required."""


class ZeroVector(CounterspeechError):
    """Cosine similarity is undefined for an all-zero vector."""


class DegenerateMarginals(CounterspeechError):
    """Chance agreement is 1; kappa is undefined."""


# --- remote ports ---

class PortError(CounterspeechError):
    """Base class for failures of any pluggable backend."""


class BackendUnavailable(PortError):
    """Chat backend unreachable after retries."""


class ContextTooLong(PortError):
    """The backend rejected the request as exceeding its context window."""


class EmbedderUnavailable(PortError):
    """Embedding backend unreachable or returned a malformed batch."""


class ProviderUnavailable(PortError):
    """Web-search provider failed at the query level."""


class RateLimited(ProviderUnavailable):
    def __init__(self, message: str = "rate limited", retry_after: float | None = None):
        super().__init__(message)
        self.retry_after = retry_after


class FetchTimeout(PortError):
    """Page fetch exceeded its deadline (non-fatal to a batch)."""


class NonHtmlContent(PortError):
    """Fetched resource is not HTML text (non-fatal to a batch)."""


class JudgeUnavailable(PortError):
    """Factual-accuracy judge unreachable or misbehaving."""


class UnparseableJudgeOutput(PortError):
    """Judge completion held no usable 1-5 score even after a re-ask."""


class ScorerUnavailable(PortError):
    """Politeness scorer unreachable or violating its protocol."""


class TemplateError(CounterspeechError):
    """Prompt template missing, malformed, or rendered with unfilled slots."""


class IndexFormatError(CounterspeechError):
    """Persisted knowledge index has an unknown or incompatible version."""
