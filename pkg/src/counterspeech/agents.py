"""Summarization, generation, and refinement agents.

Prompt bodies live as versioned text files in a templates directory so a
template set can be swapped by path without rebuilding. Rendering fails
loudly on unfilled placeholders. Evidence ranking fuses BM25 and embedding
similarity with per-batch min-max normalization.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from pathlib import Path
from string import Formatter
from typing import Optional, Sequence

from .domain import Evidence, EvidenceBundle, MisinfoPost
from .errors import ConfigError, InvalidParams, TemplateError
from .llm_gateway import ChatBackend, ChatRequest, EmbeddingBackend, GenParams, complete, embed
from .textmetrics import bm25_score, corpus_stats, cosine, minmax_normalize, tokenize

log = logging.getLogger(__name__)

TEMPLATE_NAMES = (
    "direct",
    "guided",
    "guided_gen_multiagent",
    "summarize",
    "refine_guided",
    "cot_generate",
    "cot_refine",
)

# Soft budget from the refinement instructions; monitored, never truncated.
WORD_BUDGET = 120

_DEFAULT_TEMPLATE_DIR = Path(__file__).parent / "templates"


def load_templates(directory=None) -> dict[str, str]:
    """Load every known template body from a directory (default: bundled set)."""
    root = Path(directory) if directory is not None else _DEFAULT_TEMPLATE_DIR
    templates: dict[str, str] = {}
    for name in TEMPLATE_NAMES:
        path = root / f"{name}.txt"
        if not path.is_file():
            raise TemplateError(f"template {name!r} not found under {root}")
        templates[name] = path.read_text(encoding="utf-8")
    return templates


def render(body: str, **fields: str) -> str:
    """Fill named placeholders; any unfilled placeholder is an error."""
    needed = {name for _, name, _, _ in Formatter().parse(body) if name}
    missing = needed - fields.keys()
    if missing:
        raise TemplateError(f"unfilled placeholders: {sorted(missing)}")
    return body.format(**{name: fields[name] for name in needed})


@dataclass(frozen=True)
class RankedEvidence:
    evidence: Evidence
    bm25_component: float
    embed_component: float
    fused: float


def word_count(text: str) -> int:
    return len(text.split())


def exceeds_word_budget(text: str, budget: int = WORD_BUDGET) -> bool:
    return word_count(text) > budget


def select_top_k(
    post: MisinfoPost,
    pool: Sequence[Evidence],
    k: int = 10,
    embedder: EmbeddingBackend | None = None,
    bm25_weight: float = 0.5,
    k1: float = 1.5,
    b: float = 0.75,
) -> list[RankedEvidence]:
    """Rank a mixed static/dynamic pool against the post and keep the top k.

    BM25 uses corpus stats computed over the pool itself, since dynamic
    evidence belongs to no prebuilt index. Both raw component batches are
    min-max normalized before the weighted fusion. Ties break by ascending
    evidence text for cross-run determinism.
    """
    if k < 1:
        raise InvalidParams("k must be >= 1")
    if embedder is None:
        raise InvalidParams("select_top_k requires an embedder")
    if not 0.0 <= bm25_weight <= 1.0:
        raise InvalidParams("bm25_weight must lie in [0, 1]")
    if not pool:
        return []
    post_tokens = tokenize(post.text)
    docs = [tokenize(e.text) for e in pool]
    stats = corpus_stats(docs)
    bm25_raw = [bm25_score(post_tokens, doc, stats, k1, b) for doc in docs]
    vectors = embed([post.text] + [e.text for e in pool], embedder)
    post_vec = vectors[0]
    embed_raw = [cosine(post_vec, vec) for vec in vectors[1:]]
    bm25_norm = minmax_normalize(bm25_raw)
    embed_norm = minmax_normalize(embed_raw)
    ranked = [
        RankedEvidence(
            evidence=item,
            bm25_component=raw_b,
            embed_component=raw_e,
            fused=bm25_weight * norm_b + (1.0 - bm25_weight) * norm_e,
        )
        for item, raw_b, raw_e, norm_b, norm_e in zip(
            pool, bm25_raw, embed_raw, bm25_norm, embed_norm
        )
    ]
    ranked.sort(key=lambda r: (-r.fused, r.evidence.text))
    return ranked[:k]


def summarize(
    bundle: EvidenceBundle,
    backend: ChatBackend,
    templates: dict[str, str],
    params: Optional[GenParams] = None,
) -> EvidenceBundle:
    """Condense the bundle's evidence into a summary via the summarize stage."""
    if not bundle.items:
        raise ConfigError("cannot summarize an empty evidence bundle")
    prompt = render(
        templates["summarize"],
        combined_filter_evidence=bundle.joined_text("\n"),
    )
    params = params or GenParams.for_stage("summarize")
    summary = complete(ChatRequest(user=prompt, params=params), backend)
    return replace(bundle, summary=summary)


def generate(
    post: MisinfoPost,
    style: str,
    backend: ChatBackend,
    templates: dict[str, str],
    evidence_text: Optional[str] = None,
    summary_text: Optional[str] = None,
    params: Optional[GenParams] = None,
) -> str:
    """Produce the draft counterspeech.

    Template dispatch: direct ignores evidence entirely; guided with a
    summary uses the multi-agent variant ({summarized_evidence}), guided
    with raw evidence uses the RAG variant ({evidence}); cot always fills
    {summarized_evidence}. Passing both evidence_text and summary_text is
    ambiguous and rejected.
    """
    if evidence_text is not None and summary_text is not None:
        raise ConfigError("pass either evidence_text or summary_text, not both")
    if style == "direct":
        if evidence_text is not None or summary_text is not None:
            raise ConfigError("direct style takes no evidence")
        prompt = render(templates["direct"], post_content=post.text)
    elif style == "guided":
        if summary_text is not None:
            prompt = render(
                templates["guided_gen_multiagent"],
                post_content=post.text,
                summarized_evidence=summary_text,
            )
        else:
            prompt = render(
                templates["guided"],
                post_content=post.text,
                evidence=evidence_text if evidence_text is not None else "",
            )
    elif style == "cot":
        context = summary_text if summary_text is not None else (evidence_text or "")
        prompt = render(
            templates["cot_generate"],
            post_content=post.text,
            summarized_evidence=context,
        )
    else:
        raise ConfigError(f"unknown prompt style {style!r}")
    params = params or GenParams.for_stage("generate")
    draft = complete(ChatRequest(user=prompt, params=params), backend)
    if not draft.strip():
        raise ConfigError("generation backend returned an empty draft")
    return draft


def refine(
    post: MisinfoPost,
    draft: str,
    style: str,
    backend: ChatBackend,
    templates: dict[str, str],
    params: Optional[GenParams] = None,
) -> str:
    """Polish a draft via the refine stage. Refined text over the word
    budget is logged, never truncated: a cut could drop citations."""
    if not draft.strip():
        raise ConfigError("refine requires a non-empty draft")
    template_name = "cot_refine" if style == "cot" else "refine_guided"
    prompt = render(templates[template_name], post_content=post.text, response=draft)
    params = params or GenParams.for_stage("refine")
    refined = complete(ChatRequest(user=prompt, params=params), backend)
    if exceeds_word_budget(refined):
        log.warning(
            "refined response for post %s runs %d words (budget %d)",
            post.id,
            word_count(refined),
            WORD_BUDGET,
        )
    return refined
