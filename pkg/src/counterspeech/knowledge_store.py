"""Static knowledge base: chunking, keyword and vector indexes, hybrid search.

The keyword channel is an exact-match table whose candidates are BM25-ranked;
the vector channel ranks every chunk by cosine similarity of embeddings. The
hybrid merge min-max normalizes each channel's top-k list and keeps the max
normalized score per chunk, so both channels emit comparable scores.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from .domain import Evidence
from .errors import IndexFormatError, InvalidParams
from .llm_gateway import EmbeddingBackend, embed
from .textmetrics import (
    CorpusStats,
    bm25_score,
    corpus_stats,
    cosine,
    minmax_normalize,
    token_spans,
    tokenize,
)

INDEX_FORMAT_VERSION = 1


@dataclass(frozen=True)
class Chunk:
    chunk_id: str
    doc_id: str
    text: str
    token_len: int

    def __post_init__(self):
        if self.token_len != len(tokenize(self.text)):
            raise ValueError(f"token_len mismatch for chunk {self.chunk_id}")


@dataclass(frozen=True)
class KnowledgeIndex:
    chunks: tuple[Chunk, ...]
    keyword_table: Mapping[str, frozenset[str]]
    embeddings: Mapping[str, tuple[float, ...]]
    stats: CorpusStats

    def __post_init__(self):
        object.__setattr__(self, "chunks", tuple(self.chunks))
        object.__setattr__(
            self, "keyword_table", {t: frozenset(ids) for t, ids in self.keyword_table.items()}
        )
        object.__setattr__(
            self, "embeddings", {cid: tuple(v) for cid, v in self.embeddings.items()}
        )
        known = {c.chunk_id for c in self.chunks}
        for term, ids in self.keyword_table.items():
            missing = ids - known
            if missing:
                raise ValueError(f"keyword_table[{term!r}] references unknown chunks {missing}")
        if set(self.embeddings) != known:
            raise ValueError("embeddings must cover exactly the indexed chunks")
        dims = {len(v) for v in self.embeddings.values()}
        if len(dims) > 1:
            raise ValueError(f"embedding dimensions not uniform: {sorted(dims)}")

    @property
    def by_id(self) -> dict[str, Chunk]:
        return {c.chunk_id: c for c in self.chunks}


def chunk_document(doc_id: str, text: str, chunk_size: int = 256, overlap: int = 32) -> list[Chunk]:
    """Sliding token window; consecutive chunks share exactly `overlap`
    tokens, the final chunk may be shorter. Chunk text is sliced from the
    original document between the first and last window token."""
    if chunk_size <= overlap or overlap < 0:
        raise InvalidParams(f"need chunk_size > overlap >= 0, got {chunk_size}, {overlap}")
    spans = token_spans(text)
    if not spans:
        return []
    stride = chunk_size - overlap
    chunks: list[Chunk] = []
    start = 0
    while start < len(spans):
        window = spans[start : start + chunk_size]
        chunk_text = text[window[0][1] : window[-1][2]]
        chunks.append(
            Chunk(
                chunk_id=f"{doc_id}:{len(chunks):04d}",
                doc_id=doc_id,
                text=chunk_text,
                token_len=len(window),
            )
        )
        if start + chunk_size >= len(spans):
            break
        start += stride
    return chunks


def build_index(chunks: Sequence[Chunk], embedder: EmbeddingBackend) -> KnowledgeIndex:
    """Index chunks: keyword table over distinct tokens, one embedding per
    chunk (single batch), and BM25 corpus stats."""
    if not chunks:
        raise InvalidParams("cannot index an empty chunk list")
    keyword_table: dict[str, set[str]] = {}
    token_docs = []
    for chunk in chunks:
        tokens = tokenize(chunk.text)
        token_docs.append(tokens)
        for term in set(tokens):
            keyword_table.setdefault(term, set()).add(chunk.chunk_id)
    vectors = embed([c.text for c in chunks], embedder)
    embeddings = {c.chunk_id: tuple(v) for c, v in zip(chunks, vectors)}
    return KnowledgeIndex(
        chunks=tuple(chunks),
        keyword_table={t: frozenset(ids) for t, ids in keyword_table.items()},
        embeddings=embeddings,
        stats=corpus_stats(token_docs),
    )


def keyword_search(
    index: KnowledgeIndex, query: str, k: int = 10, k1: float = 1.5, b: float = 0.75
) -> list[tuple[str, float]]:
    """Chunks sharing at least one query token, BM25-ranked; ties broken by
    ascending chunk_id."""
    if k < 1:
        raise InvalidParams("k must be >= 1")
    query_tokens = tokenize(query)
    candidates: set[str] = set()
    for term in set(query_tokens):
        candidates |= index.keyword_table.get(term, frozenset())
    if not candidates:
        return []
    by_id = index.by_id
    scored = [
        (cid, bm25_score(query_tokens, tokenize(by_id[cid].text), index.stats, k1, b))
        for cid in candidates
    ]
    scored.sort(key=lambda pair: (-pair[1], pair[0]))
    return scored[:k]


def vector_search(
    index: KnowledgeIndex, query: str, k: int, embedder: EmbeddingBackend
) -> list[tuple[str, float]]:
    """Top-k chunks by cosine similarity to the query embedding; ties broken
    by ascending chunk_id."""
    if k < 1:
        raise InvalidParams("k must be >= 1")
    query_vec = embed([query], embedder)[0]
    scored = [
        (cid, cosine(query_vec, vec)) for cid, vec in sorted(index.embeddings.items())
    ]
    scored.sort(key=lambda pair: (-pair[1], pair[0]))
    return scored[:k]


def hybrid_retrieve(
    index: KnowledgeIndex,
    query: str,
    k_each: int = 10,
    embedder: EmbeddingBackend | None = None,
    k1: float = 1.5,
    b: float = 0.75,
) -> list[Evidence]:
    """Union of keyword and vector channels, deduplicated by chunk id.

    Each channel's top-k scores are min-max normalized over the channel's
    own list; a chunk found by both keeps the max of its normalized scores.
    Results are ordered by descending score, ties by ascending chunk_id.
    """
    if embedder is None:
        raise InvalidParams("hybrid_retrieve requires an embedder")
    if k_each < 1:
        raise InvalidParams("k_each must be >= 1")
    kw = keyword_search(index, query, k_each, k1, b)
    vec = vector_search(index, query, k_each, embedder)
    merged: dict[str, float] = {}
    for channel in (kw, vec):
        normalized = minmax_normalize([score for _, score in channel])
        for (cid, _), norm_score in zip(channel, normalized):
            merged[cid] = max(merged.get(cid, 0.0), norm_score)
    by_id = index.by_id
    ordered = sorted(merged.items(), key=lambda pair: (-pair[1], pair[0]))
    return [
        Evidence(
            text=by_id[cid].text,
            origin="static",
            retrieval_score=score,
            source_url=f"static://{cid}",
        )
        for cid, score in ordered
    ]


def save_index(index: KnowledgeIndex, path) -> None:
    """Persist a versioned snapshot; byte-identical for identical inputs."""
    payload = {
        "format_version": INDEX_FORMAT_VERSION,
        "chunks": [
            {"chunk_id": c.chunk_id, "doc_id": c.doc_id, "text": c.text, "token_len": c.token_len}
            for c in index.chunks
        ],
        "keyword_table": {t: sorted(ids) for t, ids in index.keyword_table.items()},
        "embeddings": {cid: list(vec) for cid, vec in index.embeddings.items()},
        "stats": {
            "doc_count": index.stats.doc_count,
            "avg_doc_len": index.stats.avg_doc_len,
            "doc_freq": dict(index.stats.doc_freq),
        },
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True), encoding="utf-8")


def load_index(path) -> KnowledgeIndex:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise IndexFormatError(f"cannot read index snapshot: {exc}") from exc
    version = payload.get("format_version")
    if version != INDEX_FORMAT_VERSION:
        raise IndexFormatError(
            f"unsupported index format version {version!r}, expected {INDEX_FORMAT_VERSION}"
        )
    stats = payload["stats"]
    return KnowledgeIndex(
        chunks=tuple(Chunk(**c) for c in payload["chunks"]),
        keyword_table={t: frozenset(ids) for t, ids in payload["keyword_table"].items()},
        embeddings={cid: tuple(vec) for cid, vec in payload["embeddings"].items()},
        stats=CorpusStats(
            doc_count=stats["doc_count"],
            avg_doc_len=stats["avg_doc_len"],
            doc_freq=stats["doc_freq"],
        ),
    )


def load_corpus_dir(corpus_dir, chunk_size: int = 256, overlap: int = 32) -> list[Chunk]:
    """Chunk every *.txt file in a directory; filename stem is the doc_id."""
    corpus = Path(corpus_dir)
    chunks: list[Chunk] = []
    for doc_path in sorted(corpus.glob("*.txt")):
        text = doc_path.read_text(encoding="utf-8")
        chunks.extend(chunk_document(doc_path.stem, text, chunk_size, overlap))
    return chunks
