"""End-to-end orchestration: baselines, the multi-agent pipeline, ablation
grids, and run artifacts.

Static and dynamic retrieval for a post run concurrently and merge
static-first, so completion order never changes results. Per-post failures
are logged into the artifact instead of aborting the batch. Reruns with the
same config and mock ports produce byte-identical artifact directories.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Optional, Sequence

from .agents import (
    exceeds_word_budget,
    generate,
    load_templates,
    refine,
    select_top_k,
    summarize,
)
from .domain import (
    Evidence,
    EvidenceBundle,
    MisinfoPost,
    ResponseRecord,
    ScoreReport,
    bundle_from_dict,
    bundle_to_dict,
)
from .errors import ConfigError, PortError
from .evaluation import PolitenessScorer, aggregate, score_response, summary_table_csv
from .evaluation import write_per_response_scores
from .knowledge_store import KnowledgeIndex, hybrid_retrieve
from .llm_gateway import ChatBackend, EmbeddingBackend
from .textmetrics import bleu, tokenize
from .web_evidence import (
    ExtractionConfig,
    JudgeScorer,
    PageFetcher,
    SearchProvider,
    dynamic_retrieve,
)

log = logging.getLogger(__name__)

MODES = ("llm_dp", "llm_pe", "static_rag", "dynamic_rag", "multi_agent")

# Table-row order for the six-cell ablation: (use_summarizer, use_refiner, style)
ABLATION_CELLS = (
    (False, False, "cot"),
    (False, False, "guided"),
    (True, False, "cot"),
    (True, False, "guided"),
    (True, True, "cot"),
    (True, True, "guided"),
)

DEFAULT_K_SWEEP = (3, 5, 10, 15, 20)


@dataclass(frozen=True)
class Endpoints:
    """Remote port URLs; all None means fully offline mock operation."""

    chat_url: Optional[str] = None
    embed_url: Optional[str] = None
    politeness_url: Optional[str] = None
    search_url: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "chat_url": self.chat_url,
            "embed_url": self.embed_url,
            "politeness_url": self.politeness_url,
            "search_url": self.search_url,
        }


@dataclass(frozen=True)
class RunConfig:
    mode: str
    use_summarizer: bool = True
    use_refiner: bool = True
    prompt_style: str = "guided"
    k_top: int = 10
    seed: int = 0
    endpoints: Endpoints = field(default_factory=Endpoints)

    def __post_init__(self):
        if isinstance(self.endpoints, dict):
            object.__setattr__(self, "endpoints", Endpoints(**self.endpoints))
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.prompt_style not in ("guided", "cot"):
            raise ConfigError(f"prompt_style must be guided or cot, got {self.prompt_style!r}")
        if self.k_top < 1:
            raise ConfigError("k_top must be >= 1")

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "use_summarizer": self.use_summarizer,
            "use_refiner": self.use_refiner,
            "prompt_style": self.prompt_style,
            "k_top": self.k_top,
            "seed": self.seed,
            "endpoints": self.endpoints.to_dict(),
        }

    @property
    def config_id(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:12]


def method_label(cfg: RunConfig) -> str:
    """Row label in the comparison tables. Non-default k is called out so
    sweep rows stay distinguishable."""
    if cfg.mode == "llm_dp":
        return "LLM w DP"
    if cfg.mode == "llm_pe":
        return "LLM w PE"
    if cfg.mode == "static_rag":
        label = "Static RAG"
    elif cfg.mode == "dynamic_rag":
        label = "Dynamic RAG"
    else:
        label = "MA"
        if not cfg.use_summarizer:
            label += " w/o SA"
        if not cfg.use_refiner:
            label += " w/o RF"
    if cfg.k_top != 10:
        label += f" (k={cfg.k_top})"
    return label


def prompt_label(cfg: RunConfig) -> str:
    if cfg.mode == "llm_dp":
        return "Direct"
    return "CoT" if cfg.prompt_style == "cot" else "Guided"


@dataclass
class PipelinePorts:
    """Every pluggable backend the pipeline touches, in one bundle."""

    chat: ChatBackend
    embedder: EmbeddingBackend
    search: SearchProvider
    fetcher: PageFetcher
    fact_judge: JudgeScorer
    politeness: PolitenessScorer
    templates: dict[str, str] = field(default_factory=load_templates)
    index: Optional[KnowledgeIndex] = None
    extraction: ExtractionConfig = field(default_factory=ExtractionConfig)


def mock_ports(
    seed: int = 0,
    index: Optional[KnowledgeIndex] = None,
    extraction: Optional[ExtractionConfig] = None,
) -> PipelinePorts:
    """Fully offline port set: echo chat with a seeded rubric judge, hash
    embedder, fabricated web pages, and hash-based scorers. Bit-reproducible
    for a fixed seed."""
    from .evaluation import HashPolitenessScorer
    from .llm_gateway import MockChatBackend, MockEmbedder, StageRouterChatBackend
    from .web_evidence import HashJudge, MockFetcher, MockSearchProvider

    chat = StageRouterChatBackend(
        default=MockChatBackend("echo"),
        routes={"judge": MockChatBackend("rubric_judge", seed=seed)},
    )
    return PipelinePorts(
        chat=chat,
        embedder=MockEmbedder(),
        search=MockSearchProvider(seed=seed),
        fetcher=MockFetcher(seed=seed),
        fact_judge=HashJudge(seed=seed),
        politeness=HashPolitenessScorer(seed=seed),
        index=index,
        extraction=extraction or ExtractionConfig(),
    )


@dataclass
class PostRun:
    record: ResponseRecord
    bundle: Optional[EvidenceBundle]
    static_raw: list[Evidence]
    dynamic_raw: list[Evidence]


@dataclass
class RunArtifact:
    config: RunConfig
    responses: list[ResponseRecord]
    evidence_log: dict[str, EvidenceBundle]
    scores: ScoreReport
    diagnostics: dict
    failures: list[dict]


def _retrieve_both(
    post: MisinfoPost, cfg: RunConfig, ports: PipelinePorts
) -> tuple[list[Evidence], list[Evidence]]:
    """Static and dynamic retrieval in parallel; merge is static-first."""
    with ThreadPoolExecutor(max_workers=2) as pool:
        static_future = pool.submit(
            hybrid_retrieve, ports.index, post.text, cfg.k_top, ports.embedder
        )
        dynamic_future = pool.submit(
            dynamic_retrieve, post, ports.extraction, ports.search, ports.fetcher,
            ports.fact_judge,
        )
        return static_future.result(), dynamic_future.result()


def run_post(post: MisinfoPost, cfg: RunConfig, ports: PipelinePorts) -> PostRun:
    """Dispatch one post through the configured mode."""
    if cfg.mode in ("static_rag", "multi_agent") and ports.index is None:
        raise ConfigError(f"mode {cfg.mode} requires a built knowledge index")

    static_raw: list[Evidence] = []
    dynamic_raw: list[Evidence] = []
    bundle: Optional[EvidenceBundle] = None
    refined: Optional[str] = None

    if cfg.mode == "llm_dp":
        draft = generate(post, "direct", ports.chat, ports.templates)
        agents_used = frozenset({"generator"})
        style = "direct"
    elif cfg.mode == "llm_pe":
        draft = generate(post, "guided", ports.chat, ports.templates)
        agents_used = frozenset({"generator"})
        style = "guided"
    elif cfg.mode == "static_rag":
        static_raw = hybrid_retrieve(ports.index, post.text, cfg.k_top, ports.embedder)
        bundle = EvidenceBundle(
            post_id=post.id,
            items=tuple(static_raw),
            k_used=max(1, len(static_raw)),
        )
        draft = generate(
            post, "guided", ports.chat, ports.templates,
            evidence_text=bundle.joined_text("\n"),
        )
        agents_used = frozenset({"static_ret", "generator"})
        style = "guided"
    elif cfg.mode == "dynamic_rag":
        dynamic_raw = dynamic_retrieve(
            post, ports.extraction, ports.search, ports.fetcher, ports.fact_judge
        )
        bundle = EvidenceBundle(
            post_id=post.id,
            items=tuple(dynamic_raw),
            k_used=max(1, len(dynamic_raw)),
        )
        draft = generate(
            post, "guided", ports.chat, ports.templates,
            evidence_text=bundle.joined_text("\n"),
        )
        agents_used = frozenset({"dynamic_ret", "generator"})
        style = "guided"
    else:  # multi_agent
        static_raw, dynamic_raw = _retrieve_both(post, cfg, ports)
        pool = static_raw + dynamic_raw
        agents = {"static_ret", "dynamic_ret", "generator"}
        if cfg.use_summarizer:
            ranked = select_top_k(post, pool, cfg.k_top, ports.embedder)
            bundle = EvidenceBundle(
                post_id=post.id,
                items=tuple(r.evidence for r in ranked),
                k_used=cfg.k_top,
            )
            if bundle.items:
                bundle = summarize(bundle, ports.chat, ports.templates)
            context = bundle.summary or ""
            agents.add("summarizer")
        else:
            bundle = EvidenceBundle(
                post_id=post.id,
                items=tuple(pool),
                k_used=max(1, len(pool)),
            )
            context = bundle.joined_text("\n")
        draft = generate(
            post, cfg.prompt_style, ports.chat, ports.templates, summary_text=context
        )
        if cfg.use_refiner:
            refined = refine(post, draft, cfg.prompt_style, ports.chat, ports.templates)
            agents.add("refiner")
        agents_used = frozenset(agents)
        style = cfg.prompt_style

    record = ResponseRecord(
        post_id=post.id,
        draft=draft,
        refined=refined,
        config_id=cfg.config_id,
        prompt_style=style,
        agents_used=agents_used,
    )
    return PostRun(record=record, bundle=bundle, static_raw=static_raw, dynamic_raw=dynamic_raw)


def bleu_overlap_post(static_ev: Sequence[Evidence], dynamic_ev: Sequence[Evidence]) -> float:
    """Lexical overlap for one post: BLEU with the concatenated dynamic text
    as candidate and the concatenated static text as reference."""
    candidate = tokenize(" ".join(e.text for e in dynamic_ev))
    reference = tokenize(" ".join(e.text for e in static_ev))
    return bleu(candidate, reference)


def bleu_overlap(
    channel_pairs: Mapping[str, tuple[Sequence[Evidence], Sequence[Evidence]]],
) -> dict:
    """Mean/std of per-post overlap over posts holding evidence from both
    channels; posts with an empty side are skipped and counted."""
    values = []
    skipped = 0
    for post_id in sorted(channel_pairs):
        static_ev, dynamic_ev = channel_pairs[post_id]
        if not static_ev or not dynamic_ev:
            skipped += 1
            continue
        values.append(bleu_overlap_post(static_ev, dynamic_ev))
    if values:
        mean = sum(values) / len(values)
        std = math.sqrt(sum((v - mean) ** 2 for v in values) / len(values))
    else:
        mean = 0.0
        std = 0.0
    return {
        "bleu_overlap_mean": mean,
        "bleu_overlap_std": std,
        "bleu_overlap_pairs": len(values),
        "bleu_overlap_skipped": skipped,
    }


def run_experiment(
    dataset: Sequence[MisinfoPost],
    cfg: RunConfig,
    ports: PipelinePorts,
    out_dir=None,
    workers: int = 4,
    sample_std: bool = False,
) -> RunArtifact:
    """run_post over every post, then evaluation and diagnostics.

    Posts run concurrently up to `workers`; results assemble in dataset
    order. Only total port unavailability aborts; per-post errors land in
    the failure log.
    """
    if cfg.mode in ("static_rag", "multi_agent") and ports.index is None:
        raise ConfigError(f"mode {cfg.mode} requires a built knowledge index")

    def one(post: MisinfoPost):
        try:
            return run_post(post, cfg, ports)
        except (PortError, ConfigError, ValueError) as exc:
            log.warning("post %s failed: %s", post.id, exc)
            return {"post_id": post.id, "stage": "run_post", "error": str(exc)}

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        outcomes = list(pool.map(one, dataset))

    responses: list[ResponseRecord] = []
    evidence_log: dict[str, EvidenceBundle] = {}
    channel_pairs: dict[str, tuple[list[Evidence], list[Evidence]]] = {}
    failures: list[dict] = []
    post_by_id = {p.id: p for p in dataset}

    for outcome in outcomes:
        if isinstance(outcome, dict):
            failures.append(outcome)
            continue
        responses.append(outcome.record)
        if outcome.bundle is not None:
            evidence_log[outcome.record.post_id] = outcome.bundle
        channel_pairs[outcome.record.post_id] = (outcome.static_raw, outcome.dynamic_raw)

    per_response: dict[str, dict[str, float]] = {}
    for record in responses:
        post = post_by_id[record.post_id]
        bundle = evidence_log.get(record.post_id)
        if bundle is None:
            context = ""
        else:
            context = bundle.summary if bundle.summary is not None else bundle.joined_text("\n")
        try:
            per_response[record.post_id] = score_response(
                post, record.final_text, context, ports.politeness, ports.chat
            )
        except (PortError, ValueError) as exc:
            log.warning("scoring post %s failed: %s", record.post_id, exc)
            failures.append(
                {"post_id": record.post_id, "stage": "evaluate", "error": str(exc)}
            )

    if per_response:
        scores = aggregate(per_response, sample_std=sample_std)
    else:
        scores = None

    diagnostics = bleu_overlap(channel_pairs)
    diagnostics["refine_length_warnings"] = sum(
        1 for r in responses if r.refined is not None and exceeds_word_budget(r.refined)
    )
    diagnostics["n_posts"] = len(dataset)
    diagnostics["n_responses"] = len(responses)

    run_failures = [f for f in failures if f["stage"] == "run_post"]
    if len(responses) + len(run_failures) != len(dataset):
        raise RuntimeError("response accounting mismatch; this is a bug")

    artifact = RunArtifact(
        config=cfg,
        responses=responses,
        evidence_log=evidence_log,
        scores=scores,
        diagnostics=diagnostics,
        failures=failures,
    )
    if out_dir is not None:
        save_artifact(artifact, out_dir)
    return artifact


def run_ablation_grid(
    dataset: Sequence[MisinfoPost],
    base_cfg: RunConfig,
    ports: PipelinePorts,
    out_dir=None,
    k_sweep: Optional[Sequence[int]] = None,
    workers: int = 4,
) -> list[RunArtifact]:
    """The six-cell summarizer/refiner x prompt-style grid, plus an optional
    top-k sweep with all agents enabled."""
    artifacts = []
    for use_summarizer, use_refiner, style in ABLATION_CELLS:
        cfg = replace(
            base_cfg,
            mode="multi_agent",
            use_summarizer=use_summarizer,
            use_refiner=use_refiner,
            prompt_style=style,
        )
        artifacts.append(run_experiment(dataset, cfg, ports, out_dir, workers))
    for k in k_sweep or ():
        cfg = replace(
            base_cfg,
            mode="multi_agent",
            use_summarizer=True,
            use_refiner=True,
            k_top=k,
        )
        artifacts.append(run_experiment(dataset, cfg, ports, out_dir, workers))
    return artifacts


# --- artifact persistence -------------------------------------------------

def artifact_dir(out_dir, cfg: RunConfig) -> Path:
    return Path(out_dir) / cfg.config_id


def save_artifact(artifact: RunArtifact, out_dir) -> Path:
    """Write one run as a directory keyed by config_id. File contents are
    deterministic functions of the run, so identical runs are byte-identical."""
    root = artifact_dir(out_dir, artifact.config)
    root.mkdir(parents=True, exist_ok=True)
    cfg = artifact.config
    config_payload = dict(cfg.to_dict())
    config_payload["config_id"] = cfg.config_id
    config_payload["method"] = method_label(cfg)
    config_payload["prompt"] = prompt_label(cfg)
    (root / "config.json").write_text(
        json.dumps(config_payload, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    with open(root / "responses.jsonl", "w", encoding="utf-8") as fh:
        for record in artifact.responses:
            fh.write(json.dumps(record.to_dict(), sort_keys=True) + "\n")
    with open(root / "evidence.jsonl", "w", encoding="utf-8") as fh:
        for post_id in sorted(artifact.evidence_log):
            fh.write(
                json.dumps(bundle_to_dict(artifact.evidence_log[post_id]), sort_keys=True)
                + "\n"
            )
    if artifact.scores is not None:
        write_per_response_scores(artifact.scores, root / "scores.jsonl")
        (root / "score_summary.csv").write_text(
            summary_table_csv(artifact.scores, label=method_label(cfg)), encoding="utf-8"
        )
    payload = dict(artifact.diagnostics)
    payload["failures"] = artifact.failures
    (root / "diagnostics.json").write_text(
        json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    return root


def load_artifact(path) -> RunArtifact:
    """Reload a persisted run; aggregates are recomputed from the
    per-response scores with the default population std."""
    root = Path(path)
    config_payload = json.loads((root / "config.json").read_text(encoding="utf-8"))
    cfg = RunConfig(
        mode=config_payload["mode"],
        use_summarizer=config_payload["use_summarizer"],
        use_refiner=config_payload["use_refiner"],
        prompt_style=config_payload["prompt_style"],
        k_top=config_payload["k_top"],
        seed=config_payload["seed"],
        endpoints=Endpoints(**config_payload["endpoints"]),
    )
    responses = []
    with open(root / "responses.jsonl", "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                responses.append(ResponseRecord.from_dict(json.loads(line)))
    evidence_log = {}
    evidence_path = root / "evidence.jsonl"
    if evidence_path.exists():
        with open(evidence_path, "r", encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    bundle = bundle_from_dict(json.loads(line))
                    evidence_log[bundle.post_id] = bundle
    scores: Optional[ScoreReport] = None
    scores_path = root / "scores.jsonl"
    if scores_path.exists():
        from .evaluation import read_per_response_scores

        per_response = read_per_response_scores(scores_path)
        if per_response:
            scores = aggregate(per_response)
    diagnostics = json.loads((root / "diagnostics.json").read_text(encoding="utf-8"))
    failures = diagnostics.pop("failures", [])
    return RunArtifact(
        config=cfg,
        responses=responses,
        evidence_log=evidence_log,
        scores=scores,
        diagnostics=diagnostics,
        failures=failures,
    )
