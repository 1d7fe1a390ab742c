"""Operator entry point: ingest, index, run, ablate, report.

Settings precedence is flags > environment > config file > defaults.
Endpoint URLs and the API key come from the environment or the config
file; with no endpoints configured at all, commands run against the
in-process mock ports and say so loudly.

Exit codes: 1 config/usage failures, 2 data validation failures,
3 port failures.
"""

from __future__ import annotations

import argparse
import configparser
import logging
import os
import sys
from collections import Counter
from pathlib import Path
from typing import Optional

from dataclasses import replace as dc_replace

from .domain import load_dataset, dump_dataset, parse_dataset_line, validate_dataset
from .errors import (
    ConfigError,
    CounterspeechError,
    DuplicateId,
    EmptyText,
    IndexFormatError,
    PortError,
)
from .evaluation import GatewayFactualJudge, HttpPolitenessScorer
from .knowledge_store import build_index, load_corpus_dir, load_index, save_index
from .llm_gateway import HttpChatBackend, HttpEmbeddingBackend
from .pipeline import (
    DEFAULT_K_SWEEP,
    Endpoints,
    MODES,
    PipelinePorts,
    RunConfig,
    load_artifact,
    method_label,
    mock_ports,
    run_ablation_grid,
    run_experiment,
)
from .report import write_report
from .web_evidence import ExtractionConfig, HttpFetcher, HttpSearchProvider

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DATA = 2
EXIT_PORT = 3

ENV_VARS = {
    "chat_url": "COUNTERSPEECH_CHAT_URL",
    "embed_url": "COUNTERSPEECH_EMBED_URL",
    "politeness_url": "COUNTERSPEECH_POLITENESS_URL",
    "search_url": "COUNTERSPEECH_SEARCH_URL",
    "api_key": "COUNTERSPEECH_API_KEY",
    "timeout": "COUNTERSPEECH_TIMEOUT",
}


def _read_config_file(path: Optional[str]) -> configparser.ConfigParser:
    parser = configparser.ConfigParser()
    if path:
        if not Path(path).is_file():
            raise ConfigError(f"config file not found: {path}")
        parser.read(path, encoding="utf-8")
    return parser


def _file_get(cfg: configparser.ConfigParser, section: str, key: str) -> Optional[str]:
    if cfg.has_option(section, key):
        return cfg.get(section, key)
    return None


def resolve_endpoints(cfg: configparser.ConfigParser) -> tuple[Endpoints, Optional[str], float]:
    """Endpoints and API key: environment first, then the config file."""
    values = {}
    for key in ("chat_url", "embed_url", "politeness_url", "search_url"):
        values[key] = os.environ.get(ENV_VARS[key]) or _file_get(cfg, "endpoints", key)
    api_key = os.environ.get(ENV_VARS["api_key"]) or _file_get(cfg, "endpoints", "api_key")
    timeout_raw = os.environ.get(ENV_VARS["timeout"]) or _file_get(cfg, "endpoints", "timeout")
    try:
        timeout = float(timeout_raw) if timeout_raw else 60.0
    except ValueError:
        raise ConfigError(f"timeout must be a number, got {timeout_raw!r}")
    return Endpoints(**values), api_key, timeout


def _resolve(flag_value, file_value: Optional[str], default, cast=str):
    if flag_value is not None:
        return flag_value
    if file_value is not None:
        try:
            return cast(file_value)
        except ValueError:
            raise ConfigError(f"bad config value {file_value!r}")
    return default


def _bool_cast(raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(raw)


def resolve_run_config(args, cfg: configparser.ConfigParser, endpoints: Endpoints) -> RunConfig:
    mode = _resolve(getattr(args, "mode", None), _file_get(cfg, "run", "mode"), None)
    if mode is None:
        raise ConfigError("no mode given; pass --mode or set [run] mode in the config file")
    use_summarizer = not args.no_summarizer if args.no_summarizer else _resolve(
        None, _file_get(cfg, "run", "use_summarizer"), True, _bool_cast
    )
    use_refiner = not args.no_refiner if args.no_refiner else _resolve(
        None, _file_get(cfg, "run", "use_refiner"), True, _bool_cast
    )
    return RunConfig(
        mode=mode,
        use_summarizer=use_summarizer,
        use_refiner=use_refiner,
        prompt_style=_resolve(
            args.prompt_style, _file_get(cfg, "run", "prompt_style"), "guided"
        ),
        k_top=_resolve(args.k_top, _file_get(cfg, "run", "k_top"), 10, int),
        seed=_resolve(args.seed, _file_get(cfg, "run", "seed"), 0, int),
        endpoints=endpoints,
    )


def resolve_extraction(cfg: configparser.ConfigParser) -> ExtractionConfig:
    kwargs = {}
    for key, cast in (
        ("max_results", int),
        ("max_sentences_per_page", int),
        ("min_sentence_tokens", int),
        ("fact_threshold", float),
        ("fetch_timeout", float),
    ):
        raw = _file_get(cfg, "extraction", key)
        if raw is not None:
            kwargs[key] = cast(raw)
    return ExtractionConfig(**kwargs)


def _want_mock(args, cfg: configparser.ConfigParser, endpoints: Endpoints) -> bool:
    if getattr(args, "mock", False):
        return True
    file_mock = _file_get(cfg, "run", "mock")
    if file_mock is not None and _bool_cast(file_mock):
        return True
    return endpoints == Endpoints()


def build_ports(
    endpoints: Endpoints,
    api_key: Optional[str],
    timeout: float,
    mock: bool,
    seed: int,
    index=None,
    extraction: Optional[ExtractionConfig] = None,
) -> PipelinePorts:
    if mock:
        print("NOTE: running offline against in-process mock ports (no endpoints used)")
        return mock_ports(seed=seed, index=index, extraction=extraction)
    missing = [k for k, v in endpoints.to_dict().items() if not v]
    if missing:
        raise ConfigError(
            "endpoints missing for live run: " + ", ".join(missing)
            + " (set env vars or config file, or pass --mock)"
        )
    chat = HttpChatBackend(endpoints.chat_url, api_key, timeout)
    return PipelinePorts(
        chat=chat,
        embedder=HttpEmbeddingBackend(endpoints.embed_url, api_key, timeout),
        search=HttpSearchProvider(endpoints.search_url, timeout),
        fetcher=HttpFetcher(),
        fact_judge=GatewayFactualJudge(chat),
        politeness=HttpPolitenessScorer(endpoints.politeness_url, timeout),
        index=index,
        extraction=extraction or ExtractionConfig(),
    )


def _embedder_for(args, endpoints, api_key, timeout, mock):
    if mock:
        print("NOTE: using the in-process mock embedder")
        from .llm_gateway import MockEmbedder

        return MockEmbedder()
    if not endpoints.embed_url:
        raise ConfigError("no embedding endpoint configured; set it or pass --mock")
    return HttpEmbeddingBackend(endpoints.embed_url, api_key, timeout)


def cmd_ingest(args) -> int:
    path = Path(args.input)
    if not path.is_file():
        print(f"error: input file not found: {path}", file=sys.stderr)
        return EXIT_CONFIG
    posts = []
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.strip()
                if not line:
                    continue
                try:
                    posts.append(parse_dataset_line(line))
                except (ValueError, EmptyText) as exc:
                    print(f"error: line {lineno}: {exc}", file=sys.stderr)
                    return EXIT_DATA
        posts = validate_dataset(posts)
    except DuplicateId as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    dump_dataset(posts, args.output)
    by_topic = Counter(p.topic for p in posts)
    by_label = Counter(p.source_label for p in posts)
    topic_summary = ", ".join(f"{t}: {n}" for t, n in sorted(by_topic.items()))
    label_summary = ", ".join(f"{l}: {n}" for l, n in sorted(by_label.items()))
    print(f"{len(posts)} posts ({topic_summary})")
    print(f"source labels: {label_summary}")
    print(f"wrote {args.output}")
    return EXIT_OK


def cmd_index(args) -> int:
    cfg = _read_config_file(args.config)
    endpoints, api_key, timeout = resolve_endpoints(cfg)
    corpus = Path(args.corpus_dir)
    if not corpus.is_dir():
        print(f"error: corpus directory not found: {corpus}", file=sys.stderr)
        return EXIT_CONFIG
    chunks = load_corpus_dir(corpus, args.chunk_size, args.overlap)
    if not chunks:
        print("error: empty corpus", file=sys.stderr)
        return EXIT_DATA
    mock = _want_mock(args, cfg, endpoints) or not endpoints.embed_url
    try:
        embedder = _embedder_for(args, endpoints, api_key, timeout, mock)
        index = build_index(chunks, embedder)
    except PortError as exc:
        print(f"error: embedder unavailable: {exc}", file=sys.stderr)
        return EXIT_PORT
    save_index(index, args.output)
    dim = len(next(iter(index.embeddings.values())))
    print(f"{len(index.chunks)} chunks, embedding dimension {dim}")
    print(f"wrote {args.output}")
    return EXIT_OK


def _load_run_inputs(args, need_index: bool):
    dataset = load_dataset(args.dataset)
    index = None
    if args.index:
        index = load_index(args.index)
    elif need_index:
        raise ConfigError("this mode needs a knowledge index; pass --index")
    return dataset, index


def _print_summary(artifact) -> None:
    label = method_label(artifact.config)
    print(f"run {artifact.config.config_id} [{label}]: "
          f"{len(artifact.responses)} responses, {len(artifact.failures)} failures")
    if artifact.scores:
        for metric, agg in artifact.scores.aggregate.items():
            print(f"  {metric}: {agg.mean:.2f} ({agg.std:.2f})")
    print(f"  bleu overlap mean: {artifact.diagnostics['bleu_overlap_mean']:.4f}")


def cmd_run(args) -> int:
    cfg_file = _read_config_file(args.config)
    endpoints, api_key, timeout = resolve_endpoints(cfg_file)
    run_cfg = resolve_run_config(args, cfg_file, endpoints)
    mock = _want_mock(args, cfg_file, endpoints)
    if mock:
        run_cfg = dc_replace(run_cfg, endpoints=Endpoints())
    dataset, index = _load_run_inputs(
        args, need_index=run_cfg.mode in ("static_rag", "multi_agent")
    )
    ports = build_ports(
        endpoints, api_key, timeout, mock, run_cfg.seed, index, resolve_extraction(cfg_file)
    )
    artifact = run_experiment(dataset, run_cfg, ports, out_dir=args.out_dir)
    _print_summary(artifact)
    print(f"artifact: {Path(args.out_dir) / run_cfg.config_id}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg_file = _read_config_file(args.config)
    endpoints, api_key, timeout = resolve_endpoints(cfg_file)
    args.mode = "multi_agent"
    base_cfg = resolve_run_config(args, cfg_file, endpoints)
    mock = _want_mock(args, cfg_file, endpoints)
    if mock:
        base_cfg = dc_replace(base_cfg, endpoints=Endpoints())
    dataset, index = _load_run_inputs(args, need_index=True)
    ports = build_ports(
        endpoints, api_key, timeout, mock, base_cfg.seed, index, resolve_extraction(cfg_file)
    )
    k_sweep = None
    if args.k_sweep:
        k_sweep = DEFAULT_K_SWEEP if args.k_sweep == ["default"] else [int(k) for k in args.k_sweep]
    artifacts = run_ablation_grid(dataset, base_cfg, ports, out_dir=args.out_dir, k_sweep=k_sweep)
    if args.with_baselines:
        for mode in ("llm_dp", "llm_pe", "static_rag", "dynamic_rag"):
            cfg = dc_replace(base_cfg, mode=mode)
            artifacts.append(run_experiment(dataset, cfg, ports, out_dir=args.out_dir))
    for artifact in artifacts:
        _print_summary(artifact)
    print(f"{len(artifacts)} artifacts under {args.out_dir}")
    return EXIT_OK


def _discover_artifacts(paths: list[str]):
    dirs = []
    for raw in paths:
        path = Path(raw)
        if (path / "config.json").is_file():
            dirs.append(path)
            continue
        if path.is_dir():
            nested = sorted(p for p in path.iterdir() if (p / "config.json").is_file())
            if nested:
                dirs.extend(nested)
                continue
        raise ConfigError(f"no run artifacts found at {path}")
    return [load_artifact(d) for d in dirs]


def cmd_report(args) -> int:
    artifacts = _discover_artifacts(args.runs)
    if not artifacts:
        print("error: nothing to report", file=sys.stderr)
        return EXIT_DATA
    written = write_report(artifacts, args.out_dir)
    print(written["table"].read_text(encoding="utf-8"), end="")
    for name, path in written.items():
        print(f"{name}: {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="counterspeech",
        description="Evidence-based counterspeech engine for health misinformation",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="verbose logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p_ingest = sub.add_parser("ingest", help="validate and canonicalize a dataset")
    p_ingest.add_argument("--input", required=True, help="line-delimited posts file")
    p_ingest.add_argument("--output", default="dataset.jsonl", help="canonical dataset path")
    p_ingest.set_defaults(func=cmd_ingest)

    p_index = sub.add_parser("index", help="build the static knowledge index")
    p_index.add_argument("--corpus-dir", required=True, help="directory of .txt documents")
    p_index.add_argument("--output", default="index.json", help="index snapshot path")
    p_index.add_argument("--chunk-size", type=int, default=256)
    p_index.add_argument("--overlap", type=int, default=32)
    p_index.add_argument("--config", default=None, help="INI config file")
    p_index.add_argument("--mock", action="store_true", help="use in-process mock ports")
    p_index.set_defaults(func=cmd_index)

    def add_run_flags(p, with_mode: bool):
        p.add_argument("--config", default=None, help="INI config file")
        p.add_argument("--dataset", required=True, help="canonical dataset path")
        if with_mode:
            p.add_argument("--mode", choices=MODES, default=None)
        p.add_argument("--index", default=None, help="knowledge index snapshot")
        p.add_argument("--prompt-style", choices=("guided", "cot"), default=None)
        p.add_argument("--k-top", type=int, default=None)
        p.add_argument("--no-summarizer", action="store_true")
        p.add_argument("--no-refiner", action="store_true")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out-dir", default="runs")
        p.add_argument("--mock", action="store_true", help="use in-process mock ports")

    p_run = sub.add_parser("run", help="execute one configuration")
    add_run_flags(p_run, with_mode=True)
    p_run.set_defaults(func=cmd_run)

    p_ablate = sub.add_parser("ablate", help="execute the six-cell ablation grid")
    add_run_flags(p_ablate, with_mode=False)
    p_ablate.add_argument(
        "--k-sweep", nargs="*", default=None,
        help="top-k values to sweep ('default' for 3 5 10 15 20)",
    )
    p_ablate.add_argument(
        "--with-baselines", action="store_true",
        help="also run the four baseline modes",
    )
    p_ablate.set_defaults(func=cmd_ablate)

    p_report = sub.add_parser("report", help="render tables and figures over run artifacts")
    p_report.add_argument("--runs", nargs="+", required=True, help="artifact dirs or their parent")
    p_report.add_argument("--out-dir", default="report")
    p_report.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DuplicateId, EmptyText, IndexFormatError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except PortError as exc:
        print(f"error: port failure: {exc}", file=sys.stderr)
        return EXIT_PORT
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CounterspeechError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
