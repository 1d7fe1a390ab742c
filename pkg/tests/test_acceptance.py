"""Acceptance suite: one test per release criterion, each printing a
pass line with the quantities it checked. Run with `pytest -rA` (or -s)
to see the per-criterion lines."""

import inspect
import math
import os
import random

import pytest

from counterspeech.agents import select_top_k
from counterspeech.domain import Evidence, MisinfoPost
from counterspeech.errors import PortError
from counterspeech.evaluation import (
    AnnotationPair,
    PinnedPolitenessScorer,
    agreement_rate,
    aggregate,
    cohen_kappa,
    format_cell,
)
from counterspeech.knowledge_store import (
    build_index,
    chunk_document,
    hybrid_retrieve,
    keyword_search,
)
from counterspeech.llm_gateway import MockChatBackend, StageRouterChatBackend
from counterspeech.pipeline import (
    RunConfig,
    bleu_overlap,
    mock_ports,
    run_ablation_grid,
    run_experiment,
)
from counterspeech.report import comparison_table_csv
from counterspeech.textmetrics import bleu, bm25_score, corpus_stats, cosine, tokenize
from counterspeech.web_evidence import SequenceJudge, factual_filter

from conftest import make_posts
from oracles import (
    agreement_oracle,
    bleu_oracle,
    bm25_oracle,
    cosine_oracle,
    fused_rank_oracle,
    kappa_oracle,
)
from test_pipeline import dir_fingerprint

VOCAB = ["flu", "shot", "covid", "vaccine", "trial", "safe", "virus", "data",
         "study", "dose", "risk", "case"]


def _pairs(labels_a, labels_b):
    domain = frozenset(labels_a) | frozenset(labels_b)
    return [
        AnnotationPair(item_id=str(i), label_a=a, label_b=b, label_domain=domain)
        for i, (a, b) in enumerate(zip(labels_a, labels_b))
    ]


def test_criterion_1_metric_oracles():
    rng = random.Random(20240801)
    cases = 200

    for _ in range(cases):
        docs = [[rng.choice(VOCAB) for _ in range(rng.randint(1, 12))]
                for _ in range(rng.randint(1, 6))]
        stats = corpus_stats(docs)
        query = [rng.choice(VOCAB) for _ in range(rng.randint(1, 4))]
        doc = rng.choice(docs)
        k1 = rng.uniform(0.2, 3.0)
        b = rng.uniform(0.0, 1.0)
        assert abs(bm25_score(query, doc, stats, k1, b)
                   - bm25_oracle(query, doc, docs, k1, b)) < 1e-9

    for _ in range(cases):
        cand = [rng.choice(VOCAB[:5]) for _ in range(rng.randint(1, 15))]
        ref = [rng.choice(VOCAB[:5]) for _ in range(rng.randint(1, 15))]
        max_n = rng.randint(1, 4)
        assert abs(bleu(cand, ref, max_n) - bleu_oracle(cand, ref, max_n)) < 1e-9

    for _ in range(cases):
        dim = rng.randint(2, 8)
        a = [rng.uniform(-5, 5) for _ in range(dim)]
        b = [rng.uniform(-5, 5) for _ in range(dim)]
        assert abs(cosine(a, b) - cosine_oracle(a, b)) < 1e-9

    kappa_checked = 0
    while kappa_checked < cases:
        n = rng.randint(2, 40)
        domain = list(range(rng.randint(2, 4)))
        la = [rng.choice(domain) for _ in range(n)]
        lb = [rng.choice(domain) for _ in range(n)]
        if len(set(la)) == 1 and set(la) == set(lb):
            continue
        pairs = _pairs(la, lb)
        assert abs(cohen_kappa(pairs) - kappa_oracle(la, lb)) < 1e-12
        assert abs(agreement_rate(pairs) - agreement_oracle(la, lb)) < 1e-9
        kappa_checked += 1

    # hand-derived fixtures
    cat_sat = bleu(["the", "cat", "sat"], ["the", "cat", "sat", "down"], max_n=2)
    assert round(cat_sat, 5) == 0.71653
    assert abs(cat_sat - math.exp(-1.0 / 3.0)) < 1e-9
    balanced = cohen_kappa(_pairs([1, 1, 0, 0], [1, 0, 1, 0]))
    assert abs(balanced) < 1e-12
    print(f"criterion 1 PASS: BM25/BLEU/cosine within 1e-9 and kappa within "
          f"1e-12 of brute-force oracles on {cases} cases each; "
          f"BLEU fixture {cat_sat:.5f}, balanced kappa {balanced:+.1e}")


def test_criterion_2_kappa_consistency_with_reported_regime():
    labels_a = [1] * 60 + [0] * 28 + [1] * 6 + [0] * 6
    labels_b = [1] * 60 + [0] * 28 + [0] * 6 + [1] * 6
    pairs = _pairs(labels_a, labels_b)
    rate = agreement_rate(pairs)
    kappa = cohen_kappa(pairs)
    assert len(pairs) == 100
    assert rate == pytest.approx(0.88, abs=1e-12)
    assert abs(kappa - 0.73) <= 0.02
    print(f"criterion 2 PASS: 100-pair synthetic set has agreement {rate:.2f} "
          f"and kappa {kappa:.4f} = 0.73 +/- 0.02")


def test_criterion_3_retrieval_properties(embedder):
    rng = random.Random(7331)

    for _ in range(500):
        n_docs = rng.randint(2, 6)
        chunks = []
        for d in range(n_docs):
            text = " ".join(rng.choice(VOCAB) for _ in range(rng.randint(3, 10)))
            chunks.extend(chunk_document(f"d{d}", text, chunk_size=16, overlap=0))
        index = build_index(chunks, embedder)
        query = " ".join(rng.choice(VOCAB) for _ in range(rng.randint(1, 4)))
        k = rng.randint(1, 4)
        evidence = hybrid_retrieve(index, query, k, embedder)
        ids = [e.source_url for e in evidence]
        assert len(ids) == len(set(ids)), "hybrid results must deduplicate"
        assert len(evidence) <= 2 * k, "hybrid results must respect the 2k bound"
        q_tokens = set(tokenize(query))
        for cid, _ in keyword_search(index, query, k):
            chunk = index.by_id[cid]
            assert q_tokens & set(tokenize(chunk.text)), "keyword hit shares no token"

    for i in range(100):
        post = MisinfoPost(f"p{i}", " ".join(rng.choice(VOCAB) for _ in range(6)))
        pool_texts = [
            " ".join(rng.choice(VOCAB) for _ in range(rng.randint(3, 9)))
            for _ in range(rng.randint(1, 8))
        ]
        pool = [Evidence(text=t, origin="static") for t in pool_texts]
        k = rng.randint(1, 6)
        ranked = select_top_k(post, pool, k, embedder)
        vectors = embedder.embed([post.text] + pool_texts)
        want_order, _ = fused_rank_oracle(
            tokenize(post.text), pool_texts, [tokenize(t) for t in pool_texts],
            vectors[1:], vectors[0], k,
        )
        assert [r.evidence.text for r in ranked] == [pool_texts[j] for j in want_order]

    assert inspect.signature(select_top_k).parameters["k"].default == 10
    assert RunConfig(mode="multi_agent").k_top == 10
    print("criterion 3 PASS: dedup and 2k bound on 500 corpora, keyword overlap "
          "property, fused top-k matches brute force on 100 pools, default k=10")


def test_criterion_4_dynamic_factual_filter():
    scores = [0.9, 0.65, 0.66, 0.3, 0.7, 0.64]
    items = [
        Evidence(text=f"candidate factual statement number {i}", origin="dynamic",
                 source_url=f"https://site.test/{i}")
        for i in range(len(scores))
    ]
    kept = factual_filter(items, SequenceJudge(scores), threshold=0.65)
    assert [e.factual_score for e in kept] == [0.9, 0.66, 0.7]
    assert [items.index(next(i for i in items if i.text == e.text)) for e in kept] == [0, 2, 4]
    mean = sum(e.factual_score for e in kept) / len(kept)
    assert mean > 0.65
    print(f"criterion 4 PASS: scores {scores} with threshold 0.65 keep exactly "
          f"the >0.65 items; surviving mean {mean:.3f} > 0.65")


def _grid_and_baselines(posts, index, seed, out_dir):
    ports = mock_ports(seed=seed, index=index)
    base = RunConfig(mode="multi_agent", seed=seed)
    artifacts = run_ablation_grid(posts, base, ports, out_dir=out_dir)
    for mode in ("llm_dp", "llm_pe", "static_rag", "dynamic_rag"):
        cfg = RunConfig(mode=mode, seed=seed)
        artifacts.append(run_experiment(posts, cfg, ports, out_dir=out_dir))
    return artifacts


def test_criterion_5_end_to_end_determinism(small_index, tmp_path):
    posts = make_posts(10)
    first = _grid_and_baselines(posts, small_index, seed=11, out_dir=tmp_path / "a")
    second = _grid_and_baselines(posts, small_index, seed=11, out_dir=tmp_path / "b")
    assert len(first) == len(second) == 10  # 6 grid cells + 4 baselines

    fp_a = dir_fingerprint(tmp_path / "a")
    fp_b = dir_fingerprint(tmp_path / "b")
    assert fp_a == fp_b and fp_a, "same-seed reruns must be byte-identical"

    for artifact in first:
        cfg = artifact.config
        assert len(artifact.responses) == 10
        for record in artifact.responses:
            if cfg.mode == "multi_agent":
                assert ("summarizer" in record.agents_used) == cfg.use_summarizer
                assert ("refiner" in record.agents_used) == cfg.use_refiner
                assert (record.refined is not None) == cfg.use_refiner
                assert {"static_ret", "dynamic_ret", "generator"} <= record.agents_used
            elif cfg.mode == "llm_dp":
                assert record.agents_used == {"generator"}
                assert record.prompt_style == "direct"
            elif cfg.mode == "llm_pe":
                assert record.agents_used == {"generator"}
            elif cfg.mode == "static_rag":
                assert record.agents_used == {"static_ret", "generator"}
            else:
                assert record.agents_used == {"dynamic_ret", "generator"}
    without_refiner = [
        a for a in first
        if a.config.mode == "multi_agent"
        and a.config.use_summarizer and not a.config.use_refiner
    ]
    assert without_refiner
    assert all(r.refined is None for a in without_refiner for r in a.responses)
    print(f"criterion 5 PASS: 10-run grid+baselines on 10 posts byte-identical "
          f"across same-seed reruns ({len(fp_a)} files compared); agents_used "
          f"match every cell")


def test_criterion_6_bleu_overlap_diagnostic():
    static_side = {
        "p1": "Influenza vaccination is recommended each autumn for all age groups.",
        "p2": "Clinical trials established the safety profile of the approved vaccines.",
        "p3": "Wash your hands frequently with soap and warm water to reduce transmission.",
        "p4": "Antiviral treatment works best when started within two days of onset.",
        "p5": "Immunity from vaccination develops roughly two weeks after the dose.",
        "p6": "People with chronic conditions face a higher risk of severe influenza.",
    }
    dynamic_side = {
        "p1": "News outlets covered rising clinic visits across several regions this week.",
        "p2": "A hospital spokesperson described staffing pressure during the winter surge.",
        "p3": "Health officials again urged people to wash your hands frequently with soap "
              "during the seasonal wave and to stay home when feeling ill.",
        "p4": "Pharmacies reported strong demand for rapid tests over the weekend.",
        "p5": "Local coverage highlighted community volunteers driving patients to clinics.",
        "p6": "Reporters summarized new school attendance figures released on Monday.",
    }
    channel_pairs = {
        pid: (
            [Evidence(text=static_side[pid], origin="static")],
            [Evidence(text=dynamic_side[pid], origin="dynamic",
                      source_url="https://news.test/x")],
        )
        for pid in static_side
    }
    out = bleu_overlap(channel_pairs)
    assert out["bleu_overlap_pairs"] == 6
    assert 0.0 <= out["bleu_overlap_mean"] <= 0.05
    print(f"criterion 6 PASS: overlap mean {out['bleu_overlap_mean']:.4f} "
          f"(std {out['bleu_overlap_std']:.4f}) lies in [0, 0.05]")


def test_criterion_7_report_fidelity(small_index):
    values = [0.2, 0.4, 0.6, 0.8, 1.0]
    per_response = {f"p{i}": {"politeness": v} for i, v in enumerate(values)}
    report = aggregate(per_response)
    agg = report.aggregate["politeness"]
    hand_mean = sum(values) / len(values)
    hand_std = math.sqrt(sum((v - hand_mean) ** 2 for v in values) / len(values))
    assert abs(agg.mean - hand_mean) < 1e-9
    assert abs(agg.std - hand_std) < 1e-9
    assert format_cell(agg.mean, agg.std) == "0.60 (0.28)"
    assert format_cell(0.876, 0.141) == "0.88 (0.14)"

    posts = make_posts(3)
    ports = mock_ports(seed=2, index=small_index)
    artifact = run_experiment(posts, RunConfig(mode="multi_agent", seed=2), ports)
    table = comparison_table_csv([artifact])
    lines = table.strip().split("\n")
    assert lines[0] == "method,prompt,politeness,relevance,informativeness,factual_accuracy"
    import re
    cells = lines[1].split(",")[2:]
    assert all(re.fullmatch(r"\d\.\d{2} \(\d\.\d{2}\)", c) for c in cells)
    print(f"criterion 7 PASS: aggregate matches hand mean/std to 1e-9; cells "
          f"render as 'mean (std)' with 2 decimals, e.g. {cells[0]!r}")


def test_criterion_8_pinned_scores_reproduced(small_index):
    # Absolute reported metric values are not desk-scale reproducible: they
    # depend on specific LLM weights, a live politeness classifier, and live
    # web results. The substitute property: with ports pinned to fixed
    # scores, the aggregated report reproduces the pinned values, proving
    # the measurement plumbing is faithful.
    posts = make_posts(10)
    ports = mock_ports(seed=0, index=small_index)
    ports.politeness = PinnedPolitenessScorer(0.88)
    ports.chat = StageRouterChatBackend(
        default=MockChatBackend("echo"),
        routes={"judge": MockChatBackend("canned", canned={}, fallback_text="Score: 4")},
    )
    artifact = run_experiment(posts, RunConfig(mode="multi_agent", seed=0), ports)
    agg = artifact.scores.aggregate
    assert agg["politeness"].mean == pytest.approx(0.88, abs=1e-12)
    assert agg["politeness"].std == pytest.approx(0.0, abs=1e-12)
    assert agg["informativeness"].mean == 0.75  # (4-1)/4 is binary-exact
    assert agg["informativeness"].std == 0.0
    assert agg["factual_accuracy"].mean == 0.75
    assert agg["factual_accuracy"].std == 0.0
    print("criterion 8 PASS: pinned politeness 0.88 and judge score 4 surface "
          "as 0.88/0.75 aggregates with zero std; absolute paper values are "
          "declared non-reproducible at desk scale")


LIVE = os.environ.get("COUNTERSPEECH_LIVE_SMOKE") == "1"


@pytest.mark.skipif(
    not LIVE,
    reason="live smoke needs COUNTERSPEECH_LIVE_SMOKE=1 plus endpoint env vars",
)
def test_criterion_9_live_smoke(small_index):
    from counterspeech.cli import build_ports, resolve_endpoints, _read_config_file
    from counterspeech.agents import exceeds_word_budget

    endpoints, api_key, timeout = resolve_endpoints(_read_config_file(None))
    ports = build_ports(endpoints, api_key, timeout, mock=False, seed=0, index=small_index)
    post = make_posts(1)[0]
    try:
        artifact = run_experiment([post], RunConfig(
            mode="multi_agent", endpoints=endpoints
        ), ports)
    except PortError as exc:
        pytest.fail(f"live endpoint unavailable: {exc}")
    assert len(artifact.responses) == 1
    record = artifact.responses[0]
    assert record.refined
    expected_warnings = 1 if exceeds_word_budget(record.refined) else 0
    assert artifact.diagnostics["refine_length_warnings"] == expected_warnings
    print("criterion 9 PASS: live multi-agent run returned a refined response")
