"""Report rendering over one or more run artifacts.

Outputs a comparison table (rows = methods, columns = the four metrics,
cells = "mean (std)"), a long-form chart data file, and matplotlib figures
rendered alongside the delimited output: a grouped metric bar chart and,
when a top-k sweep is present, a k-versus-score line chart.
"""

from __future__ import annotations

import csv
import io
from pathlib import Path
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .domain import METRICS
from .evaluation import format_cell
from .pipeline import RunArtifact, method_label, prompt_label


def _row_label(artifact: RunArtifact) -> tuple[str, str]:
    return method_label(artifact.config), prompt_label(artifact.config)


_MODE_RANK = {"llm_dp": 0, "llm_pe": 1, "static_rag": 2, "dynamic_rag": 3, "multi_agent": 4}
_CELL_RANK = {(False, False): 0, (False, True): 1, (True, False): 2, (True, True): 3}


def presentation_order(artifacts: Sequence[RunArtifact]) -> list[RunArtifact]:
    """Baselines first, then ablation cells in table order, then k sweeps."""

    def key(artifact: RunArtifact):
        cfg = artifact.config
        return (
            _MODE_RANK[cfg.mode],
            _CELL_RANK[(cfg.use_summarizer, cfg.use_refiner)],
            0 if cfg.prompt_style == "cot" else 1,
            cfg.k_top,
            cfg.config_id,
        )

    return sorted(artifacts, key=key)


def comparison_table_csv(artifacts: Sequence[RunArtifact]) -> str:
    """Paper-style table: one row per run, "mean (std)" cells."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["method", "prompt"] + list(METRICS))
    for artifact in artifacts:
        method, prompt = _row_label(artifact)
        cells = []
        for metric in METRICS:
            agg = artifact.scores.aggregate.get(metric) if artifact.scores else None
            cells.append(format_cell(agg.mean, agg.std) if agg else "")
        writer.writerow([method, prompt] + cells)
    return buf.getvalue()


def chart_data_csv(artifacts: Sequence[RunArtifact]) -> str:
    """Long-form numeric data backing the charts: one row per run/metric."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["method", "prompt", "k_top", "metric", "mean", "std", "n"])
    for artifact in artifacts:
        method, prompt = _row_label(artifact)
        for metric in METRICS:
            agg = artifact.scores.aggregate.get(metric) if artifact.scores else None
            if agg is None:
                continue
            writer.writerow(
                [method, prompt, artifact.config.k_top, metric,
                 f"{agg.mean:.6f}", f"{agg.std:.6f}", agg.n]
            )
    return buf.getvalue()


def render_comparison_figure(artifacts: Sequence[RunArtifact], path) -> Optional[Path]:
    """Grouped bars: metric groups on x, one bar per run, std as error bars."""
    rows = [a for a in artifacts if a.scores is not None]
    if not rows:
        return None
    width = 0.8 / len(rows)
    fig, ax = plt.subplots(figsize=(9, 4.5))
    for i, artifact in enumerate(rows):
        method, prompt = _row_label(artifact)
        means = [artifact.scores.aggregate[m].mean for m in METRICS]
        stds = [artifact.scores.aggregate[m].std for m in METRICS]
        positions = [j + i * width for j in range(len(METRICS))]
        ax.bar(positions, means, width=width, yerr=stds, capsize=2,
               label=f"{method} ({prompt})")
    ax.set_xticks([j + 0.4 - width / 2 for j in range(len(METRICS))])
    ax.set_xticklabels([m.replace("_", " ") for m in METRICS])
    ax.set_ylabel("score")
    ax.set_ylim(0, 1.05)
    ax.legend(fontsize=7, ncol=2)
    ax.set_title("Counterspeech evaluation by method")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return Path(path)


def render_topk_figure(artifacts: Sequence[RunArtifact], path) -> Optional[Path]:
    """Line chart of metric means against k for full-pipeline sweep runs;
    skipped unless at least two distinct k values are present."""
    sweep = [
        a for a in artifacts
        if a.scores is not None
        and a.config.mode == "multi_agent"
        and a.config.use_summarizer
        and a.config.use_refiner
    ]
    by_k = {a.config.k_top: a for a in sweep}
    if len(by_k) < 2:
        return None
    ks = sorted(by_k)
    fig, ax = plt.subplots(figsize=(7, 4))
    for metric in METRICS:
        ax.plot(ks, [by_k[k].scores.aggregate[metric].mean for k in ks],
                marker="o", label=metric.replace("_", " "))
    ax.set_xlabel("top-k evidence")
    ax.set_ylabel("mean score")
    ax.set_xticks(ks)
    ax.set_ylim(0, 1.05)
    ax.legend(fontsize=8)
    ax.set_title("Effect of top-k evidence filtering")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return Path(path)


def write_report(artifacts: Sequence[RunArtifact], out_dir) -> dict[str, Path]:
    """Render every report product into out_dir; returns written paths."""
    artifacts = presentation_order(artifacts)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: dict[str, Path] = {}
    table_path = out / "comparison_table.csv"
    table_path.write_text(comparison_table_csv(artifacts), encoding="utf-8")
    written["table"] = table_path
    data_path = out / "chart_data.csv"
    data_path.write_text(chart_data_csv(artifacts), encoding="utf-8")
    written["chart_data"] = data_path
    bar_path = render_comparison_figure(artifacts, out / "comparison.png")
    if bar_path:
        written["comparison_figure"] = bar_path
    sweep_path = render_topk_figure(artifacts, out / "topk_sweep.png")
    if sweep_path:
        written["topk_figure"] = sweep_path
    return written
