"""Figure rendering for pipeline runs.

Renders the objective trace, per-concept F-scores and MAP-vs-cutoff curves
to PNG files next to the delimited outputs.  Uses the Agg backend so runs
work headless.
"""

from __future__ import annotations

import logging
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  backend must be pinned first

logger = logging.getLogger(__name__)

TRACE_FIGURE = "trace.png"
FSCORE_FIGURE = "fscore.png"
MAP_FIGURE = "map.png"


def save_trace_figure(trace, path) -> Path:
    """Objective value per iteration on a log scale."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    values = list(trace)
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    if values and min(values) > 0:
        ax.semilogy(range(len(values)), values, lw=1.2)
    else:
        ax.plot(range(len(values)), values, lw=1.2)
    ax.set_xlabel("iteration")
    ax.set_ylabel("objective")
    ax.set_title("completion objective trace")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_fscore_figure(report, path) -> Path:
    """Per-concept F-score bars with the average drawn as a reference line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    concepts = sorted(report.per_concept)
    values = [report.per_concept[c]["fscore"] for c in concepts]
    width = max(6.0, 0.3 * len(concepts))
    fig, ax = plt.subplots(figsize=(width, 4.0))
    ax.bar(range(len(concepts)), values, color="#4878a8")
    ax.axhline(report.average_fscore, color="#a84848", lw=1.0, ls="--",
               label=f"average {report.average_fscore:.3f}")
    ax.set_xticks(range(len(concepts)))
    ax.set_xticklabels(concepts, rotation=90, fontsize=7)
    ax.set_ylabel("F-score")
    ax.set_ylim(0.0, 1.05)
    ax.set_title("per-concept F-score")
    ax.legend(loc="lower right")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_map_figure(report, path) -> Path:
    """Per-query AP curves over the cutoffs plus the MAP curve."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    cutoffs = sorted(report.map_at)
    for query, aps in sorted(report.retrieval.items()):
        xs = sorted(aps)
        ax.plot(xs, [aps[c] for c in xs], alpha=0.4, lw=0.9, label=f"AP {query}")
    if cutoffs:
        ax.plot(cutoffs, [report.map_at[c] for c in cutoffs],
                color="black", lw=2.0, marker="o", label="MAP")
    ax.set_xlabel("cutoff")
    ax.set_ylabel("average precision")
    ax.set_ylim(0.0, 1.05)
    ax.set_title("retrieval precision vs cutoff")
    if len(report.retrieval) <= 8:
        ax.legend(fontsize=7)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def render_run_figures(out_dir, trace=None, report=None) -> list:
    """Write whichever figures the available artifacts support; list the paths."""
    out_dir = Path(out_dir)
    written = []
    if trace is not None and len(trace) > 0:
        written.append(save_trace_figure(trace, out_dir / TRACE_FIGURE))
    if report is not None and report.per_concept:
        written.append(save_fscore_figure(report, out_dir / FSCORE_FIGURE))
    if report is not None and report.map_at:
        written.append(save_map_figure(report, out_dir / MAP_FIGURE))
    for path in written:
        logger.info("wrote figure %s", path)
    return written
