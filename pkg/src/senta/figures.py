"""Figure rendering for evaluation reports.

Every report written to disk gets companion PNG charts: per-split accuracy
bars and, when drop pairs are configured, the accuracy-drop comparison.
Rendering is deterministic so run manifests can hash the images.
"""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .evalharness import EvalReport  # noqa: E402

_COLORS = ("#4878d0", "#ee854a", "#6acc64", "#d65f5f", "#956cb4", "#8c613c")


def render_figures(report: EvalReport, out_dir: str | Path, stem: str = "report") -> list[Path]:
    """Write accuracy (and drop) charts next to the report files."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = [_accuracy_figure(report, out_dir / f"{stem}_accuracy.png")]
    if report.drop_pairs:
        written.append(_drop_figure(report, out_dir / f"{stem}_drops.png"))
    return written


def _accuracy_figure(report: EvalReport, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(7, 4))
    n_models = len(report.models)
    width = 0.8 / max(n_models, 1)
    for mi, model in enumerate(report.models):
        xs = [si + mi * width for si in range(len(report.splits))]
        ys = [float(report.result(model, s).accuracy_display()) for s in report.splits]
        ax.bar(xs, ys, width=width, label=model, color=_COLORS[mi % len(_COLORS)])
    ax.set_xticks([si + width * (n_models - 1) / 2 for si in range(len(report.splits))])
    ax.set_xticklabels(report.splits)
    ax.set_ylabel("accuracy (%)")
    ax.set_ylim(0, 100)
    ax.set_title("accuracy by split")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def _drop_figure(report: EvalReport, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(7, 4))
    labels = [f"{ori}→{change}" for ori, change in report.drop_pairs]
    n_models = len(report.models)
    width = 0.8 / max(n_models, 1)
    for mi, model in enumerate(report.models):
        xs = [pi + mi * width for pi in range(len(report.drop_pairs))]
        ys = [
            float(report.drop_display(model, ori, change))
            for ori, change in report.drop_pairs
        ]
        ax.bar(xs, ys, width=width, label=model, color=_COLORS[mi % len(_COLORS)])
    ax.set_xticks([pi + width * (n_models - 1) / 2 for pi in range(len(report.drop_pairs))])
    ax.set_xticklabels(labels)
    ax.set_ylabel("accuracy drop (points)")
    ax.set_title("accuracy drop (lower is more robust)")
    ax.axhline(0.0, color="black", linewidth=0.8)
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
