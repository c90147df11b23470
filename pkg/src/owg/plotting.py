"""Figures for benchmark and grounding reports (rendered to files)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

_RC = {
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
}


def plot_miou(report, path, title="Grounding mIoU per query type"):
    types = list(report.per_type)
    values = [float(report.per_type[t]) for t in types]
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(6.4, 3.2))
        bars = ax.bar(range(len(types)), values, color="#4c72b0")
        ax.axhline(float(report.overall), color="#c44e52", lw=1, ls="--", label=f"overall {float(report.overall):.3f}")
        for b, n in zip(bars, (report.counts[t] for t in types)):
            ax.annotate(f"n={n}", (b.get_x() + b.get_width() / 2, b.get_height()), ha="center", va="bottom",
                        fontsize=7, xytext=(0, 2), textcoords="offset points")
        ax.set_xticks(range(len(types)))
        ax.set_xticklabels([t.replace("_", "\n") for t in types])
        ax.set_ylim(0, 1.1)
        ax.set_ylabel("mIoU")
        ax.set_title(title)
        ax.legend(loc="upper right", frameon=False)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return path


def plot_breakdown(results, path, title="Trial outcomes"):
    """Stacked bars of successes and failure causes, one bar per configuration.

    ``results`` maps a configuration name to a :class:`FailureBreakdown`.
    """
    names = list(results)
    parts = [
        ("successes", "success", "#55a868"),
        ("grounding_failures", "grounding failure", "#c44e52"),
        ("grasping_failures", "grasping failure", "#dd8452"),
    ]
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(1.4 * len(names) + 2.4, 3.2))
        bottom = [0] * len(names)
        for attr, label, color in parts:
            vals = [getattr(results[n], attr) for n in names]
            ax.bar(range(len(names)), vals, bottom=bottom, color=color, label=label)
            bottom = [b + v for b, v in zip(bottom, vals)]
        ax.set_xticks(range(len(names)))
        ax.set_xticklabels(names)
        ax.set_ylim(0, max(bottom + [1]) * 1.12)
        ax.set_ylabel("trials")
        ax.set_title(title)
        ax.legend(frameon=False, fontsize=7, loc="upper left", bbox_to_anchor=(1.0, 1.0))
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return path
