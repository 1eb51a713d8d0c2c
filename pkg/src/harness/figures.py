"""
Static SVG boxplots drawn from precomputed statistics, so the figure and the
CSV report always show the same numbers.
"""

import logging
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from src.timeline.schemas import AggregateStats  # noqa: E402

logger = logging.getLogger(__name__)

matplotlib.rcParams["svg.hashsalt"] = "timeline-eval"


def group_label(stats: AggregateStats, group_by: Sequence[str]) -> str:
    return "\n".join(f"{g}={stats.group.get(g)}" for g in group_by) or "all"


def box_entries(stats: Sequence[AggregateStats], group_by: Sequence[str]):
    """Inputs for Axes.bxp, one per group"""
    return [
        {
            "label": group_label(s, group_by),
            "med": s.median,
            "q1": s.q1,
            "q3": s.q3,
            "whislo": s.whisker_low,
            "whishi": s.whisker_high,
            "mean": s.mean,
            "fliers": [],
        }
        for s in stats
    ]


def boxplot_svg(stats: Sequence[AggregateStats], group_by: Sequence[str], path: Path,
                metric: str = "f1", title: str = "") -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    entries = box_entries(stats, group_by)

    fig, ax = plt.subplots(figsize=(max(4.0, 1.3 * len(entries) + 1.5), 4.0))
    if entries:
        ax.bxp(entries, showmeans=True, showfliers=False)
    ax.set_ylabel(metric)
    ax.set_ylim(-0.02, 1.02)
    ax.set_title(title or f"{metric} by {', '.join(group_by) or 'run'}", fontsize=9)
    ax.tick_params(axis="x", labelsize=7)
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    logger.info("Wrote %d boxes to %s", len(entries), path)
    return path
