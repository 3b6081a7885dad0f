"""Figures for the aggregate report: step quality per approach and OB/EB label counts."""
from __future__ import annotations

from pathlib import Path
from typing import Mapping

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .evaluation import ELEMENT_TITLES, QUALITY_LABELS, ElementTable, compute_metrics  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.frameon": False,
    "savefig.dpi": 150,
}
LABEL_COLORS = {
    "Correct": "#4c956c",
    "Incomplete": "#f2c14e",
    "Ambiguous": "#f78154",
    "Missing": "#b0b0b0",
    "Incorrect": "#c44536",
}


def _save(fig, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="png", metadata={"Software": None}, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_step_quality(rows: Mapping[str, tuple[int, int, int]], path: str | Path) -> Path:
    """Grouped precision/recall/F1 bars, one group per approach."""
    names = list(rows)
    scores = [compute_metrics(*rows[n]) for n in names]
    series = {
        "Precision": [m.precision or 0.0 for m in scores],
        "Recall": [m.recall or 0.0 for m in scores],
        "F1": [m.f1 or 0.0 for m in scores],
    }
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(max(3.5, 1.4 * len(names) + 1.5), 3.0))
        width = 0.8 / len(series)
        for k, (label, values) in enumerate(series.items()):
            xs = [i + (k - 1) * width for i in range(len(names))]
            ax.bar(xs, values, width, label=label)
        ax.set_xticks(range(len(names)), names)
        ax.set_ylim(0, 100)
        ax.set_ylabel("%")
        ax.set_title("S2R quality")
        ax.legend(ncol=3, loc="upper center", bbox_to_anchor=(0.5, -0.12))
        return _save(fig, Path(path))


def plot_element_quality(table: ElementTable, path: str | Path) -> Path:
    """Horizontal stacked bars of label counts per OB/EB element."""
    elements = list(table.rows)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5.5, 0.5 * max(len(elements), 1) + 1.2))
        left = [0] * len(elements)
        for label in QUALITY_LABELS:
            counts = [table.rows[e][label] for e in elements]
            ax.barh(range(len(elements)), counts, left=left, color=LABEL_COLORS[label], label=label)
            left = [a + b for a, b in zip(left, counts)]
        ax.set_yticks(range(len(elements)), [ELEMENT_TITLES[e] for e in elements])
        ax.invert_yaxis()
        ax.set_xlabel(f"reports (n={table.reports})")
        ax.set_title("OB/EB element quality")
        ax.legend(ncol=len(QUALITY_LABELS), loc="upper center", bbox_to_anchor=(0.5, -0.25))
        return _save(fig, Path(path))
