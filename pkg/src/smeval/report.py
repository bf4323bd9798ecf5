"""Report output: plot data as CSV, plus optional matplotlib figures written next to it.

The CSV files are the canonical, byte-reproducible output.  Figures are a
convenience rendering of the same numbers.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

FIG_RC = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "legend.fontsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
}


def fig_size(scale=1.0, ratio=None):
    golden = (5 ** 0.5 - 1.0) / 2.0
    width = 6.0 * scale
    return width, width * (ratio or golden)


def _write_rows(path, header, rows) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([format(v, ".17g") if isinstance(v, float) else v for v in r])
    return path


def write_model_means(path, means: dict) -> Path:
    """``means``: measure -> {model: mean score}.  One row per model, one column per measure."""
    measures = list(means)
    models = sorted({m for d in means.values() for m in d})
    return _write_rows(path, ["model", *measures],
                       [[m, *(float(means[k][m]) for k in measures)] for m in models])


def write_histogram(path, histogram: list) -> Path:
    return _write_rows(path, ["distance", "images"],
                       [[float(h["distance"]), int(h["images"])] for h in histogram])


TABLE_COLUMNS = ("MM1", "MM2(%)", "MM3(%)")


def write_meta_table(path, table: dict) -> Path:
    """``table``: measure -> {"MM1": .., "MM2(%)": .., "MM3(%)": ..}: one row per measure."""
    return _write_rows(path, ["measure", *TABLE_COLUMNS],
                       [[name, *(float(row[c]) for c in TABLE_COLUMNS)] for name, row in table.items()])


def _save(fig, path) -> Path:
    path = Path(path)
    fig.savefig(path, metadata={"Software": None} if path.suffix == ".png" else None)
    plt.close(fig)
    return path


def plot_model_means(path, means: dict, dataset: str = "") -> Path:
    """Grouped bars of the per-model mean score for every measure, models sorted by the first measure."""
    measures = list(means)
    first = means[measures[0]]
    models = sorted(first, key=lambda m: -first[m])
    with plt.rc_context(FIG_RC):
        fig, ax = plt.subplots(figsize=fig_size())
        width = 0.8 / len(measures)
        for k, name in enumerate(measures):
            xs = [i + (k - (len(measures) - 1) / 2) * width for i in range(len(models))]
            ax.bar(xs, [means[name][m] for m in models], width, label=name)
        ax.set_xticks(range(len(models)))
        ax.set_xticklabels(models, rotation=45, ha="right")
        ax.set_ylabel("mean score")
        ax.set_ylim(0, 1)
        if dataset:
            ax.set_title(dataset)
        ax.legend(frameon=False, ncol=len(measures))
        return _save(fig, path)


def plot_rank_histogram(path, histogram: list, label_a: str = "A", label_b: str = "B") -> Path:
    with plt.rc_context(FIG_RC):
        fig, ax = plt.subplots(figsize=fig_size(0.8))
        ax.bar([h["distance"] for h in histogram], [h["images"] for h in histogram], width=0.6)
        ax.set_xlabel(f"rank distance ({label_a} vs {label_b})")
        ax.set_ylabel("images")
        return _save(fig, path)


def plot_meta_table(path, table: dict) -> Path:
    names = list(table)
    with plt.rc_context(FIG_RC):
        fig, axes = plt.subplots(1, len(TABLE_COLUMNS), figsize=fig_size(1.2, 0.35))
        for ax, col in zip(axes, TABLE_COLUMNS):
            ax.bar(names, [table[n][col] for n in names])
            ax.set_title(col)
            ax.tick_params(axis="x", rotation=45)
        return _save(fig, path)
