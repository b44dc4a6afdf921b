"""Figures written next to the tabular report."""
from __future__ import annotations

import io
import logging
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from scipy.stats import gaussian_kde  # noqa: E402

log = logging.getLogger(__name__)

VIOLIN_HALF_WIDTH = 0.4


def _style():
    return {
        "svg.hashsalt": "mpslab",
        "svg.fonttype": "none",
        "font.size": 9,
        "axes.spines.top": False,
        "axes.spines.right": False,
    }


def silverman_kde(values: np.ndarray, grid: np.ndarray) -> np.ndarray:
    kde = gaussian_kde(values, bw_method="silverman")
    return kde(grid)


def plot_violin(records, tags=None, path=None) -> str:
    """Violin per model of non-degenerate area ratios, coloured by architecture.

    Returns the SVG text, and writes it to ``path`` when given. Models with
    fewer than two usable records are left out with a warning.
    """
    tags = tags or {}
    areas = defaultdict(list)
    for r in records:
        if not r.degenerate:
            areas[r.model_id].append(r.area_ratio)
    models = []
    for m in sorted(areas):
        if len(areas[m]) < 2:
            log.warning("model %s has fewer than 2 records; omitted from violin plot", m)
            continue
        models.append(m)
    if not models:
        raise ValueError("no model has at least two non-degenerate records")

    tag_list = sorted({tags.get(m, m) for m in models})
    cmap = plt.get_cmap("tab10")
    colour = {t: cmap(i % 10) for i, t in enumerate(tag_list)}

    with plt.rc_context(_style()):
        fig, ax = plt.subplots(figsize=(max(4.0, 0.9 * len(models) + 1.5), 3.5))
        for x, m in enumerate(models):
            v = np.asarray(areas[m], dtype=float)
            c = colour[tags.get(m, m)]
            if np.ptp(v) == 0:
                # zero variance: the density collapses to a tick at the value
                ax.hlines(v[0], x - VIOLIN_HALF_WIDTH, x + VIOLIN_HALF_WIDTH, colors=[c], linewidth=2, gid=f"violin-{m}")
                continue
            pad = 0.1 * np.ptp(v)
            grid = np.linspace(v.min() - pad, v.max() + pad, 200)
            dens = silverman_kde(v, grid)
            half = VIOLIN_HALF_WIDTH * dens / dens.max()
            poly = ax.fill_betweenx(grid, x - half, x + half, facecolor=c, edgecolor="black", linewidth=0.5, alpha=0.8)
            poly.set_gid(f"violin-{m}")
            ax.hlines(np.median(v), x - 0.15, x + 0.15, colors="black", linewidth=1)
        ax.set_xticks(range(len(models)))
        ax.set_xticklabels(models, rotation=30, ha="right")
        ax.set_ylabel("MPS area / image area")
        handles = [plt.Rectangle((0, 0), 1, 1, color=colour[t]) for t in tag_list]
        if len(tag_list) > 1:
            ax.legend(handles, tag_list, frameon=False, fontsize=8)
        fig.tight_layout()
        buf = io.StringIO()
        fig.savefig(buf, format="svg", metadata={"Date": None})
        plt.close(fig)
    svg = buf.getvalue()
    if path is not None:
        with open(path, "w") as fh:
            fh.write(svg)
    return svg
