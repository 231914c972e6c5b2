"""Figures rendered next to the text outputs of a run."""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .models import predict


def save_timing_breakdown(timings, path):
    """Horizontal bar chart of per-phase wall time."""
    rows = [r for r in timings.rows() if r[0] != "total"]
    names = [r[0].replace("_", " ") for r in rows]
    secs = [r[1] for r in rows]
    fig, ax = plt.subplots(figsize=(6.4, 3.2))
    ax.barh(names[::-1], secs[::-1], color="#4878a8")
    ax.set_xlabel("seconds")
    ax.set_title(f"phase breakdown, total {timings.total:.2f} s")
    for i, v in enumerate(secs[::-1]):
        ax.text(v, i, f" {v:.2f}", va="center", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_parity_plot(dataset, model, path):
    """Predicted against measured property for the best model of one dimension."""
    labels, slices = dataset.task_partition()
    pred = predict(model, dataset.primary_values, slices)
    y = dataset.property_values
    fig, ax = plt.subplots(figsize=(4.8, 4.6))
    for lab, sl in zip(labels, slices):
        ax.scatter(y[sl], pred[sl], s=14, alpha=0.75, label=lab)
    lo = min(float(y.min()), float(pred.min()))
    hi = max(float(y.max()), float(pred.max()))
    pad = 0.05 * (hi - lo) if hi > lo else 1.0
    ax.plot([lo - pad, hi + pad], [lo - pad, hi + pad], "k--", lw=1)
    ax.set_xlim(lo - pad, hi + pad)
    ax.set_ylim(lo - pad, hi + pad)
    ax.set_xlabel(f"measured {dataset.property_name}")
    ax.set_ylabel("predicted")
    rmse = float(np.sqrt(np.mean((pred - y) ** 2)))
    ax.set_title(f"{model.dimension}-feature model, rmse {rmse:.3g}")
    if len(labels) > 1:
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_pool_growth(rung_stats, n_primary, path):
    """Survivors per rung against the raw candidate counts."""
    rungs = [0] + [st.rung for st in rung_stats]
    kept = [n_primary] + [st.n_kept for st in rung_stats]
    pairs = [n_primary] + [max(st.n_pairs, 1) for st in rung_stats]
    x = np.arange(len(rungs))
    fig, ax = plt.subplots(figsize=(5.6, 3.6))
    ax.bar(x - 0.2, pairs, width=0.4, label="candidates", color="#c8a878")
    ax.bar(x + 0.2, kept, width=0.4, label="kept", color="#4878a8")
    ax.set_yscale("log")
    ax.set_xticks(x)
    ax.set_xticklabels([str(r) for r in rungs])
    ax.set_xlabel("rung")
    ax.set_ylabel("features")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_figures(result, dataset, output_dir) -> list[str]:
    """Render every figure for a finished run; returns the written paths."""
    paths = []
    p = os.path.join(output_dir, "timing_breakdown.png")
    save_timing_breakdown(result.timings, p)
    paths.append(p)
    if result.rung_stats:
        p = os.path.join(output_dir, "pool_growth.png")
        save_pool_growth(result.rung_stats, dataset.n_primary, p)
        paths.append(p)
    for dim in result.dimensions:
        if dim.models:
            p = os.path.join(output_dir, f"parity_dim{dim.dimension}.png")
            save_parity_plot(dataset, dim.models[0], p)
            paths.append(p)
    return paths
