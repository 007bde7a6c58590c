"""Optional figures rendered from finished reports.

Figures are a companion to the CSV output: they read the same rows and never
feed back into results.  matplotlib is imported lazily with the Agg backend.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def figure_path(csv_path: str | Path, name: str) -> Path:
    csv_path = Path(csv_path)
    return csv_path.with_name(f"{csv_path.stem}_{name}.png")


def plot_convergence(report, csv_path) -> list:
    """Log-log generator gap against k, one line per lambda."""
    plt = _pyplot()
    rows = [r for r in report.rows if r[3] == "generator_gap"]
    fig, ax = plt.subplots(figsize=(6, 4))
    for lam in sorted({r[4] for r in rows}):
        pts = sorted((r[1], r[5]) for r in rows if r[4] == lam)
        ks, gaps = zip(*pts)
        ax.loglog(ks, np.maximum(gaps, 1e-300), marker="o", label=f"lambda={lam:g}")
    ax.set_xlabel("k")
    ax.set_ylabel("max generator gap")
    ax.legend()
    ax.grid(True, which="both", alpha=0.3)
    out = figure_path(csv_path, "generator_gap")
    fig.tight_layout()
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return [out]


def plot_comparison(report, csv_path) -> list:
    """z-scores of every compared cell, grouped by k."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    labels = [f"{r[4]}" + (f"({r[5]:g})" if r[5] is not None else "") + f" t={r[3]:g}"
              for r in report.rows]
    ks = sorted({r[1] for r in report.rows})
    for k in ks:
        sel = [i for i, r in enumerate(report.rows) if r[1] == k]
        z = [report.rows[i][11] for i in sel]
        ax.plot(range(len(sel)), z, marker="o", linestyle="", label=f"k={k}")
    first = [labels[i] for i, r in enumerate(report.rows) if r[1] == ks[0]]
    ax.set_xticks(range(len(first)))
    ax.set_xticklabels(first, rotation=60, ha="right", fontsize=7)
    for level in (-3, 3):
        ax.axhline(level, color="grey", linestyle="--", linewidth=0.8)
    ax.set_ylabel("difference / combined SE")
    ax.legend()
    out = figure_path(csv_path, "zscores")
    fig.tight_layout()
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return [out]


def plot_paths(report, csv_path, max_paths: int = 20) -> list:
    """A few sample paths per process and k."""
    plt = _pyplot()
    groups: dict = {}
    for _, process, k, path, t, v in report.rows:
        if path < max_paths:
            groups.setdefault((process, k), {}).setdefault(path, []).append((t, v))
    fig, ax = plt.subplots(figsize=(6, 4))
    colours = plt.rcParams["axes.prop_cycle"].by_key()["color"]
    for i, ((process, k), paths) in enumerate(sorted(groups.items(), key=lambda g: (g[0][0], g[0][1] or 0))):
        label = "limit" if process == "limit" else f"k={k}"
        for n, pts in enumerate(paths.values()):
            t, v = zip(*pts)
            ax.step(t, v, where="post", color=colours[i % len(colours)], alpha=0.5,
                    linewidth=0.8, label=label if n == 0 else None)
    ax.set_xlabel("t")
    ax.set_ylabel("z(t)")
    ax.legend()
    out = figure_path(csv_path, "paths")
    fig.tight_layout()
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return [out]


def plot_monotone(report, csv_path) -> list:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    ks = [r[1] for r in report.rows]
    worst = [r[4] for r in report.rows]
    ax.semilogx(ks, worst, marker="o")
    ax.axhline(0.0, color="grey", linewidth=0.8)
    ax.set_xlabel("k")
    ax.set_ylabel("smallest signed difference")
    out = figure_path(csv_path, "monotone")
    fig.tight_layout()
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return [out]


PLOTTERS = {
    "converge": plot_convergence,
    "compare": plot_comparison,
    "simulate": plot_paths,
    "monotone": plot_monotone,
}
