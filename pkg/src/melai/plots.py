"""Metric curves across replicates and organ histograms of successful robots."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

SUCCESS = 0.95

# figure name -> generations.csv column
FIGURES = {
    "best_fitness": "best_fitness",
    "initial_tp": "best_initial_tp",
    "mean_initial_tp": "mean_initial_tp",
    "evaluations": "evaluations_this_gen",
    "learning_delta": "mean_learning_delta",
    "archive_count": "archive_count",
    "archive_mean_f": "archive_mean_f",
    "compatibility": "mean_compatibility",
}
ORGAN_COLUMNS = ["num_sensors", "num_wheels", "num_joints", "num_casters"]


def read_csv(path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        return {}
    out = {}
    for key in rows[0]:
        vals = [r[key] for r in rows]
        try:
            out[key] = np.array([float(v) if v != "" else np.nan for v in vals])
        except ValueError:
            out[key] = np.array(vals, dtype=object)
    return out


def find_runs(path) -> list[Path]:
    """Run directories at or below ``path`` (those holding a generations.csv)."""
    path = Path(path)
    if (path / "generations.csv").exists():
        return [path]
    return sorted(p.parent for p in path.rglob("generations.csv"))


def stack(series: list[np.ndarray]) -> np.ndarray:
    """Runs x generations, NaN-padded to the longest run."""
    n = max((len(s) for s in series), default=0)
    out = np.full((len(series), n), np.nan)
    for i, s in enumerate(series):
        out[i, : len(s)] = s
    return out


def band(values: np.ndarray):
    """Per-column median and interquartile range, ignoring NaN."""
    values = np.atleast_2d(values)
    cols = [c[~np.isnan(c)] for c in values.T]
    med = np.array([np.median(c) if c.size else np.nan for c in cols])
    q1 = np.array([np.percentile(c, 25) if c.size else np.nan for c in cols])
    q3 = np.array([np.percentile(c, 75) if c.size else np.nan for c in cols])
    return med, q1, q3


def _pyplot():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    plt.rcParams["svg.hashsalt"] = "melai"
    return plt


def plot_metric(groups: dict[str, list[Path]], column: str, path, title: str | None = None) -> None:
    """Median curve per group, with an interquartile band when a group has several runs."""
    if not any(groups.values()):
        raise ValueError("no runs to plot")
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for label, runs in groups.items():
        data = stack([read_csv(r / "generations.csv")[column] for r in runs])
        if data.size == 0:
            continue
        med, q1, q3 = band(data)
        gens = np.arange(data.shape[1])
        line, = ax.plot(gens, med, label=label)
        if len(runs) > 1:
            ax.fill_between(gens, q1, q3, color=line.get_color(), alpha=0.25, lw=0)
    ax.set_xlabel("generation")
    ax.set_ylabel(column)
    ax.set_title(title or column)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def successful_organ_counts(runs: list[Path], threshold: float = SUCCESS) -> dict[str, np.ndarray]:
    """Organ counts of all evaluated robots reaching ``threshold`` task performance."""
    counts = {c: [] for c in ORGAN_COLUMNS}
    for r in runs:
        data = read_csv(r / "individuals.csv")
        if not data:
            continue
        ok = (data["f_star"] >= threshold) & ~np.isnan(data["num_wheels"])
        for c in ORGAN_COLUMNS:
            counts[c].extend(data[c][ok].astype(int).tolist())
    return {c: np.array(v, dtype=int) for c, v in counts.items()}


def plot_organs(groups: dict[str, list[Path]], path, threshold: float = SUCCESS) -> None:
    if not any(groups.values()):
        raise ValueError("no runs to plot")
    plt = _pyplot()
    fig, axes = plt.subplots(1, len(ORGAN_COLUMNS), figsize=(3 * len(ORGAN_COLUMNS), 3), sharey=True)
    width = 0.8 / max(len(groups), 1)
    for k, (label, runs) in enumerate(groups.items()):
        counts = successful_organ_counts(runs, threshold)
        for ax, col in zip(axes, ORGAN_COLUMNS):
            v = counts[col]
            hist = np.bincount(v, minlength=17)[:17] if v.size else np.zeros(17, int)
            ax.bar(np.arange(17) + k * width, hist, width=width, label=label)
            ax.set_title(col.replace("num_", ""))
    axes[0].set_ylabel(f"robots with F >= {threshold}")
    axes[0].legend()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def plot_figure(groups: dict[str, list[Path]], figure: str, path) -> None:
    if figure == "organs":
        plot_organs(groups, path)
    elif figure in FIGURES:
        plot_metric(groups, FIGURES[figure], path, figure)
    else:
        raise ValueError(f"unknown figure {figure!r}; known: {sorted(FIGURES) + ['organs']}")


def plot_run(run_dir) -> None:
    run_dir = Path(run_dir)
    groups = {run_dir.name: [run_dir]}
    for name in [*FIGURES, "organs"]:
        plot_figure(groups, name, run_dir / "plots" / f"{name}.svg")
