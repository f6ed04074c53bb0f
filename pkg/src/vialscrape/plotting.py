"""Learning-curve figures from metrics CSVs.

One curve per input CSV: x is the training episode, y the mean
eval_success_rate across the seeds present in the file, with a shaded
band at mean +/- standard error.  Output is a vector format decided by
the file suffix (svg by default).
"""

from __future__ import annotations

import os
from typing import List, Optional, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

import numpy as np  # noqa: E402

from .training import aggregate_success, read_metrics_csv  # noqa: E402

__all__ = ["emit_plot"]


def emit_plot(
    csv_paths: Sequence[str],
    out_path: str,
    labels: Optional[List[str]] = None,
) -> str:
    """Render learning curves for one or more runs into a vector file.

    Raises ValueError on an empty or malformed CSV before anything is
    written.  Single-row inputs produce a visible single marker.
    """
    if not csv_paths:
        raise ValueError("no metrics CSVs given")
    if labels is not None and len(labels) != len(csv_paths):
        raise ValueError("labels must match csv_paths one-to-one")

    curves = []
    for i, path in enumerate(csv_paths):
        rows = read_metrics_csv(path)
        if not rows:
            raise ValueError(f"metrics CSV {path} has no rows")
        label = labels[i] if labels else os.path.splitext(os.path.basename(path))[0]
        curves.append((label, aggregate_success(rows)))

    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for label, agg in curves:
        episodes = np.array([row["episode"] for row in agg])
        mean = np.array([row["mean_success_rate"] for row in agg])
        stderr = np.array([row["stderr_success_rate"] for row in agg])
        ax.plot(episodes, mean, marker="o", markersize=3, label=label)
        ax.fill_between(episodes, mean - stderr, mean + stderr, alpha=0.25)
    ax.set_xlabel("training episodes")
    ax.set_ylabel("eval success rate")
    ax.set_ylim(-0.05, 1.05)
    ax.legend(loc="lower right")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path)
    plt.close(fig)
    return out_path
