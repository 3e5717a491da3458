"""Matplotlib figures for run reports, written as deterministic SVG files."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

golden_mean = (np.sqrt(5) - 1.0) / 2.0
fig_width = 4.5
colors = ["#08589e", "#e34a33", "#31a354", "#756bb1", "#636363"]

params = {
    "axes.prop_cycle": matplotlib.cycler(color=colors),
    "axes.labelsize": 9,
    "font.size": 8,
    "font.family": "DejaVu Sans",
    "legend.fontsize": 7,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "figure.figsize": [fig_width, fig_width * golden_mean],
    "lines.linewidth": 1.2,
    "lines.markersize": 3,
    # fixed ids so identical data gives identical SVG bytes
    "svg.hashsalt": "zira-lab",
    "svg.fonttype": "none",
}

MODALITY_NAMES = {"V": "vision", "L": "language"}


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)
    return path


def _series(norm_curves, modality):
    rows = sorted((r for r in norm_curves if r["modality"] == modality), key=lambda r: (r["task_index"], r["epoch"]))
    epochs_per_task = 1 + max((r["epoch"] for r in rows), default=0)
    x = [r["task_index"] * epochs_per_task + r["epoch"] + 1 for r in rows]
    y = [max(r["mean_l1_norm"], 1e-12) for r in rows]
    return x, y, epochs_per_task


def norm_curve_figure(runs: dict[str, list[dict]], modality: str, path):
    """Mean |RDB output| on the probe batch over training, log-scaled vertical axis.

    `runs` maps a legend label to a RunRecord.norm_curves list.
    """
    with matplotlib.rc_context(params):
        fig, ax = plt.subplots()
        ept = 1
        for label, curves in runs.items():
            x, y, ept = _series(curves, modality)
            if x:
                ax.plot(x, y, "o-", label=label)
        ax.set_yscale("log")
        ax.set_xlabel(f"epoch (tasks of {ept} epochs)")
        ax.set_ylabel("mean L1 norm of RDB output")
        ax.set_title(f"{MODALITY_NAMES.get(modality, modality)} RDB")
        if len(runs) > 1:
            ax.legend()
        fig.tight_layout()
        return _save(fig, path)


def combined_curves_figure(norm_curves: list[dict], path):
    """Both modalities side by side for a single run."""
    with matplotlib.rc_context(params):
        fig, axes = plt.subplots(1, 2, figsize=(fig_width * 1.6, fig_width * golden_mean))
        for ax, m in zip(axes, ("V", "L")):
            x, y, _ = _series(norm_curves, m)
            if x:
                ax.plot(x, y, "o-")
            ax.set_yscale("log")
            ax.set_title(f"{MODALITY_NAMES[m]} RDB")
            ax.set_xlabel("epoch")
        axes[0].set_ylabel("mean L1 norm of RDB output")
        fig.tight_layout()
        return _save(fig, path)


def noise_curve_figure(points: list[tuple[float, float]], path):
    with matplotlib.rc_context(params):
        fig, ax = plt.subplots()
        s, a = zip(*points) if points else ((), ())
        ax.plot(s, a, "o-")
        ax.set_xlabel("noise std / feature RMS")
        ax.set_ylabel("general-domain accuracy")
        ax.set_ylim(0, 1.05)
        fig.tight_layout()
        return _save(fig, path)
