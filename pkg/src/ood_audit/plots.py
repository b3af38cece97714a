"""Figure rendering for the CLI report paths.

Figures are written next to the delimited report data; the metric
modules themselves stay plot-free. PNGs are saved without a date chunk
so re-runs are byte-identical.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

_SAVE_KWARGS = {"dpi": 150, "metadata": {"Date": None}}


def save_kde_figure(report, path) -> None:
    """Two score densities with the calibrated threshold marker(s)."""
    fig, ax = plt.subplots(figsize=(7, 4.2))
    ax.plot(report.grid, report.id_density, label="ID scores", color="tab:blue")
    ax.fill_between(report.grid, report.id_density, alpha=0.25, color="tab:blue")
    ax.plot(report.grid, report.ood_density, label="OoD scores", color="tab:red")
    ax.fill_between(report.grid, report.ood_density, alpha=0.25, color="tab:red")
    ax.axvline(report.tau, color="black", linestyle="--", linewidth=1.2,
               label=f"tau = {report.tau:.4g}")
    if report.tau_without_outliers is not None:
        ax.axvline(report.tau_without_outliers, color="gray", linestyle=":",
                   linewidth=1.2,
                   label=f"tau w/o outliers = {report.tau_without_outliers:.4g}")
    ax.set_xlabel("OoD score (higher = more OoD-like)")
    ax.set_ylabel("density")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KWARGS)
    plt.close(fig)


def save_trend_figure(points, path) -> None:
    """Detection count and mean confidence across checkpoints."""
    xs = [p.checkpoint for p in points]
    counts = [p.count for p in points]
    confs = [p.mean_confidence for p in points]
    fig, ax1 = plt.subplots(figsize=(7, 4.2))
    ax1.plot(xs, counts, marker="o", color="tab:red", label="detections")
    ax1.set_xlabel("checkpoint")
    ax1.set_ylabel("detections above threshold", color="tab:red")
    ax1.tick_params(axis="y", labelcolor="tab:red")
    ax2 = ax1.twinx()
    ax2.plot(xs, confs, marker="s", color="tab:blue", label="mean confidence")
    ax2.set_ylabel("mean confidence", color="tab:blue")
    ax2.tick_params(axis="y", labelcolor="tab:blue")
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KWARGS)
    plt.close(fig)


def save_tau_shift_figure(points, path) -> None:
    """Threshold and FPR95 against the contamination rate."""
    rates = [p.contamination_rate for p in points]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.8))
    ax1.plot(rates, [p.tau for p in points], marker="o", color="tab:purple")
    ax1.set_xlabel("contamination rate")
    ax1.set_ylabel("calibrated tau")
    ax2.plot(rates, [p.fpr95 for p in points], marker="o", color="tab:orange")
    ax2.set_xlabel("contamination rate")
    ax2.set_ylabel("FPR95")
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KWARGS)
    plt.close(fig)
