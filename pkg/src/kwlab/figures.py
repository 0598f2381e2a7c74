"""Figure rendering for the report path.

Every plot lands next to the delimited output as a PNG.  The Agg backend
keeps rendering headless; metadata is stripped so reruns produce stable
bytes with a fixed matplotlib.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_SAVEKW = {"dpi": 110, "metadata": {"Software": None}}


def _finish(fig, path):
    fig.tight_layout()
    fig.savefig(path, **_SAVEKW)
    plt.close(fig)
    return path


def trajectory_figure(path, times, samples, length):
    """Space-time contour of the solution samples (rows are snapshots)."""
    fig, ax = plt.subplots(figsize=(6.0, 3.6))
    x = np.linspace(0.0, length, samples.shape[1], endpoint=False)
    mesh = ax.pcolormesh(x, times, samples, shading="nearest", cmap="RdBu_r")
    fig.colorbar(mesh, ax=ax, label="u")
    ax.set_xlabel("x")
    ax.set_ylabel("t")
    return _finish(fig, path)


def conserved_figure(path, times, l2_values):
    fig, ax = plt.subplots(figsize=(5.2, 3.2))
    rel = np.asarray(l2_values) / l2_values[0] - 1.0
    ax.plot(times, rel, lw=1.2)
    ax.set_xlabel("t")
    ax.set_ylabel("relative L2 drift")
    ax.ticklabel_format(axis="y", style="sci", scilimits=(-2, 2))
    return _finish(fig, path)


def energy_figure(path, times, series_by_name):
    fig, axes = plt.subplots(1, 2, figsize=(8.4, 3.2))
    for name, series in series_by_name.items():
        axes[0].plot(times, series, lw=1.2, label=name)
        axes[1].semilogy(
            times, np.abs(np.asarray(series) - series[0]) + 1e-300, lw=1.2, label=name
        )
    axes[0].set_xlabel("t")
    axes[0].set_ylabel("energy")
    axes[0].legend(fontsize=8)
    axes[1].set_xlabel("t")
    axes[1].set_ylabel("|drift|")
    axes[1].legend(fontsize=8)
    return _finish(fig, path)


def drift_scaling_figure(path, n_values, drift2, drift4, slope2, slope4):
    fig, ax = plt.subplots(figsize=(5.2, 3.6))
    ax.loglog(n_values, drift2, "o-", label=f"E2 drift (slope {slope2:+.2f})")
    ax.loglog(n_values, drift4, "s-", label=f"E4 drift (slope {slope4:+.2f})")
    ax.set_xlabel("threshold frequency N")
    ax.set_ylabel("max energy drift")
    ax.legend(fontsize=8)
    return _finish(fig, path)


def ratio_figure(path, reports):
    """Per-scale maxima for one or more RatioReports."""
    fig, ax = plt.subplots(figsize=(5.6, 3.6))
    for rep in reports:
        ax.loglog(rep.scales, rep.max_ratios, "o-", label=rep.label, lw=1.1, ms=4)
    ax.set_xlabel("dyadic scale")
    ax.set_ylabel("max sampled ratio")
    ax.legend(fontsize=7)
    return _finish(fig, path)


def residual_figure(path, series_by_order):
    fig, ax = plt.subplots(figsize=(5.2, 3.4))
    for order, series in series_by_order.items():
        ax.semilogy(series.times, series.residuals + 1e-300, "o-", ms=3, lw=1.0,
                    label=f"order {order}")
    ax.set_xlabel("t")
    ax.set_ylabel("relative residual")
    ax.legend(fontsize=8)
    return _finish(fig, path)
