"""Figure rendering for sweep reports.

Figures are written to files next to the delimited output; nothing here is
interactive.  The backend is forced to Agg so rendering works headless.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .experiments import ErrorGrid

__all__ = ["render_error_grid", "render_power_curve"]


def render_error_grid(
    grid: ErrorGrid,
    contour: np.ndarray,
    level: float,
    path: str | Path,
    title: str = "total error over the (m, n) grid",
) -> Path:
    """Heatmap of the total error on log-log axes with the level contour overlaid."""
    fig, ax = plt.subplots(figsize=(6.4, 5.2))
    total = np.clip(grid.total, 0.0, 1.0)
    mesh_m = _log_edges(grid.m_values)
    mesh_n = _log_edges(grid.n_values)
    pcm = ax.pcolormesh(mesh_m, mesh_n, total.T, cmap="viridis_r", vmin=0.0, vmax=1.0)
    fig.colorbar(pcm, ax=ax, label="type I + type II error")
    if contour.size:
        ax.plot(contour[:, 0], contour[:, 1], "w.-", lw=1.8,
                label=f"error = {level:g}")
        ax.legend(loc="upper right")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("m (test sample size)")
    ax.set_ylabel("n (simulator sample size)")
    ax.set_title(title)
    path = Path(path)
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    return path


def _log_edges(values: np.ndarray) -> np.ndarray:
    logs = np.log(values.astype(np.float64))
    if logs.size == 1:
        pad = 0.35
        inner = np.array([logs[0] - pad, logs[0] + pad])
    else:
        mids = (logs[:-1] + logs[1:]) / 2.0
        inner = np.concatenate(
            [[logs[0] - (mids[0] - logs[0])], mids, [logs[-1] + (logs[-1] - mids[-1])]]
        )
    return np.exp(inner)


def render_power_curve(rows, path: str | Path, title: str = "power vs mixture rate") -> Path:
    """Rejection rate against the mixture rate, with binomial error bars."""
    rows = list(rows)
    nus = [r[0] for r in rows]
    rates = [r[1] for r in rows]
    ses = [r[2] for r in rows]
    fig, ax = plt.subplots(figsize=(6.0, 4.2))
    ax.errorbar(nus, rates, yerr=ses, fmt="o-", capsize=3)
    ax.set_xlabel("mixture rate")
    ax.set_ylabel("rejection rate")
    ax.set_ylim(-0.02, 1.02)
    ax.set_title(title)
    path = Path(path)
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    return path
