"""Figure rendering for the report paths (band, trace, bench scaling)."""

from __future__ import annotations

import numpy as np
import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def plot_forecast_band(path, observed, forecast, actual=None, title: str = "") -> None:
    """Observed history plus the predictive mean with a +/- 3 sigma band."""
    observed = np.asarray(observed, dtype=np.float64)
    t_obs = np.arange(observed.shape[0])
    t_fc = observed.shape[0] + np.arange(forecast.means.shape[0])
    fig, ax = plt.subplots(figsize=(9, 3.2))
    ax.plot(t_obs[-min(len(t_obs), 500):], observed[-500:], color="C0", lw=0.9, label="observed")
    ax.plot(t_fc, forecast.means, color="C3", lw=1.2, label="predictive mean")
    ax.fill_between(
        t_fc,
        forecast.means - 3.0 * forecast.stds,
        forecast.means + 3.0 * forecast.stds,
        color="C3",
        alpha=0.25,
        lw=0,
        label="±3σ",
    )
    if actual is not None:
        ax.plot(t_fc, np.asarray(actual), color="C0", lw=0.9, ls="--", label="actual")
    ax.axvline(t_obs[-1] + 0.5, color="gray", lw=0.6, ls=":")
    ax.set_xlabel("t")
    ax.legend(loc="upper left", fontsize=8, ncol=4)
    if title:
        ax.set_title(title, fontsize=10)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_trace(path, trace) -> None:
    """Training loss trace (step, loss)."""
    trace = np.asarray(trace)
    fig, ax = plt.subplots(figsize=(7, 3))
    ax.plot(trace[:, 0], trace[:, 1], lw=0.8)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_title("training loss", fontsize=10)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_bench(path, rows) -> None:
    """Log-log feature-pass wall time and peak memory vs sequence length."""
    rows = np.asarray(rows, dtype=np.float64)
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.2))
    axes[0].loglog(rows[:, 0], rows[:, 1], "o-")
    axes[0].set_xlabel("sequence length")
    axes[0].set_ylabel("seconds")
    axes[0].set_title("feature pass time", fontsize=10)
    axes[1].loglog(rows[:, 0], rows[:, 2] / 2**20, "s-", color="C1")
    axes[1].set_xlabel("sequence length")
    axes[1].set_ylabel("peak MiB")
    axes[1].set_title("feature pass memory", fontsize=10)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
