"""Figure rendering for the report paths.

Saves static matplotlib figures next to the delimited outputs: the log-log
metric trajectory with its fitted slope, and sample clouds against the
reference data.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .metrics import TrajectoryFit


def save_trajectory_figure(path: str, images, metric,
                           fit: TrajectoryFit | None = None,
                           label: str = "metric"):
    images = np.asarray(images, dtype=np.float64)
    metric = np.asarray(metric, dtype=np.float64)
    keep = (images > 0) & (metric > 0)
    fig, ax = plt.subplots(figsize=(6, 4.5))
    ax.loglog(images[keep], metric[keep], "o-", ms=4, lw=1.2, label=label)
    if fit is not None and np.any(keep):
        x = images[keep][:fit.n_points]
        anchor = metric[keep][0]
        ax.loglog(x, anchor * (x / x[0]) ** fit.slope, "--", lw=1,
                  label=f"slope {fit.slope:.2f} (R$^2$={fit.r_squared:.2f})")
    ax.set_xlabel("generator images processed")
    ax.set_ylabel(label)
    ax.grid(True, which="both", ls=":", alpha=0.5)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_samples_figure(path: str, samples, reference=None,
                        title: str = "one-step samples"):
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    fig, ax = plt.subplots(figsize=(5.5, 5))
    if samples.shape[1] >= 2:
        if reference is not None:
            ref = np.atleast_2d(np.asarray(reference))
            ax.scatter(ref[:, 0], ref[:, 1], s=3, alpha=0.25, label="data",
                       color="tab:gray")
        ax.scatter(samples[:, 0], samples[:, 1], s=3, alpha=0.35,
                   label="generator", color="tab:blue")
        ax.set_aspect("equal")
        ax.legend(markerscale=4)
    else:
        if reference is not None:
            ax.hist(np.asarray(reference).ravel(), bins=80, density=True,
                    alpha=0.4, label="data", color="tab:gray")
        ax.hist(samples.ravel(), bins=80, density=True, alpha=0.5,
                label="generator", color="tab:blue")
        ax.legend()
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
