"""Report figures, rendered off-screen to image files.

matplotlib is imported lazily so the numerical core never depends on it.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def plot_gradient_profiles(profiles: dict, path, title: str = "") -> Path:
    """One panel per probe: finite differences vs analytic gradients along the samples.

    ``profiles`` maps a probe name to a dict of equal-length 1-D arrays, e.g.
    ``{"fd": ..., "ndft": ..., "nufft": ...}``.
    """
    plt = _pyplot()
    names = list(profiles)
    fig, axes = plt.subplots(len(names), 1, figsize=(7, 2.2 * len(names)), squeeze=False)
    for ax, name in zip(axes[:, 0], names):
        for label, vals in profiles[name].items():
            style = "k-" if label == "fd" else "--"
            ax.plot(np.asarray(vals), style, lw=1, label=label)
        ax.set_ylabel(name)
        ax.legend(loc="upper right", fontsize=7)
    axes[-1, 0].set_xlabel("sample index")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_trajectory(traj, path, reference=None) -> Path:
    """Sample locations per shot, optionally over a reference trajectory."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 5))
    if reference is not None:
        for s in reference.shots():
            ax.plot(s[:, 1], s[:, 0], color="0.75", lw=0.8)
    for s in traj.shots():
        ax.plot(s[:, 1], s[:, 0], lw=1)
    ax.set_xlim(-np.pi, np.pi)
    ax.set_ylim(-np.pi, np.pi)
    ax.set_aspect("equal")
    ax.set_xlabel(r"$\omega_2$ (rad/sample)")
    ax.set_ylabel(r"$\omega_1$ (rad/sample)")
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_history(history: dict, path, window: int = 50) -> Path:
    """Per-step training loss with its moving average."""
    from .trajopt import smoothed

    plt = _pyplot()
    loss = np.asarray(history["loss"])
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(loss, color="0.7", lw=0.8, label="step loss")
    if loss.size:
        ax.plot(smoothed(loss, window), "k-", lw=1.5, label=f"moving average ({window})")
    ax.set_xlabel("Adam step")
    ax.set_ylabel("loss")
    ax.legend()
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
