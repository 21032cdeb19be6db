"""PNG figures written next to the CSV outputs of the command-line tool.

Everything renders through the non-interactive Agg backend.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.dpi": 100,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "font.size": 9,
    "legend.fontsize": 8,
}


def png_path(csv_path) -> Path:
    return Path(csv_path).with_suffix(".png")


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    # fixed metadata keeps the files byte-stable across runs
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def trajectory(traj, path, ref=None) -> Path:
    """Knife force norm and knife height over time."""
    with plt.rc_context(STYLE):
        fig, (ax_f, ax_y) = plt.subplots(2, 1, figsize=(7, 5), sharex=True)
        ax_f.plot(traj.t, traj.fnorm, lw=0.8, label="simulated")
        if ref is not None:
            ax_f.plot(ref.t, ref.fnorm, lw=0.8, ls="--", label="reference")
            ax_f.legend()
        ax_f.set_ylabel("knife force [N]")
        ax_y.plot(traj.t, traj.knife_pos[:, 1] * 1e3, lw=0.8)
        ax_y.set_ylabel("knife height [mm]")
        ax_y.set_xlabel("time [s]")
        return _save(fig, path)


def history(rows: list[dict], path, keys=("loss",)) -> Path:
    """Per-iteration curves of the given history columns."""
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(len(keys), 1, figsize=(6, 2.2 * len(keys)), sharex=True, squeeze=False)
        it = [r["iteration"] for r in rows]
        for ax, key in zip(axes[:, 0], keys):
            ax.plot(it, [r[key] for r in rows], marker=".", lw=0.8)
            ax.set_ylabel(key)
        axes[-1, 0].set_xlabel("iteration")
        return _save(fig, path)


def samples(values: np.ndarray, labels, path, truth=None) -> Path:
    """Marginal histograms and, for two or more parameters, the first pairwise scatter."""
    values = np.atleast_2d(np.asarray(values, dtype=float))
    d = values.shape[1]
    with plt.rc_context(STYLE):
        ncols = d + (1 if d >= 2 else 0)
        fig, axes = plt.subplots(1, ncols, figsize=(3 * ncols, 2.8), squeeze=False)
        for k in range(d):
            ax = axes[0, k]
            ax.hist(values[:, k], bins=30, color="tab:blue", alpha=0.8)
            if truth is not None:
                ax.axvline(truth[k], color="tab:red")
            ax.set_xlabel(labels[k])
        if d >= 2:
            ax = axes[0, d]
            ax.plot(values[:, 0], values[:, 1], lw=0.5, marker=".", ms=2)
            if truth is not None:
                ax.plot([truth[0]], [truth[1]], "r*", ms=10)
            ax.set_xlabel(labels[0])
            ax.set_ylabel(labels[1])
        return _save(fig, path)


def knife_path(traj, path, half_length=None) -> Path:
    """Lateral knife position against height."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5, 4))
        ax.plot(traj.knife_pos[:, 2] * 1e2, traj.knife_pos[:, 1] * 1e2, lw=0.8)
        if half_length is not None:
            for s in (-1, 1):
                ax.axvline(s * half_length * 1e2, color="tab:red", ls="--", lw=0.8)
        ax.set_xlabel("z [cm]")
        ax.set_ylabel("y [cm]")
        return _save(fig, path)
