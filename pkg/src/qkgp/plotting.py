"""PNG renderings of the CLI outputs.

Figures are drawn with the Agg backend and saved without the software and
date metadata, so a fixed input always gives the same bytes.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# golden-ratio figure at a single-column width
_WIDTH = 5.0
_SIZE = (_WIDTH, _WIDTH * (np.sqrt(5.0) - 1.0) / 2.0)
_META = {"Software": None}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=_META)
    plt.close(fig)
    return path


def plot_regression(path, x, mean, lower, upper, truth=None, train=None, title=None):
    fig, ax = plt.subplots(figsize=_SIZE)
    ax.fill_between(x, lower, upper, color="C0", alpha=0.25, lw=0, label="95% band")
    ax.plot(x, mean, color="C0", lw=1.5, label="posterior mean")
    if truth is not None:
        ax.plot(x, truth, "k--", lw=1.0, label="target")
    if train is not None:
        ax.plot(train[0], train[1], "o", ms=3, color="C3", label="training data")
    ax.set_xlabel("x")
    ax.set_ylabel("f(x)")
    if title:
        ax.set_title(title)
    ax.legend(fontsize=7, frameon=False)
    return _save(fig, path)


def plot_gram(path, values, title=None, log=False):
    vals = np.asarray(values, dtype=float)
    fig, ax = plt.subplots(figsize=(_WIDTH * 0.8, _WIDTH * 0.7))
    if log:
        vals = np.log10(np.abs(vals) + 1e-16)
    im = ax.imshow(vals, cmap="viridis", interpolation="nearest")
    fig.colorbar(im, ax=ax, label="log10 |K|" if log else "K")
    if title:
        ax.set_title(title)
    return _save(fig, path)


def plot_episode(path, positions, goal, title=None):
    fig, ax = plt.subplots(figsize=_SIZE)
    steps = np.arange(1, len(positions) + 1)
    ax.axhspan(goal[0], goal[1], color="0.85", lw=0)
    ax.axhline(goal[0], color="k", ls="--", lw=0.8)
    ax.plot(steps, positions, lw=1.2)
    ax.set_xlabel("step")
    ax.set_ylabel("position")
    if title:
        ax.set_title(title)
    return _save(fig, path)


def plot_r2_table(path, table: dict[str, list[float]], title=None):
    """One marker column per kernel label; table maps label -> per-set R^2."""
    fig, ax = plt.subplots(figsize=_SIZE)
    for k, (label, vals) in enumerate(table.items()):
        ax.plot(np.full(len(vals), k), vals, "o", ms=4, alpha=0.7)
        ax.plot([k - 0.2, k + 0.2], [np.mean(vals)] * 2, "k-", lw=1.5)
    ax.set_xticks(range(len(table)), list(table))
    ax.set_ylabel("test R^2")
    if title:
        ax.set_title(title)
    return _save(fig, path)
