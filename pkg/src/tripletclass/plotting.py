"""Matplotlib renderings of the CSV artifacts. Figures are written to files, never shown."""

import math

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

RC = {
    "font.size": 10,
    "axes.labelsize": 10,
    "axes.titlesize": 11,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "savefig.dpi": 150,
}


def figsize(scale=1.0, ratio=None):
    width = 6.0 * scale
    ratio = ratio or (math.sqrt(5) - 1.0) / 2.0
    return (width, width * ratio)


def newfig(scale=1.0, ratio=None):
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=figsize(scale, ratio))
    return fig, ax


def savefig(fig, path):
    with plt.rc_context(RC):
        fig.savefig(path, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_loss_curves(curves, path, key="val_loss"):
    """One line per run of ``key`` against epoch; ``curves`` maps run name to history."""
    fig, ax = newfig()
    for name, history in curves.items():
        ax.plot([r.epoch for r in history], [getattr(r, key) for r in history], marker="o", ms=3, label=name)
    ax.set_xlabel("epoch")
    ax.set_ylabel(key.replace("_", " "))
    ax.grid(alpha=0.3)
    ax.legend()
    return savefig(fig, path)


def plot_embedding_scatter(coords, labels, path, class_names=None, title=None):
    fig, ax = newfig(ratio=1.0)
    coords = np.asarray(coords)
    labels = np.asarray(labels)
    for c in np.unique(labels):
        mask = labels == c
        name = class_names[c] if class_names and c < len(class_names) else str(c)
        ax.scatter(coords[mask, 0], coords[mask, 1], s=10, alpha=0.7, label=name)
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    if title:
        ax.set_title(title)
    ax.legend(markerscale=2)
    return savefig(fig, path)


def plot_confusion(cm, path, title=None):
    counts = np.asarray(cm.counts)
    fig, ax = newfig(scale=0.8, ratio=1.0)
    im = ax.imshow(counts, cmap="Blues")
    for (i, j), v in np.ndenumerate(counts):
        color = "white" if v > counts.max() / 2 else "black"
        ax.text(j, i, str(v), ha="center", va="center", color=color)
    ticks = range(len(cm.class_names))
    ax.set_xticks(ticks, cm.class_names, rotation=45, ha="right")
    ax.set_yticks(ticks, cm.class_names)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    if title:
        ax.set_title(title)
    fig.colorbar(im, ax=ax, fraction=0.046)
    return savefig(fig, path)
