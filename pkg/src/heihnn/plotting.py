"""Figures written next to the CSV outputs of the CLI."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

RC = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "figure.dpi": 120,
}


def _figsize(scale=1.0):
    golden = (np.sqrt(5.0) - 1.0) / 2.0
    w = 5.0 * scale
    return w, w * golden


def plot_history(records, path, title=None):
    """Loss and accuracy curves for one training run."""
    epochs = [r.epoch for r in records]
    with plt.rc_context(RC):
        fig, (ax_l, ax_a) = plt.subplots(1, 2, figsize=_figsize(1.6))
        ax_l.plot(epochs, [r.loss for r in records], color="k", lw=1)
        ax_l.set_xlabel("epoch")
        ax_l.set_ylabel("training loss")
        ax_a.plot(epochs, [r.train_acc for r in records], label="train", lw=1)
        ax_a.plot(epochs, [r.test_acc for r in records], label="test", lw=1)
        ax_a.set_xlabel("epoch")
        ax_a.set_ylabel("accuracy")
        ax_a.set_ylim(0, 1.02)
        ax_a.legend(frameon=False)
        if title:
            fig.suptitle(title)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)


def plot_sweep(result, path):
    """Heat map of test accuracy over the alpha x beta grid."""
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(4.2, 3.6))
        im = ax.imshow(100 * result.acc, origin="lower", cmap="viridis", aspect="auto")
        ax.set_xticks(range(len(result.betas)), [f"{b:.1f}" for b in result.betas])
        ax.set_yticks(range(len(result.alphas)), [f"{a:.1f}" for a in result.alphas])
        ax.set_xlabel(r"$\beta$")
        ax.set_ylabel(r"$\alpha$")
        for i in range(len(result.alphas)):
            for j in range(len(result.betas)):
                ax.text(j, i, f"{100 * result.acc[i, j]:.0f}", ha="center", va="center",
                        fontsize=6, color="w")
        fig.colorbar(im, ax=ax, label="accuracy (%)")
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)


def plot_ablation(rows, path):
    """Bar chart of mean accuracy with std error bars, one bar per outlier-removal mode."""
    labels = [r[0] for r in rows]
    means = np.array([r[1] for r in rows]) * 100
    stds = np.array([r[2] for r in rows]) * 100
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=_figsize())
        ax.bar(labels, means, yerr=stds, color="0.6", edgecolor="k", capsize=3)
        lo = max(0.0, means.min() - 3 * max(stds.max(), 1.0))
        ax.set_ylim(lo, min(100.0, means.max() + 3 * max(stds.max(), 1.0)))
        ax.set_ylabel("accuracy (%)")
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)


def plot_perturbation(clean, perturbed, path):
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=_figsize(0.7))
        ax.bar(["clean", "perturbed"], [100 * clean, 100 * perturbed], color=["0.4", "0.75"],
               edgecolor="k")
        ax.set_ylabel("test accuracy (%)")
        ax.set_ylim(0, 100)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
