"""Figure rendering for CLI reports.

Every function writes one PNG and returns nothing. The Agg backend, a
fixed size and dpi, and a cleared Software tag keep the bytes identical
when the same run is repeated, which the reproducibility contract covers.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = [
    "spaghetti",
    "mean_variance",
    "pc_display",
    "null_histogram",
    "labeled_means",
    "sse_curve",
    "mean_deriv_var",
    "model_overview",
]

_DPI = 120
_SIZE = (8.0, 5.0)


def _save(fig, path):
    fig.savefig(path, dpi=_DPI, metadata={"Software": None})
    plt.close(fig)


def spaghetti(path, grid, curves, xlabel="age", ylabel="value"):
    """One thin line per subject on a shared grid."""
    fig, ax = plt.subplots(figsize=_SIZE)
    for values in curves:
        ax.plot(grid, values, color="tab:blue", alpha=0.35, linewidth=0.9)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(f"{len(curves)} fitted curves")
    _save(fig, path)


def mean_variance(path, grid, mean, variance, xlabel="age"):
    fig, axes = plt.subplots(1, 2, figsize=(10.0, 4.0))
    axes[0].plot(grid, mean, color="tab:blue")
    axes[0].set_title("mean curve")
    axes[1].plot(grid, variance, color="tab:orange")
    axes[1].set_title("variance curve")
    for ax in axes:
        ax.set_xlabel(xlabel)
    _save(fig, path)


def pc_display(path, grid, mean, bands, xlabel="age"):
    """Mean with per-component perturbation bands (mean +/- c sqrt(lam) psi)."""
    k = max(len(bands), 1)
    fig, axes = plt.subplots(1, k, figsize=(5.0 * k, 4.0), squeeze=False)
    for ax, (label, lo, hi) in zip(axes[0], bands):
        ax.plot(grid, mean, color="black", linewidth=1.2)
        ax.plot(grid, hi, color="tab:red", linestyle="--", linewidth=1.0)
        ax.plot(grid, lo, color="tab:blue", linestyle="--", linewidth=1.0)
        ax.set_title(label)
        ax.set_xlabel(xlabel)
    _save(fig, path)


def null_histogram(path, edges, counts, observed):
    fig, ax = plt.subplots(figsize=_SIZE)
    widths = np.diff(edges)
    ax.bar(edges[:-1], counts, width=widths, align="edge",
           color="tab:gray", edgecolor="white")
    ax.axvline(observed, color="tab:red", linewidth=1.5, label="observed T")
    ax.set_xlabel("T under relabeling")
    ax.set_ylabel("count")
    ax.legend()
    _save(fig, path)


def labeled_means(path, grid, means, xlabel="age", ylabel="value"):
    """One labeled mean curve per group or cluster."""
    fig, ax = plt.subplots(figsize=_SIZE)
    for label, values in means.items():
        ax.plot(grid, values, linewidth=1.6, label=str(label))
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.legend()
    _save(fig, path)


def sse_curve(path, ks, actual, null_mean, null_min):
    fig, ax = plt.subplots(figsize=_SIZE)
    ax.plot(ks, actual, marker="o", color="tab:blue", label="data")
    ax.plot(ks, null_mean, marker="s", color="tab:gray", label="null mean")
    ax.plot(ks, null_min, marker="^", color="tab:red", label="null min")
    ax.set_xlabel("k")
    ax.set_ylabel("within-cluster SSE")
    ax.set_xticks(list(ks))
    ax.legend()
    _save(fig, path)


def mean_deriv_var(path, grid, mean, deriv, variance, xlabel="age"):
    fig, axes = plt.subplots(1, 3, figsize=(13.0, 4.0))
    for ax, (vals, title) in zip(axes, [(mean, "mean"), (deriv, "first derivative"),
                                        (variance, "variance")]):
        ax.plot(grid, vals, color="tab:blue")
        if title == "first derivative":
            ax.axhline(0.0, color="gray", linewidth=0.6)
        ax.set_title(title)
        ax.set_xlabel(xlabel)
    _save(fig, path)


def model_overview(path, grid, mean, eigenfunctions, xlabel="age"):
    fig, axes = plt.subplots(1, 2, figsize=(10.0, 4.0))
    axes[0].plot(grid, mean, color="tab:blue")
    axes[0].set_title("mean curve")
    for k, psi in enumerate(eigenfunctions, start=1):
        axes[1].plot(grid, psi, linewidth=1.4, label=f"component {k}")
    axes[1].set_title("eigenfunctions")
    axes[1].legend()
    for ax in axes:
        ax.set_xlabel(xlabel)
    _save(fig, path)
