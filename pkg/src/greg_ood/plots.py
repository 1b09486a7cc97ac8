"""Figure rendering for run artifacts.

All figures go to SVG through the Agg backend with a fixed hash salt and no
Date metadata, so rerunning a command reproduces the file byte for byte in
the same environment.
"""

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "greg-ood"

import matplotlib.pyplot as plt
import numpy as np

from .model import MlpModel
from .scores import model_scores


def _save(fig, path):
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def plot_dataset(id_set, aux_x, ood_x, path):
    """Scatter preview: ID classes in color, auxiliary and OOD rings in gray
    tones. Two-dimensional data only."""
    fig, ax = plt.subplots(figsize=(6, 6))
    if aux_x is not None and len(aux_x):
        ax.scatter(aux_x[:, 0], aux_x[:, 1], s=4, c="#c8c8c8", label="auxiliary")
    if ood_x is not None and len(ood_x):
        ax.scatter(ood_x[:, 0], ood_x[:, 1], s=4, c="#707070", label="ood test")
    labels = id_set.y if id_set.y is not None else np.zeros(len(id_set), dtype=int)
    for c in np.unique(labels):
        pts = id_set.x[labels == c]
        ax.scatter(pts[:, 0], pts[:, 1], s=6, label=f"class {c}")
    ax.set_aspect("equal")
    ax.legend(loc="upper right", fontsize=8)
    ax.set_xlabel("x0")
    ax.set_ylabel("x1")
    fig.tight_layout()
    _save(fig, path)


def plot_trajectory(log, path):
    """Loss terms on a log scale, mean input-gradient norm, learning rate."""
    it = log.column("iter")
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.5))
    for name in ("ce", "l_s", "l_grad"):
        vals = log.column(name)
        if (vals > 0).any():
            axes[0].semilogy(it, np.maximum(vals, 1e-12), label=name)
        else:
            axes[0].plot(it, vals, label=name)
    axes[0].set_xlabel("iteration")
    axes[0].set_title("loss terms")
    axes[0].legend(fontsize=8)
    axes[1].plot(it, log.column("mean_grad_norm"))
    axes[1].set_xlabel("iteration")
    axes[1].set_title("mean input-gradient norm")
    axes[2].plot(it, log.column("lr"))
    axes[2].set_xlabel("iteration")
    axes[2].set_title("learning rate")
    fig.tight_layout()
    _save(fig, path)


def plot_histograms(report, path):
    """ID and OOD score histograms on the shared grid, threshold marked."""
    fig, ax = plt.subplots(figsize=(7, 4))
    widths = np.diff(report.hist_edges)
    ax.bar(report.hist_edges[:-1], report.hist_id / max(len(report.id_scores), 1),
           width=widths, align="edge", alpha=0.6, label="ID")
    ax.bar(report.hist_edges[:-1], report.hist_ood / max(len(report.ood_scores), 1),
           width=widths, align="edge", alpha=0.6, label="OOD")
    ax.axvline(report.gamma, color="k", linestyle="--", linewidth=1,
               label=f"gamma at tpr {report.tpr:g}")
    ax.set_xlabel(f"{report.kind} score")
    ax.set_ylabel("fraction per bin")
    ax.legend(fontsize=8)
    fig.tight_layout()
    _save(fig, path)


def plot_boundary(model: MlpModel, id_set, ood_x, gamma, path, kind="energy",
                  grid_n=200, pad=1.0):
    """Score field over the plane with the accept/reject contour at gamma."""
    if model.input_dim != 2:
        raise ValueError("boundary plots need 2-d inputs")
    stack = [id_set.x] + ([ood_x] if ood_x is not None and len(ood_x) else [])
    all_x = np.concatenate(stack)
    lo = all_x.min(axis=0) - pad
    hi = all_x.max(axis=0) + pad
    gx = np.linspace(lo[0], hi[0], grid_n)
    gy = np.linspace(lo[1], hi[1], grid_n)
    xx, yy = np.meshgrid(gx, gy)
    pts = np.stack([xx.ravel(), yy.ravel()], axis=1)
    field = model_scores(model, pts, kind).reshape(grid_n, grid_n)
    fig, ax = plt.subplots(figsize=(6.5, 5.5))
    im = ax.pcolormesh(gx, gy, field, shading="auto", cmap="viridis")
    fig.colorbar(im, ax=ax, label=f"{kind} score")
    ax.contour(gx, gy, field, levels=[gamma], colors="red", linewidths=1.5)
    if ood_x is not None and len(ood_x):
        ax.scatter(ood_x[:, 0], ood_x[:, 1], s=3, c="#e0e0e0")
    ax.scatter(id_set.x[:, 0], id_set.x[:, 1], s=3, c="white", edgecolors="none")
    ax.set_aspect("equal")
    ax.set_xlabel("x0")
    ax.set_ylabel("x1")
    ax.set_title(f"accept region boundary at gamma = {gamma:.3f}")
    fig.tight_layout()
    _save(fig, path)


def plot_radius_profile(grid, profiles: dict, path):
    """Certified fraction against radius, one curve per labeled profile."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, frac in profiles.items():
        ax.plot(grid, frac, marker=".", label=label)
    ax.set_xlabel("radius")
    ax.set_ylabel("fraction certified at radius >= r")
    ax.set_ylim(-0.02, 1.02)
    ax.legend(fontsize=8)
    fig.tight_layout()
    _save(fig, path)


def plot_ablation(rows, path):
    """FPR and AUROC against cluster count; the uniform-sampling row draws
    as horizontal reference lines."""
    fig, ax = plt.subplots(figsize=(6, 4))
    ks = [r["k"] for r in rows if r["sampler"] == "cluster"]
    fprs = [r["fpr95"] for r in rows if r["sampler"] == "cluster"]
    aurocs = [r["auroc"] for r in rows if r["sampler"] == "cluster"]
    ax.plot(ks, fprs, marker="o", label="fpr95 (cluster)")
    ax.plot(ks, aurocs, marker="s", label="auroc (cluster)")
    for r in rows:
        if r["sampler"] == "uniform":
            ax.axhline(r["fpr95"], color="C0", linestyle=":", linewidth=1,
                       label="fpr95 (uniform)")
            ax.axhline(r["auroc"], color="C1", linestyle=":", linewidth=1,
                       label="auroc (uniform)")
    ax.set_xlabel("clusters k")
    ax.legend(fontsize=8)
    fig.tight_layout()
    _save(fig, path)
