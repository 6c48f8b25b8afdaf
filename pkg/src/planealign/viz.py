"""Figure rendering for the report paths (matplotlib, file output only)."""

from __future__ import annotations

import numpy as np

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
from matplotlib.collections import LineCollection

from .densmap import DensityMap, Floorplan
from .geom import Sim2, sim2_apply


def save_density_figure(dm: DensityMap, path) -> None:
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.imshow(dm.grid, cmap="magma", origin="upper", interpolation="nearest")
    ax.set_title(f"density map (gamma={dm.gamma})")
    ax.set_axis_off()
    fig.savefig(path, bbox_inches="tight", dpi=130)
    plt.close(fig)


def save_overlay(
    floorplan: Floorplan,
    dm: DensityMap,
    m: Sim2,
    correspondences=None,
    cameras_fp=None,
    path="overlay.svg",
    contour_level: float = 0.15,
) -> None:
    """Floorplan with the transformed density contour, correspondence
    segments (from transformed query to predicted match), and camera glyphs."""
    fig, ax = plt.subplots(figsize=(6, 6))
    ax.imshow(floorplan.gray(), cmap="gray", origin="upper", vmin=0.0, vmax=1.0)

    h, w = dm.grid.shape
    yy, xx = np.mgrid[0:h, 0:w] + 0.5
    warped = sim2_apply(m, np.stack([xx.ravel(), yy.ravel()], axis=1))
    gx = warped[:, 0].reshape(h, w)
    gy = warped[:, 1].reshape(h, w)
    if dm.grid.max() > contour_level:
        ax.contour(gx, gy, dm.grid, levels=[contour_level], colors="tab:orange", linewidths=0.8)

    if correspondences is not None and len(correspondences):
        cs = correspondences
        src = sim2_apply(m, cs.pd)
        segs = np.stack([src, cs.pf], axis=1)
        inl = cs.inlier if cs.inlier is not None else np.zeros(len(cs), dtype=bool)
        rel = cs.reliable
        if np.any(rel & ~inl):
            ax.add_collection(
                LineCollection(segs[rel & ~inl], colors="tab:red", linewidths=0.4, alpha=0.5)
            )
        if np.any(inl):
            ax.add_collection(
                LineCollection(segs[inl], colors="tab:green", linewidths=0.5, alpha=0.7)
            )

    if cameras_fp:
        for cam in cameras_fp:
            x, y = cam["fp_pos"]
            yaw = cam["fp_yaw"]
            ax.plot(x, y, marker="^", color="tab:blue", markersize=6)
            ax.annotate(
                "",
                xy=(x + 12 * np.cos(yaw), y + 12 * np.sin(yaw)),
                xytext=(x, y),
                arrowprops=dict(arrowstyle="->", color="tab:blue", lw=1.0),
            )

    ax.set_xlim(0, floorplan.shape[1])
    ax.set_ylim(floorplan.shape[0], 0)
    ax.set_axis_off()
    fig.savefig(path, bbox_inches="tight", dpi=130)
    plt.close(fig)


def save_recall_chart(report: dict, path) -> None:
    """Bar chart of the angular/positional recall tables."""
    fig, axes = plt.subplots(1, 2, figsize=(8, 3.2))
    ang = report["angular"]
    pos = report["positional"]
    axes[0].bar([f"{int(t)}°" for t in ang], list(ang.values()), color="tab:blue")
    axes[0].set_title("angular recall")
    axes[0].set_ylim(0, 1.0)
    axes[1].bar([f"{int(100 * t)}%" for t in pos], list(pos.values()), color="tab:orange")
    axes[1].set_title("positional recall")
    axes[1].set_ylim(0, 1.0)
    for ax in axes:
        ax.grid(axis="y", alpha=0.3)
    fig.suptitle(f"joint @ (30°, 20%) = {report['joint_30deg_20pct']:.3f}")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def save_sweep_heatmap(rows: list[dict], path) -> None:
    """One success-rate heatmap (rho_conf x rho_xz) per gamma value."""
    gammas = sorted({r["gamma"] for r in rows})
    confs = sorted({r["rho_conf"] for r in rows})
    xzs = sorted({r["rho_xz"] for r in rows})
    fig, axes = plt.subplots(1, len(gammas), figsize=(3.2 * len(gammas), 3.4), squeeze=False)
    for gi, gamma in enumerate(gammas):
        grid = np.full((len(confs), len(xzs)), np.nan)
        for r in rows:
            if r["gamma"] == gamma:
                grid[confs.index(r["rho_conf"]), xzs.index(r["rho_xz"])] = r["success_rate"]
        ax = axes[0][gi]
        im = ax.imshow(grid, vmin=0.0, vmax=1.0, cmap="viridis", origin="upper")
        ax.set_xticks(range(len(xzs)), [str(v) for v in xzs])
        ax.set_yticks(range(len(confs)), [str(v) for v in confs])
        ax.set_xlabel("rho_xz (%)")
        if gi == 0:
            ax.set_ylabel("rho_conf (%)")
        ax.set_title(f"gamma={gamma}")
        for (i, j), val in np.ndenumerate(grid):
            if np.isfinite(val):
                ax.text(j, i, f"{val:.2f}", ha="center", va="center", color="w", fontsize=7)
    fig.colorbar(im, ax=axes[0][-1], fraction=0.046)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
