"""Figure rendering for run outputs.

All figures are written straight to files with the Agg backend; nothing
here opens a window.  Functions take explicit paths and return them, so
callers can list what was produced in their manifest.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

import numpy as np  # noqa: E402

from .mesh import Mesh  # noqa: E402


def _save(fig, path):
    fig.savefig(path, dpi=130, bbox_inches="tight")
    plt.close(fig)
    return str(path)


def field_figure(mesh: Mesh, values: np.ndarray, path, title: str = "",
                 cmap: str = "viridis"):
    """Piecewise-linear nodal field on the triangulation."""
    fig, ax = plt.subplots(figsize=(4.8, 4.2))
    tpc = ax.tripcolor(mesh.nodes[:, 0], mesh.nodes[:, 1], mesh.triangles,
                       values, shading="gouraud", cmap=cmap)
    fig.colorbar(tpc, ax=ax, shrink=0.85)
    ax.set_aspect("equal")
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    if title:
        ax.set_title(title)
    return _save(fig, path)


def comparison_figure(mesh: Mesh, reconstructed: np.ndarray,
                      truth: np.ndarray, path):
    """Side-by-side reconstruction, truth, and difference."""
    fig, axes = plt.subplots(1, 3, figsize=(12.5, 3.8))
    lo = min(reconstructed.min(), truth.min())
    hi = max(reconstructed.max(), truth.max())
    for ax, vals, title in zip(axes[:2], (reconstructed, truth),
                               ("reconstruction", "truth")):
        tpc = ax.tripcolor(mesh.nodes[:, 0], mesh.nodes[:, 1], mesh.triangles,
                           vals, shading="gouraud", vmin=lo, vmax=hi)
        fig.colorbar(tpc, ax=ax, shrink=0.8)
        ax.set_title(title)
        ax.set_aspect("equal")
    diff = reconstructed - truth
    scale = max(abs(diff.min()), abs(diff.max())) or 1.0
    tpc = axes[2].tripcolor(mesh.nodes[:, 0], mesh.nodes[:, 1], mesh.triangles,
                            diff, shading="gouraud", cmap="RdBu_r",
                            vmin=-scale, vmax=scale)
    fig.colorbar(tpc, ax=axes[2], shrink=0.8)
    axes[2].set_title("difference")
    axes[2].set_aspect("equal")
    return _save(fig, path)


def history_figure(cycle_residuals, path, cycle_errors=None,
                   threshold: float | None = None):
    """Residual (and optional error) per cycle on a log scale."""
    fig, ax = plt.subplots(figsize=(5.6, 3.8))
    cycles = np.arange(1, len(cycle_residuals) + 1)
    ax.semilogy(cycles, cycle_residuals, marker=".", label="residual")
    if cycle_errors:
        ax.semilogy(np.arange(1, len(cycle_errors) + 1), cycle_errors,
                    marker=".", label="error vs truth")
    if threshold is not None and threshold > 0:
        ax.axhline(threshold, color="gray", linestyle="--", linewidth=1,
                   label="stopping threshold")
    ax.set_xlabel("cycle")
    ax.legend()
    ax.grid(True, which="both", alpha=0.3)
    return _save(fig, path)


def traces_figure(traces, path, labels=None):
    """Measured current densities along the contact, one line per input."""
    fig, ax = plt.subplots(figsize=(5.6, 3.8))
    for idx, trace in enumerate(traces):
        label = labels[idx] if labels else f"profile {idx}"
        ax.plot(trace.s, trace.values, label=label, linewidth=1.1)
    ax.set_xlabel("arclength along contact")
    ax.set_ylabel("current density")
    if len(traces) <= 10:
        ax.legend(fontsize=7)
    ax.grid(alpha=0.3)
    return _save(fig, path)


def lbic_figure(x, current, path, potential_true=None, potential_rec=None):
    """Current curve and, when available, the potential round trip."""
    two = potential_true is not None or potential_rec is not None
    fig, axes = plt.subplots(1, 2 if two else 1, figsize=(9.6 if two else 5.2, 3.6))
    axes = np.atleast_1d(axes)
    axes[0].plot(x, current, color="tab:blue")
    axes[0].set_xlabel("scan position")
    axes[0].set_ylabel("current")
    axes[0].grid(alpha=0.3)
    if two:
        if potential_true is not None:
            axes[1].plot(x, potential_true, label="true", color="tab:gray")
        if potential_rec is not None:
            axes[1].plot(x, potential_rec, "--", label="reconstructed",
                         color="tab:red")
        axes[1].set_xlabel("scan position")
        axes[1].set_ylabel("potential")
        axes[1].legend()
        axes[1].grid(alpha=0.3)
    return _save(fig, path)
