"""
Figures written next to the delimited outputs.

Everything is rendered off-screen to SVG with a fixed hash salt and no
date metadata, so identical inputs give byte-identical files.
"""

from __future__ import annotations

from pathlib import Path
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.colors import Normalize  # noqa: E402

from .mesh import Mesh  # noqa: E402

__all__ = ["render_field", "plot_trace", "plot_burden", "DEFAULT_CMAP"]

DEFAULT_CMAP = "viridis"
_RC = {
    "svg.hashsalt": "gaeit",
    "svg.fonttype": "path",
    "font.size": 9,
    "axes.linewidth": 0.8,
}


def _save(fig, path) -> None:
    fig.savefig(Path(path), format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)


def color_range(field: np.ndarray, vrange: Optional[tuple[float, float]] = None) -> tuple[float, float]:
    if vrange is not None:
        return float(vrange[0]), float(vrange[1])
    return float(np.min(field)), float(np.max(field))


def render_field(
    mesh: Mesh,
    field: Sequence[float],
    path,
    vrange: Optional[tuple[float, float]] = None,
    title: Optional[str] = None,
    cmap: str = DEFAULT_CMAP,
) -> Path:
    """Fill each triangle with its value on a linear color map.

    The map spans ``[min, max]`` of the field unless ``vrange`` is given.
    Electrodes are marked and numbered.  A constant field is drawn in the
    middle color with both color-bar ends labelled with its value.
    """
    field = np.asarray(field, dtype=float)
    vmin, vmax = color_range(field, vrange)
    flat = vmax <= vmin
    norm = Normalize(vmin - 0.5, vmin + 0.5) if flat else Normalize(vmin, vmax)
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(4.2, 3.6))
        tpc = ax.tripcolor(
            mesh.nodes[:, 0], mesh.nodes[:, 1], mesh.elements,
            facecolors=field, cmap=cmap, norm=norm, edgecolors="none",
        )
        el = mesh.nodes[mesh.electrodes]
        ax.plot(el[:, 0], el[:, 1], "s", color="k", ms=3.5, mfc="w", mew=0.8)
        for k, (x, y) in enumerate(el):
            ax.annotate(str(k), (1.12 * x, 1.12 * y), ha="center", va="center", fontsize=6)
        ax.set_aspect("equal")
        ax.set_xlim(-1.25, 1.25)
        ax.set_ylim(-1.25, 1.25)
        ax.set_axis_off()
        cb = fig.colorbar(tpc, ax=ax, shrink=0.85)
        if flat:
            cb.set_ticks([vmin - 0.5, vmin + 0.5])
            cb.set_ticklabels([f"{vmin:.4g}", f"{vmax:.4g}"])
        cb.set_label("resistivity")
        if title:
            ax.set_title(title)
        _save(fig, path)
    return Path(path)


def plot_trace(rows, path, title: Optional[str] = None) -> Path:
    """Best (and mean, where it differs) objective per generation/iteration."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(4.8, 3.2))
        stages = []
        for r in rows:
            if not stages or stages[-1][0] != r.stage:
                stages.append((r.stage, []))
            stages[-1][1].append(r)
        x0 = 0
        for stage, block in stages:
            x = np.arange(x0, x0 + len(block))
            best = [r.best_fitness for r in block]
            mean = [r.mean_fitness for r in block]
            ax.semilogy(x, best, "-", lw=1.2, label=f"{stage or 'run'} best")
            if not np.allclose(best, mean):
                ax.semilogy(x, mean, ":", lw=0.9, label=f"{stage or 'run'} mean")
            x0 += len(block)
        ax.set_xlabel("row (iteration / generation)")
        ax.set_ylabel("objective")
        ax.legend(frameon=False, fontsize=7)
        if title:
            ax.set_title(title)
        fig.tight_layout()
        _save(fig, path)
    return Path(path)


def plot_burden(names: Sequence[str], forward: Sequence[int], jacobians: Sequence[int], path) -> Path:
    """Forward-solve and Jacobian counts per run, log scale."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(4.8, 3.0))
        x = np.arange(len(names))
        ax.bar(x - 0.2, np.maximum(forward, 0.8), 0.4, label="forward solves")
        ax.bar(x + 0.2, np.maximum(jacobians, 0.8), 0.4, label="Jacobians")
        ax.set_yscale("log")
        ax.set_xticks(x)
        ax.set_xticklabels(names)
        ax.set_ylabel("count")
        ax.legend(frameon=False, fontsize=7)
        fig.tight_layout()
        _save(fig, path)
    return Path(path)
