"""Report figures: layout overview and gap histogram rendered to files."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.collections import LineCollection, PolyCollection  # noqa: E402

from .flatten import Layout, LinkState, gap_value  # noqa: E402

DPI = 150


def render_layout_figure(layout: Layout, path, title: str = "flat layout") -> None:
    """Tiles colored by their worst gap, cut seams dashed in red."""
    polys = [layout.coords[t] for t in range(layout.n_triangles)]
    worst = np.zeros(layout.n_triangles)
    for l in layout.linkages:
        if l.state is LinkState.CUT:
            continue
        g = gap_value(layout, l)
        worst[l.tri_a] = max(worst[l.tri_a], g)
        worst[l.tri_b] = max(worst[l.tri_b], g)

    fig, ax = plt.subplots(figsize=(7, 7))
    coll = PolyCollection(polys, array=worst, cmap="viridis",
                          edgecolor="#37474f", linewidths=0.4)
    ax.add_collection(coll)
    cuts = []
    c = layout.coords.reshape(-1, 2)
    for l in layout.linkages:
        if l.state is LinkState.CUT:
            pa = 0.5 * (c[l.slot_i] + c[l.slot_j])
            pb = 0.5 * (c[l.slot_k] + c[l.slot_m])
            cuts.append([pa, pb])
    if cuts:
        ax.add_collection(LineCollection(cuts, colors="#c62828",
                                         linestyles="dashed", linewidths=1.2))
    fig.colorbar(coll, ax=ax, label="worst linkage gap (mm)", shrink=0.8)
    ax.autoscale()
    ax.set_aspect("equal")
    ax.set_xlabel("x (mm)")
    ax.set_ylabel("y (mm)")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=DPI)
    plt.close(fig)


def render_gap_histogram(layout: Layout, target_gap: float, path) -> None:
    """Distribution of retained gaps against the target value."""
    gaps = [gap_value(layout, l) for l in layout.linkages
            if l.state is LinkState.RETAINED]
    fig, ax = plt.subplots(figsize=(6, 4))
    if gaps:
        ax.hist(gaps, bins=20, color="#1976d2", edgecolor="white")
    ax.axvline(target_gap, color="#c62828", linestyle="--",
               label=f"target {target_gap:.3f} mm")
    ax.set_xlabel("linkage gap (mm)")
    ax.set_ylabel("count")
    ax.set_title("gap distribution")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=DPI)
    plt.close(fig)
