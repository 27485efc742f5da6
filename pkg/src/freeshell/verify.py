"""Quality metrics: distortion, gaps, shear, overlaps, surface distance.

Everything here is an independent check on the other modules' output:
the overlap test uses exact orientation predicates, the distance query
has a brute-force reference the accelerated path must match exactly, and
the folding oracle maps generated tiles back onto the shell to measure
contact accuracy.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._geom import closest_point_on_triangle, triangles_overlap
from .errors import IoError, ParseError
from .flatten import Layout, LinkState, gap_value, graph_connected
from .mesh import TargetMesh

GAP_HIST_BINS = 20


@dataclass
class LayoutReport:
    """Headline numbers for one flattened layout."""

    max_gap: float
    avg_gap: float
    gap_histogram: list
    max_edge_distortion: float
    max_shear_angle: float      # degrees from a right angle
    overlap_pairs: int
    cut_count: int
    retained_count: int
    connected: bool
    target_gap: float

    def to_mapping(self) -> dict:
        return {
            "connected": self.connected,
            "cut_count": self.cut_count,
            "retained_count": self.retained_count,
            "max_gap": self.max_gap,
            "avg_gap": self.avg_gap,
            "target_gap": self.target_gap,
            "max_edge_distortion": self.max_edge_distortion,
            "max_shear_angle_deg": self.max_shear_angle,
            "overlap_pairs": self.overlap_pairs,
            "gap_histogram": ",".join(str(c) for c in self.gap_histogram),
        }


def edge_distortion(layout: Layout) -> float:
    """Worst relative deviation of any triangle edge from its rest length."""
    worst = 0.0
    for tri in range(layout.n_triangles):
        for k in range(3):
            a = layout.coords[tri, k]
            b = layout.coords[tri, (k + 1) % 3]
            length = math.hypot(*(a - b))
            rest = float(layout.rest_edges[tri, k])
            worst = max(worst, abs(length - rest) / rest)
    return float(worst)


def shear_angle(layout: Layout, l) -> float:
    """Worst deviation of the linkage quad's interior angles from 90 deg."""
    c = layout.coords.reshape(-1, 2)
    quad = [c[l.slot_i], c[l.slot_j], c[l.slot_k], c[l.slot_m]]
    worst = 0.0
    for i in range(4):
        prev = quad[(i - 1) % 4] - quad[i]
        nxt = quad[(i + 1) % 4] - quad[i]
        np_, nn = np.linalg.norm(prev), np.linalg.norm(nxt)
        if np_ < 1e-12 or nn < 1e-12:
            continue  # welded / degenerate quad has no shear
        ang = math.degrees(math.acos(float(np.clip(np.dot(prev, nxt) / (np_ * nn),
                                                   -1.0, 1.0))))
        worst = max(worst, abs(ang - 90.0))
    return worst


def count_overlaps(layout: Layout) -> int:
    """Pairs of layout triangles intersecting with positive area.

    Touching (shared points or edges, e.g. welded gaps of zero) does not
    count. A bounding-box prefilter skips pairs that cannot overlap; it
    never changes the answer.
    """
    coords = layout.coords
    n = layout.n_triangles
    lo = coords.min(axis=1)
    hi = coords.max(axis=1)
    count = 0
    for i in range(n):
        for j in range(i + 1, n):
            if hi[i, 0] < lo[j, 0] or hi[j, 0] < lo[i, 0] or \
                    hi[i, 1] < lo[j, 1] or hi[j, 1] < lo[i, 1]:
                continue
            if triangles_overlap(coords[i], coords[j]):
                count += 1
    return count


def layout_metrics(layout: Layout, target_gap: float = math.nan) -> LayoutReport:
    """Compute the full quality report of a layout."""
    retained = [l for l in layout.linkages if l.state is LinkState.RETAINED]
    gaps = [gap_value(layout, l) for l in retained]
    cut_count = sum(1 for l in layout.linkages if l.state is LinkState.CUT)
    if gaps:
        hist_edges = np.linspace(0.0, max(max(gaps), 1e-12), GAP_HIST_BINS + 1)
        hist, _ = np.histogram(gaps, bins=hist_edges)
        hist = hist.tolist()
        max_g, avg_g = float(max(gaps)), float(np.mean(gaps))
    else:
        hist = [0] * GAP_HIST_BINS
        max_g = avg_g = 0.0
    shear = max((shear_angle(layout, l) for l in retained), default=0.0)
    return LayoutReport(
        max_gap=max_g,
        avg_gap=avg_g,
        gap_histogram=hist,
        max_edge_distortion=edge_distortion(layout),
        max_shear_angle=shear,
        overlap_pairs=count_overlaps(layout),
        cut_count=cut_count,
        retained_count=len(retained),
        connected=graph_connected(layout),
        target_gap=target_gap,
    )


# ---------------------------------------------------------------------------
# Point to mesh distance


@dataclass
class DistanceResult:
    avg: float
    max: float
    per_point: np.ndarray

    def to_mapping(self) -> dict:
        return {"count": len(self.per_point), "avg_mm": self.avg,
                "max_mm": self.max}


def point_to_mesh_distance(points, mesh: TargetMesh,
                           accelerate: bool = True) -> DistanceResult:
    """Exact distance from each point to the closest mesh triangle.

    The accelerated path prunes triangles whose bounding box is farther
    than the best distance so far; pruning is strictly conservative, so
    the result equals the brute force answer exactly.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(points) == 0:
        raise ValueError("empty point list")
    tris = mesh.vertices[mesh.triangles]
    lo = tris.min(axis=1)
    hi = tris.max(axis=1)
    out = np.empty(len(points))
    for pi, p in enumerate(points):
        best = math.inf
        if accelerate:
            d_lo = np.maximum(lo - p, 0.0)
            d_hi = np.maximum(p - hi, 0.0)
            box_d2 = np.einsum("ij,ij->i", d_lo, d_lo) + \
                np.einsum("ij,ij->i", d_hi, d_hi)
            order = np.argsort(box_d2, kind="stable")
            for ti in order:
                if box_d2[ti] > best:
                    break
                q = closest_point_on_triangle(p, *tris[ti])
                d2 = float(np.dot(p - q, p - q))
                if d2 < best:
                    best = d2
        else:
            for ti in range(len(tris)):
                q = closest_point_on_triangle(p, *tris[ti])
                d2 = float(np.dot(p - q, p - q))
                if d2 < best:
                    best = d2
        out[pi] = math.sqrt(best)
    return DistanceResult(float(out.mean()), float(out.max()), out)


def synthetic_scan(mesh: TargetMesh, n: int, sigma: float = 0.0,
                   seed: int = 0) -> np.ndarray:
    """Sample points on the shell surface, area-weighted, optional jitter.

    Stands in for a 3D scan of the deployed plate: the tile mid-planes
    reproduce the shell triangles exactly, so sampling the mesh equals
    sampling the folded plate mid-surface.
    """
    rng = np.random.default_rng(seed)
    tris = mesh.vertices[mesh.triangles]
    areas = 0.5 * np.linalg.norm(
        np.cross(tris[:, 1] - tris[:, 0], tris[:, 2] - tris[:, 0]), axis=1)
    probs = areas / areas.sum()
    idx = rng.choice(len(tris), size=n, p=probs)
    r1 = np.sqrt(rng.uniform(size=n))
    r2 = rng.uniform(size=n)
    a, b, c = tris[idx, 0], tris[idx, 1], tris[idx, 2]
    pts = (1 - r1)[:, None] * a + (r1 * (1 - r2))[:, None] * b + (r1 * r2)[:, None] * c
    if sigma > 0:
        pts = pts + rng.normal(scale=sigma, size=pts.shape)
    return pts


def load_xyz(path) -> np.ndarray:
    """Read a point cloud as whitespace-separated XYZ text."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise IoError(str(exc)) from exc
    pts = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) < 3:
            raise ParseError(f"{Path(path).name}:{lineno}: need 3 coordinates")
        try:
            pts.append([float(parts[0]), float(parts[1]), float(parts[2])])
        except ValueError as exc:
            raise ParseError(f"{Path(path).name}:{lineno}: bad coordinate") from exc
    if not pts:
        raise ParseError(f"{Path(path).name}: no points found")
    return np.array(pts)


def save_xyz(points, path) -> None:
    lines = [f"{float(x)!r} {float(y)!r} {float(z)!r}" for x, y, z in points]
    try:
        Path(path).write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise IoError(str(exc)) from exc


# ---------------------------------------------------------------------------
# Folding oracle


def tile_contact_mismatch(plate, layout: Layout) -> float:
    """Worst wall-corner mismatch after folding tiles back onto the shell.

    For every non-cut linkage, both tiles' lateral walls at the shared
    edge are mapped back into shell coordinates; matched corners must
    coincide for the deployed tiles to meet face to face. Returns the
    worst distance in millimeters.
    """
    tiles = {t.tri: t for t in plate.tiles}
    worst = 0.0
    for l in layout.linkages:
        if l.state is LinkState.CUT:
            continue
        ta = tiles[l.tri_a]
        tb = tiles[l.tri_b]
        wa = ta.fold_back(ta.wall_corners[l.slot_i % 3])
        wb = tb.fold_back(tb.wall_corners[l.slot_k % 3])
        # wall A runs mesh u -> w, wall B runs w -> u
        pairs = ((wa[0], wb[1]), (wa[1], wb[0]), (wa[2], wb[3]), (wa[3], wb[2]))
        for p, q in pairs:
            worst = max(worst, float(np.linalg.norm(p - q)))
    return worst


# ---------------------------------------------------------------------------
# Reports


def write_report(mapping: dict, path) -> None:
    """Line-oriented key=value report; stable order, repr floats."""
    lines = []
    for key, value in mapping.items():
        if isinstance(value, (bool, np.bool_)):
            value = "true" if value else "false"
        elif isinstance(value, (float, np.floating)):
            value = repr(float(value))
        elif isinstance(value, (int, np.integer)):
            value = str(int(value))
        lines.append(f"{key}={value}")
    try:
        Path(path).write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise IoError(str(exc)) from exc
