"""Discrete flattening: exploded layouts, the energy model, and the solver loop.

The mesh is exploded into a triangle soup where every triangle owns
private copies of its corners. Linkages record the two copies of each
shared edge. Three least-squares energies drive the layout:

* rigidity  - every triangle edge holds its (scaled) rest length;
* gap       - the two short edges of every retained linkage reach the
              (scaled) target gap;
* fairness  - the two diagonals of every linkage quad reach
              sqrt(rest^2 + gap^2), which squares up the quad and kills
              shear between neighbors.

All terms are normalized by the squared mean rest edge length, so the
total is dimensionless. The pipeline is: parameterize, explode, an
alignment phase (magnify + weld, which prevents overlaps after the later
contraction), the coarse gap-driven loop with auto-cutting, and a final
two-step-scaling refinement that nails the average gap without touching
triangle shapes.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import (ConvergenceError, DivergenceError, DomainError, IoError,
                     TopologyError)
from .mesh import TargetMesh, build_adjacency, edge_statistics
from .optimize import Objective, SolverOptions, SolveStats, minimize
from .param import Param2D, parameterize


class LinkState(str, Enum):
    RETAINED = "retained"
    WELDED = "welded"
    CUT = "cut"


@dataclass
class Linkage:
    """Correspondence between the two exploded copies of a mesh edge.

    Corner slots are global: ``3 * tri + corner``. Slot ``i`` pairs with
    ``m`` and ``j`` with ``k`` (the shared edge runs i->j in one triangle
    and k->m in the other, traversed in opposite directions). Short edges
    are (i, m) and (j, k); long edges (i, j) and (k, m); diagonals (i, k)
    and (j, m).
    """

    id: int
    tri_a: int
    tri_b: int
    slot_i: int
    slot_j: int
    slot_k: int
    slot_m: int
    rest_len: float
    state: LinkState = LinkState.RETAINED


@dataclass
class EnergyParams:
    """Weights and scales of the flattening energy."""

    target_gap: float
    w_rigid: float = 100.0
    w_gap: float = 10.0
    w_fair: float = 10.0
    edge_scale: float = 1.0   # multiplier on rest edge lengths in the rigidity term
    gap_scale: float = 1.0    # multiplier on the target gap in the gap term
    tolerance: float = 0.1    # relative slack on the target gap
    cut_rate: float = 0.1     # fraction of the worst gap band released per cut pass

    def __post_init__(self):
        if self.target_gap < 0 or min(self.w_rigid, self.w_gap, self.w_fair) < 0:
            raise DomainError("weights and target gap must be non-negative")
        if not 0.0 <= self.cut_rate <= 1.0:
            raise DomainError("cut_rate must lie in [0, 1]")
        if self.edge_scale <= 0:
            raise DomainError("edge_scale must be positive")


@dataclass
class RefineParams:
    """Two-step-scaling refinement settings."""

    target_gap: float
    learn_rate: float           # 1 / mm^2
    max_steps: int = 2000
    loss_tol: float = 1e-3

    def __post_init__(self):
        if self.target_gap < 0 or self.learn_rate <= 0:
            raise DomainError("target_gap must be >= 0 and learn_rate > 0")


@dataclass
class Layout:
    """Exploded 2D triangle soup plus linkage state.

    ``coords`` is (T, 3, 2); welded corner slots are kept mirrored so the
    array is always valid geometry. ``weld_parent`` is a union-find over
    slots implementing hard vertex identification.
    """

    coords: np.ndarray
    rest_edges: np.ndarray
    linkages: list
    avg_edge: float
    source_tris: np.ndarray
    weld_parent: np.ndarray = None

    def __post_init__(self):
        if self.weld_parent is None:
            self.weld_parent = np.arange(self.coords.shape[0] * 3)

    @property
    def n_triangles(self) -> int:
        return self.coords.shape[0]

    @property
    def n_slots(self) -> int:
        return self.coords.shape[0] * 3

    def slot(self, tri: int, corner: int) -> int:
        return 3 * tri + corner

    def slot_coord(self, slot: int) -> np.ndarray:
        return self.coords[slot // 3, slot % 3]

    def find(self, slot: int) -> int:
        p = self.weld_parent
        root = slot
        while p[root] != root:
            root = p[root]
        while p[slot] != root:
            p[slot], slot = root, p[slot]
        return root

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return
        lo, hi = (ra, rb) if ra < rb else (rb, ra)
        mid = 0.5 * (self.slot_coord(ra) + self.slot_coord(rb))
        self.weld_parent[hi] = lo
        self.coords[lo // 3, lo % 3] = mid
        self.mirror_welds()

    def mirror_welds(self) -> None:
        """Copy representative coordinates onto every welded duplicate."""
        flat = self.coords.reshape(-1, 2)
        for s in range(self.n_slots):
            r = self.find(s)
            if r != s:
                flat[s] = flat[r]

    def unweld_all(self, nudge: float = 1e-6) -> None:
        """Restore independent corner copies at their current positions.

        Each previously welded corner is pulled a relative ``nudge`` step
        toward its own triangle centroid. The copies start effectively
        coincident but the séparation direction is biased outward, so the
        gap term opens linkages on the correct side instead of folding
        triangles through each other.
        """
        self.mirror_welds()
        self.weld_parent = np.arange(self.n_slots)
        welded_slots = set()
        for l in self.linkages:
            if l.state is LinkState.WELDED:
                l.state = LinkState.RETAINED
                welded_slots.update((l.slot_i, l.slot_j, l.slot_k, l.slot_m))
        if nudge > 0:
            centroids = self.coords.mean(axis=1)
            for s in sorted(welded_slots):
                tri, corner = s // 3, s % 3
                self.coords[tri, corner] += nudge * (centroids[tri] - self.coords[tri, corner])

    def retained(self, include_welded: bool = False) -> list:
        keep = (LinkState.RETAINED, LinkState.WELDED) if include_welded \
            else (LinkState.RETAINED,)
        return [l for l in self.linkages if l.state in keep]

    def copy(self) -> "Layout":
        return Layout(self.coords.copy(), self.rest_edges.copy(),
                      [replace(l) for l in self.linkages], self.avg_edge,
                      self.source_tris.copy(), self.weld_parent.copy())


@dataclass
class FlattenStats:
    """Per-stage trace of a flattening run."""

    records: list = field(default_factory=list)
    cut_events: list = field(default_factory=list)  # (stage, connected_after)
    coarse_max_gap: float = math.nan
    coarse_iters: int = 0
    refine_steps: int = 0
    final_avg_gap: float = math.nan
    target_gap: float = math.nan
    coarse_gap: float = math.nan
    debug_dir: str = None  # when set, each record dumps the layout as OBJ

    def record(self, stage: str, n_iter: int, energy: float, terms: tuple,
               a_max: float, cut_count: int, layout: "Layout" = None) -> None:
        self.records.append({
            "stage": stage, "iter": n_iter, "energy": energy,
            "e_rigid": terms[0], "e_gap": terms[1], "e_fair": terms[2],
            "a_max": a_max, "cut_count": cut_count,
        })
        if self.debug_dir is not None and layout is not None:
            Path(self.debug_dir).mkdir(parents=True, exist_ok=True)
            save_layout_obj(layout, Path(self.debug_dir)
                            / f"{stage}_{n_iter:03d}.obj")

    def lines(self) -> list:
        out = []
        for r in self.records:
            out.append(
                f"stage={r['stage']} iter={r['iter']} energy={r['energy']!r} "
                f"e_rigid={r['e_rigid']!r} e_gap={r['e_gap']!r} "
                f"e_fair={r['e_fair']!r} a_max={r['a_max']!r} "
                f"cut_count={r['cut_count']}")
        return out


# ---------------------------------------------------------------------------
# Layout construction


def explode_mesh(mesh: TargetMesh, init: Param2D) -> Layout:
    """Give every triangle private copies of its corners; build linkages."""
    t = mesh.triangles
    n_tri = len(t)
    coords = init.uv[t].astype(float).copy()  # (T, 3, 2)
    v = mesh.vertices
    rest = np.zeros((n_tri, 3))
    for k in range(3):
        rest[:, k] = np.linalg.norm(v[t[:, (k + 1) % 3]] - v[t[:, k]], axis=1)

    adj = build_adjacency(mesh)
    # directed halfedge -> (triangle, corner slot of the edge start)
    halfedge: dict = {}
    for ti, (a, b, c) in enumerate(t):
        verts = (int(a), int(b), int(c))
        for k in range(3):
            halfedge[(verts[k], verts[(k + 1) % 3])] = (ti, k)
    linkages = []
    for (u, w), tris in adj.edges:
        if len(tris) != 2:
            continue
        if (u, w) in halfedge:
            ta, ka = halfedge[(u, w)]
            tb, kb = halfedge[(w, u)]
        else:
            raise TopologyError(f"edge {(u, w)} missing a directed halfedge")
        # tri_a runs u->w as (i, j); tri_b runs w->u as (k, m); so m is the
        # copy of u and k the copy of w, matching the short edges (i, m), (j, k).
        slot_i = 3 * ta + ka
        slot_j = 3 * ta + (ka + 1) % 3
        slot_k = 3 * tb + kb
        slot_m = 3 * tb + (kb + 1) % 3
        rest_len = float(np.linalg.norm(v[u] - v[w]))
        linkages.append(Linkage(len(linkages), ta, tb, slot_i, slot_j,
                                slot_k, slot_m, rest_len))
    avg_edge = edge_statistics(mesh).avg
    return Layout(coords, rest, linkages, avg_edge, np.arange(n_tri))


def gap_value(layout: Layout, l: Linkage) -> float:
    """Mean length of the linkage's two short edges at current coordinates."""
    c = layout.coords.reshape(-1, 2)
    e_im = c[l.slot_i] - c[l.slot_m]
    e_jk = c[l.slot_j] - c[l.slot_k]
    return 0.5 * (float(np.hypot(*e_im)) + float(np.hypot(*e_jk)))


def max_gap(layout: Layout) -> float:
    """Largest gap over retained (unwelded) linkages; 0 when none remain."""
    gaps = [gap_value(layout, l) for l in layout.retained()]
    return max(gaps) if gaps else 0.0


# ---------------------------------------------------------------------------
# Energy


class _EnergySystem:
    """Vectorized evaluation of the flattening energy over free variables.

    Term index arrays are built once per (layout weld/cut state, params)
    and reused across solver iterations.
    """

    def __init__(self, layout: Layout, p: EnergyParams):
        self.layout = layout
        self.p = p
        n_slots = layout.n_slots
        reps = np.array([layout.find(s) for s in range(n_slots)])
        uniq, var_of_rep = np.unique(reps, return_inverse=True)
        self.var_of_slot = var_of_rep
        self.n_var = len(uniq)
        self.x0 = layout.coords.reshape(-1, 2)[uniq].copy()
        self.eps2 = (1e-9 * layout.avg_edge) ** 2
        self.inv_e2 = 1.0 / layout.avg_edge ** 2

        pairs_a, pairs_b, targets, kinds = [], [], [], []
        # rigidity: all triangle edges
        for tri in range(layout.n_triangles):
            for k in range(3):
                pairs_a.append(3 * tri + k)
                pairs_b.append(3 * tri + (k + 1) % 3)
                targets.append(layout.rest_edges[tri, k] * p.edge_scale)
                kinds.append(0)
        gap_target = p.target_gap * p.gap_scale
        for l in layout.linkages:
            if l.state is not LinkState.RETAINED:
                continue
            for a, b in ((l.slot_i, l.slot_m), (l.slot_j, l.slot_k)):
                pairs_a.append(a)
                pairs_b.append(b)
                targets.append(gap_target)
                kinds.append(1)
            diag_target = math.hypot(l.rest_len, gap_target)
            for a, b in ((l.slot_i, l.slot_k), (l.slot_j, l.slot_m)):
                pairs_a.append(a)
                pairs_b.append(b)
                targets.append(diag_target)
                kinds.append(2)
        self.slot_a = np.array(pairs_a, dtype=np.int64)
        self.slot_b = np.array(pairs_b, dtype=np.int64)
        self.var_a = self.var_of_slot[self.slot_a]
        self.var_b = self.var_of_slot[self.slot_b]
        self.targets = np.array(targets)
        kinds = np.array(kinds)
        w = np.array([p.w_rigid, p.w_gap, p.w_fair])
        self.term_w = w[kinds] * self.inv_e2
        self.kinds = kinds

    def eval(self, x: np.ndarray):
        """Energy and gradient with respect to the free variables."""
        pts = x.reshape(self.n_var, 2)
        d = pts[self.var_a] - pts[self.var_b]
        lens = np.sqrt(np.einsum("ij,ij->i", d, d) + self.eps2)
        res = lens - self.targets
        e = float(np.dot(self.term_w, res * res))
        coef = (2.0 * self.term_w * res / lens)[:, None]
        grad = np.zeros((self.n_var, 2))
        np.add.at(grad, self.var_a, coef * d)
        np.add.at(grad, self.var_b, -coef * d)
        return e, grad.reshape(-1)

    def eval_slots(self, coords_flat: np.ndarray):
        """Energy and per-slot gradient, each corner treated independently."""
        d = coords_flat[self.slot_a] - coords_flat[self.slot_b]
        lens = np.sqrt(np.einsum("ij,ij->i", d, d) + self.eps2)
        res = lens - self.targets
        e = float(np.dot(self.term_w, res * res))
        coef = (2.0 * self.term_w * res / lens)[:, None]
        grad = np.zeros_like(coords_flat)
        np.add.at(grad, self.slot_a, coef * d)
        np.add.at(grad, self.slot_b, -coef * d)
        return e, grad

    def term_energies(self, coords_flat: np.ndarray):
        """Unweighted (E_rigid, E_gap, E_fair) at the given coordinates."""
        d = coords_flat[self.slot_a] - coords_flat[self.slot_b]
        lens = np.sqrt(np.einsum("ij,ij->i", d, d) + self.eps2)
        res2 = (lens - self.targets) ** 2 * self.inv_e2
        return tuple(float(res2[self.kinds == k].sum()) for k in range(3))

    def scatter(self, x: np.ndarray) -> None:
        """Write solved variables back into the layout (mirroring welds)."""
        pts = x.reshape(self.n_var, 2)
        flat = self.layout.coords.reshape(-1, 2)
        flat[:] = pts[self.var_of_slot]


def energy_and_gradient(layout: Layout, p: EnergyParams):
    """Total energy and its gradient over all layout coordinates.

    The gradient treats every corner slot as an independent variable
    (welded duplicates each receive their own exact partial derivative),
    which is what a finite-difference probe of a single slot measures.
    """
    sys = _EnergySystem(layout, p)
    return sys.eval_slots(layout.coords.reshape(-1, 2).copy())


def solve_layout(layout: Layout, p: EnergyParams,
                 opts: SolverOptions | None = None) -> SolveStats:
    """Minimize the energy over free variables; update layout in place."""
    sys = _EnergySystem(layout, p)
    obj = Objective(sys.eval, sys.n_var * 2)
    x, stats = minimize(obj, sys.x0.reshape(-1), opts)
    sys.scatter(x)
    return stats


# ---------------------------------------------------------------------------
# Auto-cutting


def cut_threshold(p: EnergyParams, a_max: float) -> float:
    """Gap size above which a linkage becomes a cut candidate."""
    if a_max < 0:
        raise DomainError("a_max must be non-negative")
    return max((1.0 + p.tolerance) * p.target_gap, (1.0 - p.cut_rate) * a_max)


def graph_connected(layout: Layout) -> bool:
    """Depth-first search over triangles along retained+welded linkages."""
    n = layout.n_triangles
    if n == 0:
        return True
    adj = [[] for _ in range(n)]
    for l in layout.linkages:
        if l.state is LinkState.CUT:
            continue
        adj[l.tri_a].append(l.tri_b)
        adj[l.tri_b].append(l.tri_a)
    seen = np.zeros(n, dtype=bool)
    stack = [0]
    seen[0] = True
    count = 1
    while stack:
        cur = stack.pop()
        for nxt in adj[cur]:
            if not seen[nxt]:
                seen[nxt] = True
                count += 1
                stack.append(nxt)
    return count == n


@dataclass
class CutResult:
    cut_count: int
    connected_after: bool
    threshold: float


def auto_cut(layout: Layout, p: EnergyParams,
             stats: FlattenStats | None = None, stage: str = "") -> CutResult:
    """Cut over-stretched linkages while keeping the tile graph connected.

    Candidates are retained linkages whose gap exceeds the threshold,
    processed in descending gap order (ties by ascending id). A cut that
    would disconnect the graph is reverted. Cuts are permanent.
    """
    gaps = [(gap_value(layout, l), l) for l in layout.retained()]
    if not gaps:
        result = CutResult(0, graph_connected(layout), 0.0)
        if stats is not None:
            stats.cut_events.append((stage, result.connected_after))
        return result
    a_max = max(g for g, _ in gaps)
    eps_len = cut_threshold(p, a_max)
    selected = sorted(((g, l) for g, l in gaps if g > eps_len),
                      key=lambda item: (-item[0], item[1].id))
    cut_count = 0
    for _, l in selected:
        l.state = LinkState.CUT
        if graph_connected(layout):
            cut_count += 1
        else:
            l.state = LinkState.RETAINED
    result = CutResult(cut_count, graph_connected(layout), eps_len)
    if stats is not None:
        stats.cut_events.append((stage, result.connected_after))
    return result


# ---------------------------------------------------------------------------
# Alignment (magnify and weld)


def amplification_factor(target_gap: float, avg_edge: float) -> float:
    """Edge magnification that leaves room for the gaps after contraction.

    Derived from the equilateral-triangle relation between edge growth
    and the opening that isometric contraction produces.
    """
    if avg_edge <= 0:
        raise DomainError("avg_edge must be positive")
    if target_gap < 0:
        raise DomainError("target_gap must be non-negative")
    return 1.0 + math.sqrt(3.0) * target_gap / avg_edge


def _weld_would_fold(layout: Layout, l: Linkage) -> bool:
    """True when merging the linkage leaves both triangles on one side.

    The merged pair shares the edge exactly; a healthy weld has the
    triangles on opposite sides (touching), a folded one overlaps with
    positive area and must be cut rather than locked.
    """
    from ._geom import triangles_overlap
    c = layout.coords.reshape(-1, 2)
    pi = 0.5 * (c[l.slot_i] + c[l.slot_m])
    pj = 0.5 * (c[l.slot_j] + c[l.slot_k])
    ta = [c[3 * l.tri_a + k].copy() for k in range(3)]
    ta[l.slot_i % 3] = pi
    ta[l.slot_j % 3] = pj
    tb = [c[3 * l.tri_b + k].copy() for k in range(3)]
    tb[l.slot_m % 3] = pi
    tb[l.slot_k % 3] = pj
    return triangles_overlap(ta, tb)


def weld_below(layout: Layout, threshold: float) -> int:
    """Weld retained linkages whose gap is below ``threshold``.

    Linkages whose merged configuration would fold one triangle onto the
    other are skipped; the alignment loop releases those by cutting.
    """
    welded = 0
    for l in layout.retained():
        if gap_value(layout, l) < threshold and not _weld_would_fold(layout, l):
            layout.union(l.slot_i, l.slot_m)
            layout.union(l.slot_j, l.slot_k)
            l.state = LinkState.WELDED
            welded += 1
    return welded


def _weight_schedule(n_iter: int) -> float:
    return min(100.0, 10.0 + 10.0 * n_iter)


def alignment_phase(layout: Layout, p: EnergyParams,
                    solver_opts: SolverOptions | None = None,
                    max_rounds: int = 0,
                    weld_tol: float | None = None,
                    stats: FlattenStats | None = None) -> None:
    """Magnify triangles, pull gaps shut, cut the hopeless ones, weld the rest.

    Each round minimizes the energy with edges scaled by the amplification
    factor and the gap target at zero (fairness off), auto-cuts linkages
    whose gaps stay excessive, and welds linkages that closed. When a
    round makes no progress the weld tolerance is escalated so the loop
    always terminates; distortion injected by a forced weld is reabsorbed
    by the coarse phase, which re-separates all copies. On exit every
    non-cut linkage is welded.
    """
    stats = stats if stats is not None else FlattenStats()
    m = amplification_factor(p.target_gap, layout.avg_edge)
    align_stop = p.tolerance * p.target_gap
    if weld_tol is None:
        weld_tol = 1e-4 * layout.avg_edge
    if max_rounds <= 0:
        max_rounds = 2 * max(len(layout.linkages), 1) + 10

    for rnd in range(max_rounds):
        ap = replace(p, edge_scale=m, gap_scale=0.0,
                     w_rigid=100.0, w_gap=_weight_schedule(rnd), w_fair=0.0)
        solve_layout(layout, ap, solver_opts)
        sys = _EnergySystem(layout, ap)
        terms = sys.term_energies(layout.coords.reshape(-1, 2))
        a_max_pre = max_gap(layout)
        cut = auto_cut(layout, ap, stats, stage="align")
        welds = weld_below(layout, weld_tol)
        a_max_post = max_gap(layout)
        stats.record("align", rnd, sum(terms), terms, a_max_pre,
                     cut.cut_count, layout)
        if a_max_post <= align_stop:
            weld_below(layout, align_stop * (1.0 + 1e-9) + 1e-300)
            if not layout.retained():
                return
        if cut.cut_count == 0 and welds == 0 and a_max_post > align_stop:
            # Stalled: the remaining gaps are genuine flattening misfit,
            # too large to weld and below the cut threshold. Release the
            # worst one (curvature needs open seams), welding one only
            # when connectivity forbids every cut.
            ordered = sorted(((gap_value(layout, l), l.id, l)
                              for l in layout.retained()),
                             key=lambda item: (-item[0], item[1]))
            for _, _, l in ordered:
                l.state = LinkState.CUT
                if graph_connected(layout):
                    break
                l.state = LinkState.RETAINED
            else:
                _, _, l = ordered[-1]
                layout.union(l.slot_i, l.slot_m)
                layout.union(l.slot_j, l.slot_k)
                l.state = LinkState.WELDED
        if not layout.retained():
            return
    raise ConvergenceError(
        f"alignment did not close all linkages in {max_rounds} rounds "
        f"(max gap {max_gap(layout):.4g}, stop {align_stop:.4g})")


# ---------------------------------------------------------------------------
# Coarse optimization (Algorithm: solve, measure, cut, repeat)


def coarse_optimize(layout: Layout, p: EnergyParams,
                    solver_opts: SolverOptions | None = None,
                    outer_max_iters: int = 50,
                    stats: FlattenStats | None = None) -> SolveStats:
    """Contract to rest size while opening gaps toward the target.

    Runs the dynamic weight schedule (rigidity 100, gap and fairness
    ramping 10 per outer iteration up to 100), auto-cutting after each
    solve, until the largest retained gap is within (1 + tolerance) of
    the target.
    """
    stats = stats if stats is not None else FlattenStats()
    if any(l.state is LinkState.WELDED for l in layout.linkages):
        raise ValueError("coarse_optimize expects an unwelded layout")
    bound = (1.0 + p.tolerance) * p.target_gap
    last = None
    for n_iter in range(outer_max_iters):
        w = _weight_schedule(n_iter)
        cp = replace(p, edge_scale=1.0, gap_scale=1.0,
                     w_rigid=100.0, w_gap=w, w_fair=w)
        last = solve_layout(layout, cp, solver_opts)
        sys = _EnergySystem(layout, cp)
        terms = sys.term_energies(layout.coords.reshape(-1, 2))
        a_max = max_gap(layout)
        cut = auto_cut(layout, cp, stats, stage="coarse")
        stats.record("coarse", n_iter, sum(terms), terms, a_max,
                     cut.cut_count, layout)
        stats.coarse_iters = n_iter + 1
        if a_max <= bound:
            stats.coarse_max_gap = max_gap(layout)
            return last
    raise ConvergenceError(
        f"coarse optimization: max gap {max_gap(layout):.6g} above "
        f"{bound:.6g} after {outer_max_iters} outer iterations")


# ---------------------------------------------------------------------------
# Local refinement (two-step scaling)


def scale_step(layout: Layout, lam: float) -> None:
    """One two-step scaling: triangles about centroids by ``lam``, then the
    whole plane about the origin by ``1/lam``. Triangle sizes survive;
    centroid spacing shrinks by ``1/lam``."""
    centroids = layout.coords.mean(axis=1, keepdims=True)
    layout.coords = (layout.coords - centroids) * lam + centroids
    layout.coords = layout.coords * (1.0 / lam)


@dataclass
class RefineResult:
    final_avg_gap: float
    steps: int


def local_refinement(layout: Layout, rp: RefineParams,
                     stats: FlattenStats | None = None) -> RefineResult:
    """Drive the mean gap to the target with adaptive two-step scaling.

    The scale factor follows ``lam = loss * |loss| * learn_rate + 1``,
    a signed-quadratic rule that slows near the target. Raises
    DivergenceError when the loss grows ten steps in a row.
    """
    stats = stats if stats is not None else FlattenStats()
    retained = layout.retained()
    if not retained:
        return RefineResult(0.0, 0)
    prev_abs = None
    grow_streak = 0
    steps = 0
    for step in range(rp.max_steps):
        avg = float(np.mean([gap_value(layout, l) for l in retained]))
        loss = avg - rp.target_gap
        if abs(loss) <= rp.loss_tol:
            break
        if prev_abs is not None and abs(loss) > prev_abs:
            grow_streak += 1
            if grow_streak >= 10:
                raise DivergenceError(
                    f"refinement loss grew for {grow_streak} consecutive steps "
                    f"(|loss| {abs(loss):.4g})")
        else:
            grow_streak = 0
        prev_abs = abs(loss)
        lam = loss * abs(loss) * rp.learn_rate + 1.0
        # a scale factor near zero (or negative) would reflect the layout;
        # clamp hard and let the divergence guard catch a bad learn rate
        lam = min(max(lam, 0.1), 10.0)
        scale_step(layout, lam)
        steps = step + 1
    final_avg = float(np.mean([gap_value(layout, l) for l in retained]))
    stats.refine_steps = steps
    stats.final_avg_gap = final_avg
    return RefineResult(final_avg, steps)


# ---------------------------------------------------------------------------
# Target gap and the full pipeline


def target_gap_from_rate(avg_edge: float, rate: float) -> float:
    """Gap that a connector shrinking by ``rate`` can fully close.

    ``avg_edge * rate / (sqrt(3) * (1 - rate))``; the default rate 0.14
    is the lower limit of reliable material shrinkage.
    """
    if not 0.0 <= rate < 1.0:
        raise DomainError(f"shrink rate must lie in [0, 1), got {rate}")
    if avg_edge <= 0:
        raise DomainError("avg_edge must be positive")
    return avg_edge * rate / (math.sqrt(3.0) * (1.0 - rate))


@dataclass
class FlattenOptions:
    """Knobs of the full flattening pipeline (all exposed in the CLI config)."""

    shrink_rate: float = 0.14
    kappa: float = 1.2            # coarse target relaxation: d_coarse = kappa * d_t
    cut_rate: float = 0.1
    tolerance: float = 0.1
    weld_tol_factor: float = 1e-4
    align_max_rounds: int = 0     # 0 = auto from linkage count
    outer_max_iters: int = 50
    arap_max_iters: int = 100
    arap_tol: float = 1e-7
    refine_learn_factor: float = 40.0   # learn_rate = factor / avg_edge^2
    refine_loss_factor: float = 1e-3    # loss_tol = factor * avg_edge
    refine_max_steps: int = 2000
    debug_dir: str = None               # per-iteration layout OBJ dumps
    solver: SolverOptions = None

    def __post_init__(self):
        if self.solver is None:
            self.solver = SolverOptions()


def run_discrete_flattening(mesh: TargetMesh,
                            options: FlattenOptions | None = None):
    """Full pipeline: parameterize, explode, align, contract, refine.

    Returns ``(layout, stats)``. Stage failures carry a stage label.
    """
    opts = options or FlattenOptions()
    stats = FlattenStats(debug_dir=opts.debug_dir)
    avg_edge = edge_statistics(mesh).avg
    d_t = target_gap_from_rate(avg_edge, opts.shrink_rate)
    d_coarse = opts.kappa * d_t
    stats.target_gap = d_t
    stats.coarse_gap = d_coarse

    def staged(stage, fn, *args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except Exception as exc:
            raise type(exc)(f"[{stage}] {exc}") from exc

    init = staged("parameterize", parameterize, mesh,
                  max_iters=opts.arap_max_iters, tol=opts.arap_tol)
    layout = staged("explode", explode_mesh, mesh, init)
    p = EnergyParams(target_gap=d_coarse, tolerance=opts.tolerance,
                     cut_rate=opts.cut_rate)
    staged("align", alignment_phase, layout, p, opts.solver,
           max_rounds=opts.align_max_rounds,
           weld_tol=opts.weld_tol_factor * avg_edge, stats=stats)
    layout.unweld_all()
    staged("coarse", coarse_optimize, layout, p, opts.solver,
           outer_max_iters=opts.outer_max_iters, stats=stats)
    rp = RefineParams(target_gap=d_t,
                      learn_rate=opts.refine_learn_factor / avg_edge ** 2,
                      max_steps=opts.refine_max_steps,
                      loss_tol=opts.refine_loss_factor * avg_edge)
    staged("refine", local_refinement, layout, rp, stats)
    return layout, stats


# ---------------------------------------------------------------------------
# Serialization


def layout_to_dict(layout: Layout) -> dict:
    return {
        "avg_edge": layout.avg_edge,
        "coords": layout.coords.tolist(),
        "rest_edges": layout.rest_edges.tolist(),
        "source_tris": layout.source_tris.tolist(),
        "weld_parent": layout.weld_parent.tolist(),
        "linkages": [{
            "id": l.id, "tri_a": l.tri_a, "tri_b": l.tri_b,
            "slot_i": l.slot_i, "slot_j": l.slot_j,
            "slot_k": l.slot_k, "slot_m": l.slot_m,
            "rest_len": l.rest_len, "state": l.state.value,
        } for l in layout.linkages],
    }


def layout_from_dict(data: dict) -> Layout:
    linkages = [Linkage(d["id"], d["tri_a"], d["tri_b"], d["slot_i"],
                        d["slot_j"], d["slot_k"], d["slot_m"],
                        d["rest_len"], LinkState(d["state"]))
                for d in data["linkages"]]
    return Layout(np.array(data["coords"], dtype=float),
                  np.array(data["rest_edges"], dtype=float),
                  linkages, float(data["avg_edge"]),
                  np.array(data["source_tris"], dtype=np.int64),
                  np.array(data["weld_parent"], dtype=np.int64))


def save_layout_json(layout: Layout, path, extra: dict | None = None) -> None:
    data = layout_to_dict(layout)
    if extra:
        data.update(extra)
    try:
        Path(path).write_text(json.dumps(data, sort_keys=True) + "\n")
    except OSError as exc:
        raise IoError(str(exc)) from exc


def load_layout_json(path):
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise IoError(str(exc)) from exc
    return layout_from_dict(data), data


def save_layout_obj(layout: Layout, path) -> None:
    """Dump the layout as an OBJ triangle soup at z = 0."""
    lines = []
    for tri in range(layout.n_triangles):
        for c in range(3):
            x, y = layout.coords[tri, c]
            lines.append(f"v {float(x)!r} {float(y)!r} 0.0")
    for tri in range(layout.n_triangles):
        base = 3 * tri
        lines.append(f"f {base + 1} {base + 2} {base + 3}")
    try:
        Path(path).write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise IoError(str(exc)) from exc
