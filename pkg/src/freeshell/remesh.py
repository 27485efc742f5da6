"""Isotropic remeshing: split / collapse / flip / tangential relax.

The classic recipe: edges longer than 4/3 of the target are split at
their midpoint, edges shorter than 4/5 are collapsed when that is safe,
interior edges are flipped when that evens out vertex valences, and
interior vertices are relaxed tangentially and projected back onto the
input surface. Edges are processed in ascending index order so the
result is deterministic. The boundary polyline is never moved: boundary
vertices only ever gain midpoints on existing boundary segments.
"""
from __future__ import annotations

import numpy as np

from ._geom import closest_point_on_triangle
from .errors import RemeshError, TopologyError
from .mesh import TargetMesh, make_mesh

SPLIT_FACTOR = 4.0 / 3.0
COLLAPSE_FACTOR = 4.0 / 5.0


class _Surface:
    """Closest-point queries against the original surface."""

    def __init__(self, mesh: TargetMesh):
        self.tris = mesh.vertices[mesh.triangles]  # (m, 3, 3)
        self.lo = self.tris.min(axis=1)
        self.hi = self.tris.max(axis=1)

    def project(self, p: np.ndarray) -> np.ndarray:
        d_lo = np.maximum(self.lo - p, 0.0)
        d_hi = np.maximum(p - self.hi, 0.0)
        box_d2 = np.einsum("ij,ij->i", d_lo, d_lo) + np.einsum("ij,ij->i", d_hi, d_hi)
        order = np.argsort(box_d2, kind="stable")
        best = None
        best_d2 = np.inf
        for ti in order:
            if box_d2[ti] >= best_d2:
                break
            q = closest_point_on_triangle(p, *self.tris[ti])
            d2 = float(np.dot(p - q, p - q))
            if d2 < best_d2:
                best_d2 = d2
                best = q
        return best


class _EditMesh:
    def __init__(self, mesh: TargetMesh):
        self.v = [np.array(p, dtype=float) for p in mesh.vertices]
        self.f = [list(map(int, tri)) for tri in mesh.triangles]

    def compact(self):
        used = sorted({i for tri in self.f for i in tri})
        remap = {old: new for new, old in enumerate(used)}
        verts = np.array([self.v[i] for i in used])
        faces = np.array([[remap[i] for i in tri] for tri in self.f], dtype=np.int64)
        return verts, faces

    def edge_map(self):
        edges: dict = {}
        for fi, tri in enumerate(self.f):
            for k in range(3):
                a, b = tri[k], tri[(k + 1) % 3]
                key = (a, b) if a < b else (b, a)
                edges.setdefault(key, []).append(fi)
        return edges

    def boundary_vertices(self):
        out = set()
        for (a, b), faces in self.edge_map().items():
            if len(faces) == 1:
                out.add(a)
                out.add(b)
        return out

    def vertex_faces(self):
        vf: dict = {}
        for fi, tri in enumerate(self.f):
            for vtx in tri:
                vf.setdefault(vtx, []).append(fi)
        return vf


def _face_normal(v, tri):
    n = np.cross(v[tri[1]] - v[tri[0]], v[tri[2]] - v[tri[0]])
    norm = np.linalg.norm(n)
    return n / norm if norm > 0 else n


def _split_pass(em: _EditMesh, max_len: float) -> int:
    edges = sorted(em.edge_map().items())
    split = 0
    for (a, b), _ in edges:
        if np.linalg.norm(em.v[a] - em.v[b]) <= max_len:
            continue
        faces = [fi for fi, tri in enumerate(em.f) if a in tri and b in tri]
        if not faces:
            continue  # edge vanished in an earlier split this pass
        mid = 0.5 * (em.v[a] + em.v[b])
        m = len(em.v)
        em.v.append(mid)
        for fi in faces:
            tri = em.f[fi]
            k = next(i for i in range(3)
                     if {tri[i], tri[(i + 1) % 3]} == {a, b})
            p, q, r = tri[k], tri[(k + 1) % 3], tri[(k + 2) % 3]
            em.f[fi] = [p, m, r]
            em.f.append([m, q, r])
        split += 1
    return split


def _link_condition(em: _EditMesh, a: int, b: int, edge_faces) -> bool:
    ring_a = {w for tri in em.f if a in tri for w in tri if w != a}
    ring_b = {w for tri in em.f if b in tri for w in tri if w != b}
    opposite = set()
    for fi in edge_faces:
        for w in em.f[fi]:
            if w != a and w != b:
                opposite.add(w)
    return (ring_a & ring_b) - {a, b} == opposite


def _collapse_pass(em: _EditMesh, min_len: float, max_len: float) -> int:
    collapsed = 0
    removed: set = set()
    boundary = em.boundary_vertices()
    edges = sorted(em.edge_map().items())
    for (a, b), faces in edges:
        if a in removed or b in removed:
            continue
        if np.linalg.norm(em.v[a] - em.v[b]) >= min_len:
            continue
        if a in boundary and b in boundary:
            continue  # collapsing would move the boundary polyline
        faces = [fi for fi, tri in enumerate(em.f) if a in tri and b in tri]
        if len(faces) != 2:
            continue
        if not _link_condition(em, a, b, faces):
            continue
        if a in boundary:
            keep, drop = a, b
            target = em.v[a]
        elif b in boundary:
            keep, drop = b, a
            target = em.v[b]
        else:
            keep, drop = a, b
            target = 0.5 * (em.v[a] + em.v[b])
        # reject collapses that invert or overstretch surviving faces
        ok = True
        for fi, tri in enumerate(em.f):
            if drop not in tri or fi in faces:
                continue
            new_tri = [keep if x == drop else x for x in tri]
            old_n = _face_normal(em.v, tri)
            pts = [target if x == keep else em.v[x] for x in new_tri]
            n = np.cross(pts[1] - pts[0], pts[2] - pts[0])
            norm = np.linalg.norm(n)
            if norm < 1e-12 or float(np.dot(n / norm, old_n)) < 0.1:
                ok = False
                break
            for i in range(3):
                if np.linalg.norm(pts[i] - pts[(i + 1) % 3]) > 1.2 * max_len:
                    ok = False
                    break
            if not ok:
                break
        if not ok:
            continue
        em.v[keep] = target
        em.f = [tri for fi, tri in enumerate(em.f) if fi not in faces]
        for tri in em.f:
            for i in range(3):
                if tri[i] == drop:
                    tri[i] = keep
        removed.add(drop)
        collapsed += 1
    return collapsed


def _min_angle(v, tri) -> float:
    worst = np.pi
    for k in range(3):
        u = v[tri[(k + 1) % 3]] - v[tri[k]]
        w = v[tri[(k + 2) % 3]] - v[tri[k]]
        nu, nw = np.linalg.norm(u), np.linalg.norm(w)
        if nu < 1e-300 or nw < 1e-300:
            return 0.0
        worst = min(worst, float(np.arccos(np.clip(np.dot(u, w) / (nu * nw), -1.0, 1.0))))
    return worst


def _quad_min_angle(v, a, b, c, d) -> float:
    """Worst angle of the two triangles sharing diagonal (a, b) in quad a,c,b,d."""
    return min(_min_angle(v, (a, b, c)), _min_angle(v, (a, b, d)))


def _flip_pass(em: _EditMesh) -> int:
    flipped = 0
    boundary = em.boundary_vertices()
    valence: dict = {}
    for tri in em.f:
        for vtx in tri:
            valence[vtx] = valence.get(vtx, 0) + 1
    # face-count valence equals edge valence for interior vertices and is
    # one less on the boundary; targets adjusted accordingly
    existing = set(em.edge_map().keys())

    def target(vtx):
        return 4.0 if vtx in boundary else 6.0

    def val(vtx):
        edge_val = valence.get(vtx, 0) + (1 if vtx in boundary else 0)
        return edge_val

    edges = sorted((k, f) for k, f in em.edge_map().items() if len(f) == 2)
    for (a, b), faces in edges:
        f0, f1 = faces
        tri0, tri1 = em.f[f0], em.f[f1]
        if not (a in tri0 and b in tri0 and a in tri1 and b in tri1):
            continue  # stale after an earlier flip
        c = next(x for x in tri0 if x not in (a, b))
        d = next(x for x in tri1 if x not in (a, b))
        key_cd = (c, d) if c < d else (d, c)
        if key_cd in existing:
            continue
        before = sum((val(x) - target(x)) ** 2 for x in (a, b, c, d))
        after = ((val(a) - 1 - target(a)) ** 2 + (val(b) - 1 - target(b)) ** 2
                 + (val(c) + 1 - target(c)) ** 2 + (val(d) + 1 - target(d)) ** 2)
        if after > before:
            continue
        if after == before:
            # valence-neutral: flip only when it improves the worst angle
            if _quad_min_angle(em.v, c, d, a, b) <= \
                    _quad_min_angle(em.v, a, b, c, d) + 1e-12:
                continue
        # orientation-consistent flip: in tri0 the edge runs a->b or b->a
        k0 = next(i for i in range(3)
                  if {tri0[i], tri0[(i + 1) % 3]} == {a, b})
        p, q = tri0[k0], tri0[(k0 + 1) % 3]
        if (p, q) == (a, b):
            cand0, cand1 = [a, d, c], [b, c, d]
        else:
            cand0, cand1 = [b, d, c], [a, c, d]
        # guard against degenerate or folded results
        avg = _face_normal(em.v, tri0) + _face_normal(em.v, tri1)
        ok = True
        for tri in (cand0, cand1):
            n = np.cross(em.v[tri[1]] - em.v[tri[0]], em.v[tri[2]] - em.v[tri[0]])
            norm = np.linalg.norm(n)
            if norm < 1e-12 or float(np.dot(n / norm, avg)) <= 0.0:
                ok = False
                break
        if not ok:
            continue
        em.f[f0], em.f[f1] = cand0, cand1
        existing.discard((a, b) if a < b else (b, a))
        existing.add(key_cd)
        valence[a] -= 1
        valence[b] -= 1
        valence[c] = valence.get(c, 0) + 1
        valence[d] = valence.get(d, 0) + 1
        flipped += 1
    return flipped


def _smooth_pass(em: _EditMesh, surface: _Surface, damping: float = 0.5) -> None:
    boundary = em.boundary_vertices()
    neighbors: dict = {}
    for tri in em.f:
        for k in range(3):
            a, b = tri[k], tri[(k + 1) % 3]
            neighbors.setdefault(a, set()).add(b)
            neighbors.setdefault(b, set()).add(a)
    # area-weighted vertex normals for the tangential projection
    normals = {i: np.zeros(3) for i in neighbors}
    for tri in em.f:
        n = np.cross(em.v[tri[1]] - em.v[tri[0]], em.v[tri[2]] - em.v[tri[0]])
        for vtx in tri:
            normals[vtx] += n
    new_pos = {}
    for vtx in sorted(neighbors):
        if vtx in boundary:
            continue
        nbrs = sorted(neighbors[vtx])
        centroid = np.mean([em.v[w] for w in nbrs], axis=0)
        delta = centroid - em.v[vtx]
        n = normals[vtx]
        norm = np.linalg.norm(n)
        if norm > 1e-14:
            n = n / norm
            delta = delta - np.dot(delta, n) * n
        moved = em.v[vtx] + damping * delta
        new_pos[vtx] = surface.project(moved)
    for vtx, p in new_pos.items():
        em.v[vtx] = p


def isotropic_remesh(mesh: TargetMesh, target_len: float, iters: int = 10) -> TargetMesh:
    """Remesh toward uniform edge length ``target_len``.

    Returns a new validated mesh. Raises RemeshError when an iteration
    produces a surface that no longer validates.
    """
    if target_len <= 0:
        raise ValueError("target_len must be positive")
    surface = _Surface(mesh)
    em = _EditMesh(mesh)
    max_len = SPLIT_FACTOR * target_len
    min_len = COLLAPSE_FACTOR * target_len
    for it in range(iters):
        _split_pass(em, max_len)
        _collapse_pass(em, min_len, max_len)
        _flip_pass(em)
        _smooth_pass(em, surface)
        verts, faces = em.compact()
        try:
            make_mesh(verts, faces)
        except TopologyError as exc:
            raise RemeshError(f"iteration {it} broke the mesh: {exc}") from exc
    verts, faces = em.compact()
    try:
        return make_mesh(verts, faces)
    except TopologyError as exc:
        raise RemeshError(str(exc)) from exc
