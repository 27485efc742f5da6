"""Initial 2D parameterization: Tutte embedding plus ARAP local/global passes.

This is pre-processing for the flattening engine; it only has to produce
a reasonable, deterministic starting layout. The Tutte step pins the
outermost boundary loop to a circle (arc-length spaced) and solves the
uniform-Laplacian system for everything else. The ARAP step then
alternates per-triangle best-fit rotations with a cotangent-weight global
solve (free boundary), reusing one sparse factorization throughout.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from .errors import NonFiniteError, SolveError, TopologyError
from .mesh import TargetMesh, boundary_loops

# Cotangent weights are clamped from below so the global system stays
# positive definite on poor-quality triangles.
COT_CLAMP = 1e-6


@dataclass
class Param2D:
    """Flat coordinates plus per-triangle rest shapes.

    ``uv`` holds one 2D point per mesh vertex. ``frames`` holds each 3D
    triangle laid out isometrically in its own plane, as (m, 3, 2)
    coordinates; edge lengths match the 3D triangle exactly.
    """

    uv: np.ndarray
    frames: np.ndarray
    energy_history: list = field(default_factory=list, repr=False)


def rest_frames(mesh: TargetMesh) -> np.ndarray:
    """Isometric 2D layout of every 3D triangle: (m, 3, 2)."""
    v = mesh.vertices
    t = mesh.triangles
    p0 = v[t[:, 0]]
    e01 = v[t[:, 1]] - p0
    e02 = v[t[:, 2]] - p0
    l01 = np.linalg.norm(e01, axis=1)
    if np.any(l01 < 1e-14):
        raise TopologyError("degenerate triangle edge")
    x2 = np.einsum("ij,ij->i", e01, e02) / l01
    y2sq = np.einsum("ij,ij->i", e02, e02) - x2 * x2
    y2 = np.sqrt(np.maximum(y2sq, 0.0))
    frames = np.zeros((len(t), 3, 2))
    frames[:, 1, 0] = l01
    frames[:, 2, 0] = x2
    frames[:, 2, 1] = y2
    return frames


def tutte_embed(mesh: TargetMesh) -> Param2D:
    """Map the outer boundary to a circle and solve uniform Laplace inside.

    The outer boundary is the longest loop; hole boundaries are left free
    (they join the interior solve). For hole-free disks the result is a
    bijective embedding.
    """
    loops = boundary_loops(mesh)
    if not loops:
        raise TopologyError("mesh has no boundary loop")

    def loop_length(loop):
        pts = mesh.vertices[loop]
        return float(np.linalg.norm(np.roll(pts, -1, axis=0) - pts, axis=1).sum())

    outer = max(loops, key=loop_length)
    n = mesh.n_vertices
    uv = np.zeros((n, 2))

    total = loop_length(outer)
    radius = total / (2.0 * np.pi)
    arc = 0.0
    pts = mesh.vertices[outer]
    seg = np.linalg.norm(np.roll(pts, -1, axis=0) - pts, axis=1)
    fixed = np.zeros(n, dtype=bool)
    for i, vid in enumerate(outer):
        ang = 2.0 * np.pi * arc / total
        uv[vid] = (radius * np.cos(ang), radius * np.sin(ang))
        fixed[vid] = True
        arc += seg[i]

    free = np.flatnonzero(~fixed)
    if free.size:
        pos = {int(v): i for i, v in enumerate(free)}
        rows, cols, vals = [], [], []
        rhs = np.zeros((free.size, 2))
        deg = np.zeros(n)
        neighbors: dict = {}
        for a, b, c in mesh.triangles:
            for u, w in ((int(a), int(b)), (int(b), int(c)), (int(c), int(a))):
                neighbors.setdefault(u, set()).add(w)
                neighbors.setdefault(w, set()).add(u)
        for vid in free:
            i = pos[int(vid)]
            nbrs = sorted(neighbors[int(vid)])
            deg[vid] = len(nbrs)
            rows.append(i)
            cols.append(i)
            vals.append(float(len(nbrs)))
            for w in nbrs:
                if fixed[w]:
                    rhs[i] += uv[w]
                else:
                    rows.append(i)
                    cols.append(pos[w])
                    vals.append(-1.0)
        L = sparse.csc_matrix((vals, (rows, cols)), shape=(free.size, free.size))
        try:
            lu = splu(L)
            sol = np.column_stack([lu.solve(rhs[:, 0]), lu.solve(rhs[:, 1])])
        except RuntimeError as exc:
            raise SolveError(f"singular Tutte system: {exc}") from exc
        uv[free] = sol
    return Param2D(uv=uv, frames=rest_frames(mesh))


def _corner_cotangents(frames: np.ndarray) -> np.ndarray:
    """Per-triangle cotangents opposite each directed edge.

    Entry k of a row is the cotangent of the angle opposite the edge
    (k, k+1) of the triangle, clamped at COT_CLAMP.
    """
    cots = np.zeros((len(frames), 3))
    for k in range(3):
        i, j, o = k, (k + 1) % 3, (k + 2) % 3
        u = frames[:, i] - frames[:, o]
        w = frames[:, j] - frames[:, o]
        cross = u[:, 0] * w[:, 1] - u[:, 1] * w[:, 0]
        dot = np.einsum("ij,ij->i", u, w)
        cots[:, k] = dot / np.maximum(np.abs(cross), 1e-300)
    return np.maximum(cots, COT_CLAMP)


def arap_energy(mesh: TargetMesh, frames, cots, uv) -> float:
    t = mesh.triangles
    total = 0.0
    rot = _fit_rotations(t, frames, cots, uv)
    for k in range(3):
        i, j = k, (k + 1) % 3
        e_uv = uv[t[:, i]] - uv[t[:, j]]
        e_x = frames[:, i] - frames[:, j]
        e_rot = np.einsum("nab,nb->na", rot, e_x)
        d = e_uv - e_rot
        total += float(np.sum(cots[:, k] * np.einsum("ij,ij->i", d, d)))
    return total


def _fit_rotations(t, frames, cots, uv):
    """Closed-form 2x2 polar best-fit rotation per triangle."""
    J = np.zeros((len(t), 2, 2))
    for k in range(3):
        i, j = k, (k + 1) % 3
        e_uv = uv[t[:, i]] - uv[t[:, j]]
        e_x = frames[:, i] - frames[:, j]
        J += cots[:, k, None, None] * e_uv[:, :, None] * e_x[:, None, :]
    alpha = J[:, 0, 0] + J[:, 1, 1]
    beta = J[:, 1, 0] - J[:, 0, 1]
    r = np.hypot(alpha, beta)
    safe = r > 1e-300
    ca = np.where(safe, alpha / np.where(safe, r, 1.0), 1.0)
    sa = np.where(safe, beta / np.where(safe, r, 1.0), 0.0)
    rot = np.empty_like(J)
    rot[:, 0, 0] = ca
    rot[:, 0, 1] = -sa
    rot[:, 1, 0] = sa
    rot[:, 1, 1] = ca
    return rot


def arap_parameterize(mesh: TargetMesh, init: Param2D,
                      max_iters: int = 100, tol: float = 1e-7) -> Param2D:
    """ARAP local/global iterations from ``init``; free boundary.

    Alternates best-fit rotations with a cotangent Laplacian solve whose
    factorization is computed once. Stops when the relative energy
    decrease falls below ``tol``. The energy is non-increasing.
    """
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    t = mesh.triangles
    n = mesh.n_vertices
    frames = init.frames
    cots = _corner_cotangents(frames)

    # Laplacian is constant across iterations; pin vertex 0 to remove the
    # translation null space (ARAP energy is translation invariant).
    rows, cols, vals = [], [], []
    for k in range(3):
        i, j = k, (k + 1) % 3
        wi = t[:, i]
        wj = t[:, j]
        w = cots[:, k]
        rows.extend([wi, wj, wi, wj])
        cols.extend([wi, wj, wj, wi])
        vals.extend([w, w, -w, -w])
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    L = sparse.csc_matrix((vals, (rows, cols)), shape=(n, n))
    keep = np.arange(1, n)
    L_red = L[keep][:, keep].tocsc()
    L_col0 = np.asarray(L[keep][:, [0]].todense()).ravel()
    try:
        lu = splu(L_red)
    except RuntimeError as exc:
        raise SolveError(f"singular ARAP system: {exc}") from exc

    uv = init.uv.copy()
    pin = uv[0].copy()
    history = [arap_energy(mesh, frames, cots, uv)]
    for _ in range(max_iters):
        rot = _fit_rotations(t, frames, cots, uv)
        rhs = np.zeros((n, 2))
        for k in range(3):
            i, j = k, (k + 1) % 3
            e_x = frames[:, i] - frames[:, j]
            e_rot = np.einsum("nab,nb->na", rot, e_x)
            w = cots[:, k, None] * e_rot
            np.add.at(rhs, t[:, i], w)
            np.add.at(rhs, t[:, j], -w)
        b = rhs[keep] - np.outer(L_col0, pin)
        sol = np.column_stack([lu.solve(b[:, 0]), lu.solve(b[:, 1])])
        uv_new = uv.copy()
        uv_new[keep] = sol
        uv_new[0] = pin
        e = arap_energy(mesh, frames, cots, uv_new)
        if not np.isfinite(e):
            raise NonFiniteError("ARAP energy became non-finite")
        uv = uv_new
        history.append(e)
        prev = history[-2]
        if prev - e < tol * max(abs(prev), 1e-30):
            break
    return Param2D(uv=uv, frames=frames, energy_history=history)


def parameterize(mesh: TargetMesh, max_iters: int = 100, tol: float = 1e-7) -> Param2D:
    """Tutte init followed by ARAP; the standard pre-processing call."""
    return arap_parameterize(mesh, tutte_embed(mesh), max_iters=max_iters, tol=tol)


def save_uv_obj(mesh: TargetMesh, p: Param2D, path) -> None:
    """Debug dump: the parameterized mesh as an OBJ at z = 0."""
    from .mesh import save_mesh
    flat = np.column_stack([p.uv, np.zeros(len(p.uv))])
    save_mesh((flat, mesh.triangles), path, format="OBJ")
