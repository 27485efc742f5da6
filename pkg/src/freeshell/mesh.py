"""Indexed triangle meshes: representation, validation, file I/O, adjacency.

The pipeline operates on shells with disk topology (optional interior
holes). Meshes are validated on construction: edge-manifold, consistently
oriented, a single connected component, and at least one boundary loop.
Closed surfaces are rejected because flattening requires a boundary.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import IoError, ParseError, TopologyError

# Vertices closer than this are merged when loading STL soup (mm).
STL_MERGE_TOL = 1e-5


@dataclass
class TargetMesh:
    """Immutable indexed triangle mesh of the goal shell.

    Attributes
    ----------
    vertices : (n, 3) float array
        Vertex positions in millimeters.
    triangles : (m, 3) int array
        Vertex index triples, consistently oriented.
    vertex_normals : (n, 3) float array
        Unit area-weighted vertex normals.
    boundary_flags : (n,) bool array
        True for vertices on a boundary loop.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    vertex_normals: np.ndarray = field(repr=False, default=None)
    boundary_flags: np.ndarray = field(repr=False, default=None)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)


@dataclass
class EdgeAdjacency:
    """Unique-edge table of a mesh.

    ``edges`` maps each unordered vertex pair to the triangles containing
    it; ``interior_edges`` indexes the entries shared by exactly two.
    """

    edges: list  # list of ((u, v), [tri ids]) with u < v
    interior_edges: list  # indices into ``edges``

    def edge_index(self) -> dict:
        return {pair: i for i, (pair, _) in enumerate(self.edges)}


@dataclass
class EdgeStats:
    avg: float
    min: float
    max: float
    count: int


def make_mesh(vertices, triangles, validate: bool = True) -> TargetMesh:
    """Build a validated TargetMesh from raw arrays.

    Computes area-weighted vertex normals and boundary flags. Raises
    TopologyError when the surface is not an oriented manifold disk
    (with optional holes) or has no boundary.
    """
    v = np.asarray(vertices, dtype=float).reshape(-1, 3)
    t = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
    if validate:
        _validate_topology(v, t)
    normals = _vertex_normals(v, t)
    boundary = _boundary_flags(v, t)
    return TargetMesh(v, t, normals, boundary)


def _validate_topology(v: np.ndarray, t: np.ndarray) -> None:
    n = len(v)
    if len(t) == 0:
        raise TopologyError("mesh has no triangles")
    if t.min() < 0 or t.max() >= n:
        raise TopologyError("triangle references out-of-range vertex index")
    for k, tri in enumerate(t):
        if len(set(int(x) for x in tri)) != 3:
            raise TopologyError(f"triangle {k} repeats a vertex index")
    if not np.all(np.isfinite(v)):
        raise TopologyError("non-finite vertex coordinate")

    # Directed halfedges must be unique: catches non-manifold edges and
    # inconsistent orientation in one pass.
    seen = set()
    for k, (a, b, c) in enumerate(t):
        for u, w in ((a, b), (b, c), (c, a)):
            key = (int(u), int(w))
            if key in seen:
                raise TopologyError(
                    f"non-manifold or inconsistently oriented edge {key} "
                    f"(second use in triangle {k})")
            seen.add(key)
    undirected: dict = {}
    for u, w in seen:
        key = (u, w) if u < w else (w, u)
        undirected[key] = undirected.get(key, 0) + 1

    referenced = np.zeros(n, dtype=bool)
    referenced[t.reshape(-1)] = True
    if not referenced.all():
        idx = int(np.flatnonzero(~referenced)[0])
        raise TopologyError(f"unreferenced vertex {idx}")

    # Single connected component (over the edge graph).
    parent = list(range(n))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for (u, w) in undirected:
        ru, rw = find(u), find(w)
        if ru != rw:
            parent[ru] = rw
    roots = {find(i) for i in range(n)}
    if len(roots) != 1:
        raise TopologyError(f"mesh has {len(roots)} connected components; expected 1")

    boundary_edges = [e for e, cnt in undirected.items() if cnt == 1]
    if not boundary_edges:
        raise TopologyError("closed surface: no boundary loop exists")

    # Disk-with-holes check: Euler characteristic plus loop count must be 2.
    loops = _count_boundary_loops(t, set(boundary_edges))
    euler = n - len(undirected) + len(t)
    if euler + loops != 2:
        raise TopologyError(
            f"surface is not a disk with holes (Euler {euler}, {loops} boundary loops)")


def _boundary_halfedges(t: np.ndarray) -> dict:
    """Directed boundary halfedges (u -> w) keyed by start vertex."""
    count: dict = {}
    for a, b, c in t:
        for u, w in ((int(a), int(b)), (int(b), int(c)), (int(c), int(a))):
            key = (u, w) if u < w else (w, u)
            count[key] = count.get(key, 0) + 1
    out = {}
    for a, b, c in t:
        for u, w in ((int(a), int(b)), (int(b), int(c)), (int(c), int(a))):
            key = (u, w) if u < w else (w, u)
            if count[key] == 1:
                # traverse with the surface on the left (interior winding)
                out[u] = w
    return out


def _count_boundary_loops(t: np.ndarray, boundary_edges: set) -> int:
    nxt = _boundary_halfedges(t)
    seen = set()
    loops = 0
    for start in sorted(nxt):
        if start in seen:
            continue
        loops += 1
        cur = start
        while cur not in seen:
            seen.add(cur)
            cur = nxt[cur]
    return loops


def boundary_loops(mesh: TargetMesh) -> list:
    """Boundary loops as lists of vertex indices, deterministic order."""
    nxt = _boundary_halfedges(mesh.triangles)
    seen = set()
    loops = []
    for start in sorted(nxt):
        if start in seen:
            continue
        loop = []
        cur = start
        while cur not in seen:
            seen.add(cur)
            loop.append(cur)
            cur = nxt[cur]
        loops.append(loop)
    return loops


def _vertex_normals(v: np.ndarray, t: np.ndarray) -> np.ndarray:
    e1 = v[t[:, 1]] - v[t[:, 0]]
    e2 = v[t[:, 2]] - v[t[:, 0]]
    face = np.cross(e1, e2)  # magnitude = 2 * area, so sums are area-weighted
    out = np.zeros_like(v)
    np.add.at(out, t[:, 0], face)
    np.add.at(out, t[:, 1], face)
    np.add.at(out, t[:, 2], face)
    norms = np.linalg.norm(out, axis=1)
    if np.any(norms < 1e-14):
        idx = int(np.flatnonzero(norms < 1e-14)[0])
        raise TopologyError(f"degenerate normal at vertex {idx}")
    return out / norms[:, None]


def _boundary_flags(v: np.ndarray, t: np.ndarray) -> np.ndarray:
    count: dict = {}
    for a, b, c in t:
        for u, w in ((int(a), int(b)), (int(b), int(c)), (int(c), int(a))):
            key = (u, w) if u < w else (w, u)
            count[key] = count.get(key, 0) + 1
    flags = np.zeros(len(v), dtype=bool)
    for (u, w), cnt in count.items():
        if cnt == 1:
            flags[u] = True
            flags[w] = True
    return flags


def build_adjacency(mesh: TargetMesh) -> EdgeAdjacency:
    """Unique-edge adjacency in ascending (u, v) order."""
    per_edge: dict = {}
    for k, (a, b, c) in enumerate(mesh.triangles):
        for u, w in ((int(a), int(b)), (int(b), int(c)), (int(c), int(a))):
            key = (u, w) if u < w else (w, u)
            per_edge.setdefault(key, []).append(k)
    edges = [(pair, tris) for pair, tris in sorted(per_edge.items())]
    interior = [i for i, (_, tris) in enumerate(edges) if len(tris) == 2]
    return EdgeAdjacency(edges, interior)


def edge_statistics(mesh: TargetMesh) -> EdgeStats:
    """Length statistics over the unique-edge set (shared edges counted once)."""
    adj = build_adjacency(mesh)
    lengths = np.array([
        np.linalg.norm(mesh.vertices[u] - mesh.vertices[w])
        for (u, w), _ in adj.edges
    ])
    return EdgeStats(float(lengths.mean()), float(lengths.min()),
                     float(lengths.max()), len(lengths))


# ---------------------------------------------------------------------------
# File I/O


def load_mesh(path) -> TargetMesh:
    """Load and validate an OBJ or STL shell mesh.

    Faces with more than three vertices are fan-triangulated. STL soup is
    merged with a fixed 1e-5 mm vertex tolerance so loading stays
    deterministic.
    """
    path = Path(path)
    if not path.exists():
        raise IoError(f"no such file: {path}")
    suffix = path.suffix.lower()
    if suffix == ".obj":
        v, t = _read_obj(path)
        return make_mesh(v, t)
    if suffix == ".stl":
        tris = _read_stl(path)
        v, t = _merge_soup(tris, STL_MERGE_TOL)
        return make_mesh(v, t)
    raise ParseError(f"unsupported mesh format: {path.suffix!r}")


def save_mesh(mesh, path, format: str | None = None) -> None:
    """Write a mesh (TargetMesh or (vertices, triangles) pair) to OBJ or STL.

    OBJ coordinates are written with shortest round-trip precision, so an
    OBJ round-trip reproduces coordinates exactly. Binary STL is limited
    to float32 by the format.
    """
    if isinstance(mesh, TargetMesh):
        v, t = mesh.vertices, mesh.triangles
    else:
        v, t = mesh
        v = np.asarray(v, dtype=float).reshape(-1, 3)
        t = np.asarray(t, dtype=np.int64).reshape(-1, 3)
    path = Path(path)
    fmt = (format or path.suffix.lstrip(".")).upper()
    try:
        if fmt == "OBJ":
            _write_obj(v, t, path)
        elif fmt == "STL":
            _write_stl(v, t, path)
        else:
            raise ParseError(f"unsupported mesh format: {fmt!r}")
    except OSError as exc:
        raise IoError(str(exc)) from exc


def _read_obj(path: Path):
    verts = []
    faces = []
    try:
        text = path.read_text()
    except OSError as exc:
        raise IoError(str(exc)) from exc
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        tag = parts[0]
        if tag == "v":
            if len(parts) < 4:
                raise ParseError(f"{path.name}:{lineno}: vertex needs 3 coordinates")
            try:
                verts.append([float(parts[1]), float(parts[2]), float(parts[3])])
            except ValueError as exc:
                raise ParseError(f"{path.name}:{lineno}: bad vertex coordinate") from exc
        elif tag == "f":
            if len(parts) < 4:
                raise ParseError(f"{path.name}:{lineno}: face needs at least 3 vertices")
            idx = []
            for token in parts[1:]:
                head = token.split("/")[0]
                try:
                    i = int(head)
                except ValueError as exc:
                    raise ParseError(f"{path.name}:{lineno}: bad face index {token!r}") from exc
                if i < 0:
                    i = len(verts) + i + 1
                if i < 1:
                    raise ParseError(f"{path.name}:{lineno}: face index out of range")
                idx.append(i - 1)
            for k in range(1, len(idx) - 1):
                faces.append([idx[0], idx[k], idx[k + 1]])
        # other records (vn, vt, o, g, s, usemtl, ...) are ignored
    if not verts:
        raise ParseError(f"{path.name}: no vertices found")
    if not faces:
        raise ParseError(f"{path.name}: no faces found")
    return np.array(verts, dtype=float), np.array(faces, dtype=np.int64)


def _write_obj(v: np.ndarray, t: np.ndarray, path: Path) -> None:
    lines = []
    for x, y, z in v:
        lines.append(f"v {float(x)!r} {float(y)!r} {float(z)!r}")
    for a, b, c in t:
        lines.append(f"f {a + 1} {b + 1} {c + 1}")
    path.write_text("\n".join(lines) + "\n")


def _read_stl(path: Path):
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise IoError(str(exc)) from exc
    if len(data) < 84:
        # too short for binary; maybe a tiny ASCII file
        return _parse_stl_ascii(data, path)
    if data[:5] == b"solid" and b"facet" in data[:2048]:
        return _parse_stl_ascii(data, path)
    (count,) = struct.unpack_from("<I", data, 80)
    expected = 84 + 50 * count
    if expected != len(data):
        raise ParseError(f"{path.name}: binary STL length mismatch "
                         f"({len(data)} bytes, {count} facets)")
    tris = np.frombuffer(data, dtype=np.uint8, count=50 * count, offset=84)
    tris = tris.reshape(count, 50)[:, :48].copy().view("<f4").reshape(count, 4, 3)
    return np.array(tris[:, 1:, :], dtype=float)  # drop the normal record


def _parse_stl_ascii(data: bytes, path: Path):
    try:
        text = data.decode("ascii", errors="replace")
    except Exception as exc:  # pragma: no cover - decode with replace never raises
        raise ParseError(f"{path.name}: undecodable STL") from exc
    tris = []
    current = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        parts = raw.split()
        if not parts:
            continue
        if parts[0] == "vertex":
            if len(parts) < 4:
                raise ParseError(f"{path.name}:{lineno}: vertex needs 3 coordinates")
            current.append([float(parts[1]), float(parts[2]), float(parts[3])])
        elif parts[0] == "endfacet":
            if len(current) != 3:
                raise ParseError(f"{path.name}:{lineno}: facet with {len(current)} vertices")
            tris.append(current)
            current = []
    if not tris:
        raise ParseError(f"{path.name}: no facets found")
    return np.array(tris, dtype=float)


def _write_stl(v: np.ndarray, t: np.ndarray, path: Path) -> None:
    header = b"freeshell binary stl" + b" " * 60
    parts = [header, struct.pack("<I", len(t))]
    for a, b, c in t:
        p0, p1, p2 = v[a], v[b], v[c]
        n = np.cross(p1 - p0, p2 - p0)
        norm = np.linalg.norm(n)
        if norm > 0:
            n = n / norm
        parts.append(struct.pack("<12fH",
                                 n[0], n[1], n[2],
                                 p0[0], p0[1], p0[2],
                                 p1[0], p1[1], p1[2],
                                 p2[0], p2[1], p2[2], 0))
    path.write_bytes(b"".join(parts))


def _merge_soup(tris: np.ndarray, tol: float):
    """Index a triangle soup, merging vertices on a tol-sized grid."""
    verts = []
    index: dict = {}
    faces = []
    for tri in tris:
        idx = []
        for p in tri:
            key = (round(p[0] / tol), round(p[1] / tol), round(p[2] / tol))
            if key not in index:
                index[key] = len(verts)
                verts.append(p)
            idx.append(index[key])
        if len(set(idx)) == 3:
            faces.append(idx)
    if not faces:
        raise ParseError("STL soup collapsed to nothing at merge tolerance")
    return np.array(verts, dtype=float), np.array(faces, dtype=np.int64)
