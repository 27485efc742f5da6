"""Physical flat-plate geometry: tiles, connectors, exports, print recipe.

Tiles are the target-mesh triangles thickened on both sides along the
vertex normals (beveled frustums whose lateral walls encode the target
dihedral angles), placed rigidly onto the 2D layout. Connector notches
are carved as channels in the mid band of each tile: the cross-section
is clipped in 2D, the solid is assembled as a straight prism, and the
bevel is applied afterwards as a per-vertex deformation that keeps every
wall on the exact ruled surface shared with the neighboring tile. One
rectangular connector bar per retained linkage runs centroid to
centroid. Cut linkages get interlock annotations instead of connectors.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._geom import (clip_polygon_halfplane, point_in_halfplanes, polygon_area,
                    rect_halfplanes, segment_clip_params, subtract_convex,
                    subtract_intervals)
from .errors import GeometryError, IoError
from .flatten import Layout, LinkState
from .mesh import TargetMesh

# Vertices closer than this are identified when assembling a solid (mm).
WELD_TOL = 1e-7


@dataclass
class PlateParams:
    """Structural and print parameters of the flat plate.

    ``connector_width`` defaults to 0.3 of the mean rest edge length when
    left as None. ``clearance`` is the printed air gap between connector
    and tile walls.
    """

    tile_thickness: float = 2.4
    connector_thickness: float = 0.8
    connector_width: float | None = None
    clearance: float = 0.36
    shrink_rate_limit: float = 0.14

    def __post_init__(self):
        if not self.tile_thickness > self.connector_thickness > 0:
            raise GeometryError("need tile_thickness > connector_thickness > 0")
        if self.clearance < 0:
            raise GeometryError("clearance must be non-negative")
        if not 0.0 < self.shrink_rate_limit < 1.0:
            raise GeometryError("shrink_rate_limit must lie in (0, 1)")

    def resolved_width(self, avg_edge: float, layout: "Layout" = None,
                       mesh: "TargetMesh" = None) -> float:
        if self.connector_width is not None:
            return self.connector_width
        width = 0.3 * avg_edge
        if layout is not None:
            feasible = max_connector_width(layout, self, mesh)
            width = min(width, feasible)
        return width


@dataclass
class PrintRecipe:
    """Printer settings; connector layers are thin and fast so they keep
    shrink tension, tile layers are thick so they stay put."""

    connector_layer_h: float = 0.06
    tile_layer_h: float = 0.3
    connector_speed: float = 100.0
    tile_speed: float = 100.0
    activation: str = "water, 75-85 C, >= 1 min"
    connector_fill: str = "concentric, paths along the shrink axis"
    notes: tuple = ()

    def lines(self) -> list:
        out = [
            f"connector_layer_h_mm={self.connector_layer_h!r}",
            f"tile_layer_h_mm={self.tile_layer_h!r}",
            f"connector_speed_mm_s={self.connector_speed!r}",
            f"tile_speed_mm_s={self.tile_speed!r}",
            f"activation={self.activation}",
            f"connector_fill={self.connector_fill}",
        ]
        for i, note in enumerate(self.notes):
            out.append(f"note_{i}={note}")
        return out


def print_recipe(pp: PlateParams, tile_layer_h: float = 0.3,
                 tile_speed: float = 100.0,
                 connector_layer_h: float = 0.06,
                 connector_speed: float = 100.0) -> PrintRecipe:
    """Build the print recipe; overrides allowed, defaults are the values
    that keep connectors shrinkable and tiles rigid."""
    notes = []
    if tile_speed != 100.0:
        notes.append("tile speed >= 80 mm/s suffices to keep tiles from shrinking")
    if tile_layer_h < 0.24:
        notes.append("tile layer height >= 0.24 mm recommended to avoid tile shrink")
    return PrintRecipe(connector_layer_h=connector_layer_h,
                       tile_layer_h=tile_layer_h,
                       connector_speed=connector_speed,
                       tile_speed=tile_speed,
                       notes=tuple(notes))


@dataclass
class Solid:
    name: str
    vertices: np.ndarray
    faces: np.ndarray


@dataclass
class Tile(Solid):
    tri: int = 0
    rotation: np.ndarray = None   # world = rotation @ (p3 - origin3) + offset
    origin3: np.ndarray = None
    offset: np.ndarray = None
    mid_triangle: np.ndarray = None      # (3, 2) placed mid-plane corners
    wall_corners: dict = field(default_factory=dict)  # edge -> (4, 3) world

    def fold_back(self, pts: np.ndarray) -> np.ndarray:
        """Map world points back onto the target shell (inverse placement)."""
        return (self.rotation.T @ (np.atleast_2d(pts) - self.offset).T).T + self.origin3


@dataclass
class FlatPlate:
    tiles: list
    connectors: list
    connector_linkage_ids: list
    interlock_annotations: list   # (linkage id, 2D midpoint)
    recipe: PrintRecipe
    params: PlateParams
    avg_edge: float
    warnings: list = field(default_factory=list)


def max_connector_width(layout: Layout, pp: PlateParams,
                        mesh: TargetMesh = None) -> float:
    """Widest connector whose notch fits every non-cut linkage edge.

    For each side of each linkage, the channel mouth must stay strictly
    inside the crossed edge; the bound follows from the crossing angle
    and the distance of the crossing point to the edge ends. When the
    mesh is available the per-tile bevel shear padding is included, which
    makes the bound exact enough for steep shells; a 0.85 safety factor
    covers the rest.
    """
    s = pp.clearance
    best = math.inf
    c = layout.coords
    pads: dict = {}

    def tile_pad(tri: int) -> float:
        if mesh is None:
            return 0.0
        if tri not in pads:
            _, _, _, _, normals = _placement(layout, mesh, tri)
            cz = normals[:, 2]
            if np.any(cz < 0.2):
                raise GeometryError(
                    f"tile {tri}: vertex normal nearly parallel to the face")
            band = (pp.connector_thickness / 2.0 + s) / float(cz.min())
            pads[tri] = band * float(np.linalg.norm(normals[:, :2], axis=1).max())
        return pads[tri]

    for l in layout.linkages:
        if l.state is LinkState.CUT:
            continue
        ca = c[l.tri_a].mean(axis=0)
        cb = c[l.tri_b].mean(axis=0)
        axis = cb - ca
        nrm = float(np.linalg.norm(axis))
        if nrm < 1e-12:
            continue
        axis = axis / nrm
        for tri, slot in ((l.tri_a, l.slot_i), (l.tri_b, l.slot_k)):
            k = slot % 3
            p = c[tri, k]
            q = c[tri, (k + 1) % 3]
            origin = c[tri].mean(axis=0)
            d = q - p
            den = axis[0] * d[1] - axis[1] * d[0]
            if abs(den) < 1e-12:
                continue  # axis parallel to the edge: no usable crossing
            rel = origin - p
            t_star = (axis[0] * rel[1] - axis[1] * rel[0]) / den
            edge_len = float(np.linalg.norm(d))
            sin_theta = abs(den) / edge_len
            room = min(t_star, 1.0 - t_star) * edge_len
            if room <= 0:
                continue
            halfwidth = 0.85 * room * sin_theta - s - tile_pad(tri)
            best = min(best, 2.0 * halfwidth)
    if not math.isfinite(best):
        return 0.3 * layout.avg_edge
    if best <= 0:
        raise GeometryError(
            "no feasible connector width: a linkage edge is too small")
    return best


# ---------------------------------------------------------------------------
# Tile placement


def _placement(layout: Layout, mesh: TargetMesh, tri: int):
    """Best-fit rigid transform carrying the 3D triangle onto its layout copy.

    Returns (rotation, origin3, offset, mid_triangle, corner_normals) where
    ``mid_triangle`` are the placed (near-coincident with the layout)
    corners and ``corner_normals`` the vertex normals in world coordinates.
    """
    mt = int(layout.source_tris[tri])
    idx = mesh.triangles[mt]
    x3 = mesh.vertices[idx]
    n3 = mesh.vertex_normals[idx]
    o3 = x3.mean(axis=0)
    e1 = x3[1] - x3[0]
    e1 = e1 / np.linalg.norm(e1)
    nf = np.cross(x3[1] - x3[0], x3[2] - x3[0])
    nrm = np.linalg.norm(nf)
    if nrm < 1e-14:
        raise GeometryError(f"degenerate source triangle {mt}")
    nf = nf / nrm
    e2 = np.cross(nf, e1)
    frame = np.stack([e1, e2, nf])            # rows: local axes
    q = (x3 - o3) @ frame.T                   # local coords, z = 0
    u = layout.coords[tri]
    c2 = u.mean(axis=0)
    uc = u - c2
    # 2D Kabsch, rotation only
    a = float(np.sum(uc[:, 0] * q[:, 0] + uc[:, 1] * q[:, 1]))
    b = float(np.sum(uc[:, 1] * q[:, 0] - uc[:, 0] * q[:, 1]))
    r = math.hypot(a, b)
    if r < 1e-14:
        ca, sa = 1.0, 0.0
    else:
        ca, sa = a / r, b / r
    rot2 = np.array([[ca, -sa], [sa, ca]])
    rotation = np.zeros((3, 3))
    rotation[:2, :2] = rot2
    rotation[2, 2] = 1.0
    rotation = rotation @ frame               # mesh space -> world
    offset = np.array([c2[0], c2[1], 0.0])
    mid = (rotation @ (x3 - o3).T).T + offset
    normals = (rotation @ n3.T).T
    return rotation, o3, offset, mid[:, :2], normals


def _linkage_edges(layout: Layout):
    """Map (triangle, edge slot) -> linkage for non-cut bookkeeping."""
    out = {}
    for l in layout.linkages:
        out[(l.tri_a, l.slot_i % 3)] = l
        out[(l.tri_b, l.slot_k % 3)] = l
    return out


def _tri_centroid(layout: Layout, tri: int) -> np.ndarray:
    return layout.coords[tri].mean(axis=0)


# ---------------------------------------------------------------------------
# Solid assembly helpers


class _SolidBuilder:
    """Indexed face soup with vertex welding and T-junction noding.

    2D construction points are registered in a pool; when a face is
    emitted, extra pool points lying on its horizontal edges are inserted
    so that abutting faces always share whole edges (watertightness).
    """

    def __init__(self):
        self.verts: list = []
        self.index: dict = {}
        self.faces: list = []
        self.pool: list = []
        self.pool_index: dict = {}

    def register(self, p2) -> None:
        key = (round(p2[0] / WELD_TOL), round(p2[1] / WELD_TOL))
        if key not in self.pool_index:
            self.pool_index[key] = len(self.pool)
            self.pool.append((float(p2[0]), float(p2[1])))

    def _node_edge(self, p, q):
        """Pool points strictly inside segment p->q (2D), ordered."""
        px, py = p[0], p[1]
        dx, dy = q[0] - px, q[1] - py
        L2 = dx * dx + dy * dy
        if L2 < WELD_TOL ** 2:
            return []
        L = math.sqrt(L2)
        found = []
        for x, y in self.pool:
            t = ((x - px) * dx + (y - py) * dy) / L2
            if t <= WELD_TOL / L or t >= 1.0 - WELD_TOL / L:
                continue
            off = abs((x - px) * dy - (y - py) * dx) / L
            if off <= WELD_TOL:
                found.append((t, x, y))
        found.sort()
        return [(x, y) for _, x, y in found]

    def vid(self, p) -> int:
        key = (round(p[0] / WELD_TOL), round(p[1] / WELD_TOL), round(p[2] / WELD_TOL))
        if key not in self.index:
            self.index[key] = len(self.verts)
            self.verts.append((float(p[0]), float(p[1]), float(p[2])))
        return self.index[key]

    def raw_tri(self, p0, p1, p2) -> None:
        a, b, c = self.vid(p0), self.vid(p1), self.vid(p2)
        if a != b and b != c and c != a:
            self.faces.append((a, b, c))

    def face(self, poly3) -> None:
        """Emit a planar face, noding horizontal edges against the pool.

        ``poly3`` is a 3D polygon whose edges are either horizontal
        (constant z: noded in 2D) or vertical (left untouched). The noded
        polygon is triangulated by a centroid fan.
        """
        noded = []
        n = len(poly3)
        for i in range(n):
            p, q = poly3[i], poly3[(i + 1) % n]
            noded.append(p)
            if abs(p[2] - q[2]) <= WELD_TOL:
                for x, y in self._node_edge(p, q):
                    noded.append((x, y, p[2]))
        center = np.mean(np.asarray(noded), axis=0)
        m = len(noded)
        for i in range(m):
            self.raw_tri(tuple(center), noded[i], noded[(i + 1) % m])

    def build(self, name: str) -> Solid:
        return Solid(name, np.array(self.verts, dtype=float),
                     np.array(self.faces, dtype=np.int64))


def solid_volume(solid: Solid) -> float:
    """Signed volume via the divergence theorem."""
    v = solid.vertices
    f = solid.faces
    p0, p1, p2 = v[f[:, 0]], v[f[:, 1]], v[f[:, 2]]
    return float(np.einsum("ij,ij->i", p0, np.cross(p1, p2)).sum() / 6.0)


def is_watertight(solid: Solid) -> bool:
    """Every undirected edge used exactly twice, in opposite directions."""
    directed: dict = {}
    for a, b, c in solid.faces:
        for u, w in ((a, b), (b, c), (c, a)):
            key = (int(u), int(w))
            if key in directed:
                return False
            directed[key] = True
    for u, w in directed:
        if (w, u) not in directed:
            return False
    return True


# ---------------------------------------------------------------------------
# Tiles


def generate_tiles(layout: Layout, mesh: TargetMesh, pp: PlateParams):
    """Beveled frustum tiles with connector notches, one per layout triangle."""
    width = pp.resolved_width(layout.avg_edge, layout)
    link_of_edge = _linkage_edges(layout)
    tiles = []
    for tri in range(layout.n_triangles):
        tiles.append(_generate_tile(layout, mesh, pp, tri, width, link_of_edge))
    return tiles


def _generate_tile(layout: Layout, mesh: TargetMesh, pp: PlateParams,
                   tri: int, width: float, link_of_edge: dict) -> Tile:
    rotation, o3, offset, mid, normals = _placement(layout, mesh, tri)
    half = pp.tile_thickness / 2.0
    g = normals[:, :2]            # horizontal bevel slopes
    c = normals[:, 2]             # vertical components
    if np.any(c < 0.2):
        raise GeometryError(
            f"tile {tri}: vertex normal nearly parallel to the face; "
            f"tile_thickness exceeds local feature size")
    s = pp.clearance

    area2 = (mid[1, 0] - mid[0, 0]) * (mid[2, 1] - mid[0, 1]) \
        - (mid[1, 1] - mid[0, 1]) * (mid[2, 0] - mid[0, 0])
    if area2 <= 0:
        raise GeometryError(f"tile {tri}: degenerate or flipped placement")

    # triangle halfplanes (outward normals), CCW corners
    tri_planes = []
    for k in range(3):
        pE, qE = mid[k], mid[(k + 1) % 3]
        d = qE - pE
        n = np.array([d[1], -d[0]])
        n = n / np.linalg.norm(n)
        tri_planes.append(((float(pE[0]), float(pE[1])), (float(n[0]), float(n[1]))))

    centroid = mid.mean(axis=0)
    notch_edges = []
    for k in range(3):
        l = link_of_edge.get((tri, k))
        if l is not None and l.state is not LinkState.CUT:
            notch_edges.append((k, l))

    def notch_rects(halfwidth, strict):
        rects = {}
        mouths: dict = {k: [] for k in range(3)}
        for k, l in notch_edges:
            other = l.tri_b if l.tri_a == tri else l.tri_a
            target = _tri_centroid(layout, other)
            axis = target - centroid
            dist = float(np.linalg.norm(axis))
            if dist < 1e-12:
                raise GeometryError(
                    f"linkage {l.id}: adjacent tile centroids coincide")
            axis = axis / dist
            t_far = 2.0 * float(np.max(np.linalg.norm(
                layout.coords[tri] - centroid, axis=1)))
            planes = rect_halfplanes(centroid, axis, 0.0, t_far, halfwidth)
            # the channel must cross its own edge cleanly and no other edge
            span = segment_clip_params(mid[k], mid[(k + 1) % 3], planes)
            if span is None or span[1] - span[0] < 1e-9:
                if strict:
                    raise GeometryError(
                        f"tile {tri}: connector channel misses edge {k}")
                span = (0.0, 1.0)
            elif strict and (span[0] <= 1e-9 or span[1] >= 1.0 - 1e-9):
                raise GeometryError(
                    f"tile {tri}: connector too wide for edge {k} "
                    f"(width {width:.3g} mm plus clearance)")
            if strict:
                for kk in range(3):
                    if kk == k:
                        continue
                    other_span = segment_clip_params(
                        mid[kk], mid[(kk + 1) % 3], planes)
                    if other_span is not None and \
                            other_span[1] - other_span[0] > 1e-9:
                        raise GeometryError(
                            f"tile {tri}: connector channel of edge {k} "
                            f"crosses edge {kk}")
            rects[k] = planes
            mouths[k].append(span)
        return rects, mouths

    # The channel's vertical extent must clear the connector after the
    # bevel shear; the normal components are linear over the tile, so
    # their extrema over the (conservative first-pass) channel region are
    # attained at the clipped footprint vertices.
    min_c = float(c.min())
    g_norms = np.linalg.norm(g, axis=1)
    max_g = float(g_norms.max())
    if notch_edges:
        band0 = (pp.connector_thickness / 2.0 + s) / min_c
        hw0 = width / 2.0 + s + band0 * max_g
        rects0, _ = notch_rects(hw0, strict=False)
        region_pts = []
        for poly in _annulus_pieces(_SolidBuilder(), rects0, mid):
            region_pts.extend(poly)
        if region_pts:
            bary = _barycentric(mid, np.asarray(region_pts))
            min_c = float((bary @ c).min())
            max_g = float(np.linalg.norm(bary @ g, axis=1).max())
    zeta_band = (pp.connector_thickness / 2.0 + s) / min_c
    if zeta_band >= half:
        raise GeometryError(
            f"tile {tri}: connector channel ({2 * zeta_band:.3g} mm) does not fit "
            f"inside tile thickness {pp.tile_thickness:.3g} mm")
    shear_pad = zeta_band * max_g
    halfwidth = width / 2.0 + s + shear_pad
    rects, mouth_params = notch_rects(halfwidth, strict=True)

    b = _SolidBuilder()
    z0, z1, z2, z3 = -half, -zeta_band, zeta_band, half

    def at(p, z):
        return (float(p[0]), float(p[1]), float(z))

    # edge sub-intervals shared by all bands so junction edges match
    edge_cuts = {}
    for k in range(3):
        cuts = [0.0, 1.0]
        for t0, t1 in mouth_params[k]:
            cuts.extend((t0, t1))
        edge_cuts[k] = sorted(set(cuts))

    def edge_point(k, t):
        pE, qE = mid[k], mid[(k + 1) % 3]
        return pE + t * (qE - pE)

    outline = []
    for k in range(3):
        for t in edge_cuts[k][:-1]:
            outline.append(edge_point(k, t))

    # phase 1: collect all 2D construction geometry, registering points
    for p in outline:
        b.register(p)
    wall_segs = _channel_wall_segments(b, rects, tri_planes) if rects else []
    footprints = _annulus_pieces(b, rects, mid) if rects else []

    # phase 2: emit faces (noded against the pool)
    b.face([at(p, z3) for p in outline])
    b.face([at(p, z0) for p in reversed(outline)])
    for k in range(3):
        ts = edge_cuts[k]
        mouths = mouth_params[k]
        for t0, t1 in zip(ts[:-1], ts[1:]):
            p0, p1 = edge_point(k, t0), edge_point(k, t1)
            if not rects:
                b.face([at(p0, z0), at(p1, z0), at(p1, z3), at(p0, z3)])
                continue
            b.face([at(p0, z0), at(p1, z0), at(p1, z1), at(p0, z1)])
            b.face([at(p0, z2), at(p1, z2), at(p1, z3), at(p0, z3)])
            tm = 0.5 * (t0 + t1)
            in_mouth = any(m0 - 1e-12 <= tm <= m1 + 1e-12 for m0, m1 in mouths)
            if not in_mouth:
                b.face([at(p0, z1), at(p1, z1), at(p1, z2), at(p0, z2)])
    for q0, q1 in wall_segs:
        b.face([(q0[0], q0[1], z1), (q1[0], q1[1], z1),
                (q1[0], q1[1], z2), (q0[0], q0[1], z2)])
    for poly in footprints:
        b.face([(p[0], p[1], z1) for p in poly])
        b.face([(p[0], p[1], z2) for p in reversed(poly)])

    solid = b.build(f"tile_{tri:04d}")
    if not is_watertight(solid):
        raise GeometryError(f"tile {tri}: generated solid is not watertight")

    # bevel deformation: straight prism -> frustum with ruled walls
    verts = solid.vertices
    bary = _barycentric(mid, verts[:, :2])
    gv = bary @ g
    cv = bary @ c
    zeta = verts[:, 2]
    world = np.column_stack([
        verts[:, 0] + zeta * gv[:, 0],
        verts[:, 1] + zeta * gv[:, 1],
        zeta * cv,
    ])
    wall_corners = {}
    for k in range(3):
        a_c, b_c = mid[k], mid[(k + 1) % 3]
        g_a, g_b = g[k], g[(k + 1) % 3]
        c_a, c_b = c[k], c[(k + 1) % 3]
        wall_corners[k] = np.array([
            [a_c[0] - half * g_a[0], a_c[1] - half * g_a[1], -half * c_a],
            [b_c[0] - half * g_b[0], b_c[1] - half * g_b[1], -half * c_b],
            [b_c[0] + half * g_b[0], b_c[1] + half * g_b[1], half * c_b],
            [a_c[0] + half * g_a[0], a_c[1] + half * g_a[1], half * c_a],
        ])
    return Tile(solid.name, world, solid.faces, tri=tri, rotation=rotation,
                origin3=o3, offset=offset, mid_triangle=mid,
                wall_corners=wall_corners)


def _barycentric(tri2, pts):
    a, bb, cc = tri2
    v0 = bb - a
    v1 = cc - a
    den = v0[0] * v1[1] - v1[0] * v0[1]
    d = pts - a
    l1 = (d[:, 0] * v1[1] - v1[0] * d[:, 1]) / den
    l2 = (v0[0] * d[:, 1] - d[:, 0] * v0[1]) / den
    l0 = 1.0 - l1 - l2
    return np.column_stack([l0, l1, l2])


def _channel_wall_segments(b, rects, tri_planes):
    """Oriented 2D wall segments of the channel union, endpoints registered.

    Each segment is returned with the solid on its left, so the extruded
    quad winds outward.
    """
    keys = sorted(rects)
    out = []
    for k in keys:
        planes = rects[k]
        # sides: far end is outside the triangle; near end (through the
        # centroid) and the two long sides can carry walls
        corners = _rect_corners(planes)
        sides = [(corners[1], corners[2]),   # near end (t = t0 side)
                 (corners[2], corners[3]),   # long side
                 (corners[0], corners[1])]   # long side
        for p0, p1 in sides:
            span = segment_clip_params(p0, p1, tri_planes)
            if span is None:
                continue
            intervals = [span]
            for kk in keys:
                if kk == k:
                    continue
                cut = segment_clip_params(p0, p1, rects[kk])
                if cut is not None:
                    intervals = subtract_intervals(intervals, cut)
            for t0, t1 in intervals:
                if t1 - t0 < 1e-12:
                    continue
                q0 = (p0[0] + t0 * (p1[0] - p0[0]), p0[1] + t0 * (p1[1] - p0[1]))
                q1 = (p0[0] + t1 * (p1[0] - p0[0]), p0[1] + t1 * (p1[1] - p0[1]))
                d = (q1[0] - q0[0], q1[1] - q0[1])
                nrm = math.hypot(*d)
                if nrm < 1e-12:
                    continue
                n = (d[1] / nrm, -d[0] / nrm)
                eps = 1e-7
                mid_pt = (0.5 * (q0[0] + q1[0]), 0.5 * (q0[1] + q1[1]))
                probe = (mid_pt[0] - eps * n[0], mid_pt[1] - eps * n[1])
                solid_side = point_in_halfplanes(probe, tri_planes, eps=0.0) and \
                    not any(point_in_halfplanes(probe, rects[kk], eps=0.0)
                            for kk in keys)
                if not solid_side:
                    q0, q1 = q1, q0
                b.register(q0)
                b.register(q1)
                out.append((q0, q1))
    return out


def _rect_corners(planes):
    """Corners of a rect from its halfplanes, ordered around the boundary."""
    (p_far, n_far), (p_near, n_near), (p_l, n_l), (p_r, n_r) = planes

    def isect(pa, na, pb, nb):
        A = np.array([na, nb], dtype=float)
        rhs = np.array([na[0] * pa[0] + na[1] * pa[1],
                        nb[0] * pb[0] + nb[1] * pb[1]])
        return tuple(np.linalg.solve(A, rhs))

    c0 = isect(p_near, n_near, p_l, n_l)
    c1 = isect(p_near, n_near, p_r, n_r)
    c2 = isect(p_far, n_far, p_r, n_r)
    c3 = isect(p_far, n_far, p_l, n_l)
    return [c3, c0, c1, c2]  # far-left, near-left, near-right, far-right


def _annulus_pieces(b, rects, mid):
    """CCW convex polygons tiling the channel footprints, points registered."""
    keys = sorted(rects)
    tri_poly = [tuple(map(float, p)) for p in mid]
    out = []
    done = []
    for k in keys:
        piece = tri_poly
        for point, normal in rects[k]:
            piece = clip_polygon_halfplane(piece, point, normal)
        pieces = [piece] if len(piece) >= 3 else []
        for kk in done:
            nxt = []
            for pc in pieces:
                nxt.extend(subtract_convex(pc, rects[kk]))
            pieces = nxt
        done.append(k)
        for pc in pieces:
            if abs(polygon_area(pc)) < 1e-12:
                continue
            poly = pc if polygon_area(pc) > 0 else list(reversed(pc))
            for p in poly:
                b.register(p)
            out.append(poly)
    return out


# ---------------------------------------------------------------------------
# Connectors


def generate_connectors(layout: Layout, pp: PlateParams):
    """One rectangular bar per retained linkage, centroid to centroid.

    Returns (solids, linkage_ids, warnings); a warning is emitted for
    every linkage whose gap over connector length exceeds the shrink-rate
    limit.
    """
    width = pp.resolved_width(layout.avg_edge, layout)
    half_w = width / 2.0
    half_t = pp.connector_thickness / 2.0
    solids = []
    ids = []
    warnings = []
    from .flatten import gap_value
    for l in layout.linkages:
        if l.state is LinkState.CUT:
            continue
        ca = _tri_centroid(layout, l.tri_a)
        cb = _tri_centroid(layout, l.tri_b)
        axis = cb - ca
        length = float(np.linalg.norm(axis))
        if length < 1e-12:
            raise GeometryError(
                f"linkage {l.id}: adjacent tile centroids coincide")
        axis = axis / length
        perp = np.array([-axis[1], axis[0]])
        rate = gap_value(layout, l) / length
        if rate > pp.shrink_rate_limit + 1e-12:
            warnings.append(
                f"linkage {l.id}: gap rate {rate:.4f} exceeds shrink limit "
                f"{pp.shrink_rate_limit:.4f}")
        b = _SolidBuilder()
        lo = []
        hi = []
        for end, sign in ((ca, 1.0), (cb, -1.0)):
            for w in (-half_w, half_w):
                p = end + w * perp
                lo.append((p[0], p[1], -half_t))
                hi.append((p[0], p[1], half_t))
        # order corners around the bar: ca-left, ca-right, cb-right, cb-left
        quad_lo = [lo[0], lo[1], lo[3], lo[2]]
        quad_hi = [hi[0], hi[1], hi[3], hi[2]]
        if _poly_area2(quad_lo) < 0:
            quad_lo.reverse()
            quad_hi.reverse()
        b.face(list(reversed(quad_lo)))
        b.face(quad_hi)
        n = 4
        for i in range(n):
            p0, p1 = quad_lo[i], quad_lo[(i + 1) % n]
            q1, q0 = quad_hi[(i + 1) % n], quad_hi[i]
            b.face([p0, p1, q1, q0])
        solid = b.build(f"connector_{l.id:04d}")
        if not is_watertight(solid):
            raise GeometryError(f"connector {l.id}: not watertight")
        solids.append(solid)
        ids.append(l.id)
    return solids, ids, warnings


def _poly_area2(poly):
    s = 0.0
    for i in range(len(poly)):
        x0, y0 = poly[i][0], poly[i][1]
        x1, y1 = poly[(i + 1) % len(poly)][0], poly[(i + 1) % len(poly)][1]
        s += x0 * y1 - x1 * y0
    return s


def interlock_annotations(layout: Layout):
    """Midpoints of cut seams where tiles must be interlocked by hand."""
    out = []
    c = layout.coords.reshape(-1, 2)
    for l in layout.linkages:
        if l.state is not LinkState.CUT:
            continue
        mid = 0.25 * (c[l.slot_i] + c[l.slot_j] + c[l.slot_k] + c[l.slot_m])
        out.append((l.id, (float(mid[0]), float(mid[1]))))
    return out


def build_flat_plate(layout: Layout, mesh: TargetMesh,
                     pp: PlateParams | None = None,
                     recipe: PrintRecipe | None = None) -> FlatPlate:
    """Tiles + connectors + annotations + recipe in one call.

    An automatic connector width is resolved once (bevel-shear aware) and
    pinned, so tiles, connectors, drawing and clearance checks agree.
    """
    pp = pp or PlateParams()
    if pp.connector_width is None:
        from dataclasses import replace as _replace
        pp = _replace(pp, connector_width=pp.resolved_width(
            layout.avg_edge, layout, mesh))
    tiles = generate_tiles(layout, mesh, pp)
    connectors, ids, warnings = generate_connectors(layout, pp)
    return FlatPlate(tiles=tiles, connectors=connectors,
                     connector_linkage_ids=ids,
                     interlock_annotations=interlock_annotations(layout),
                     recipe=recipe or print_recipe(pp), params=pp,
                     avg_edge=layout.avg_edge, warnings=warnings)


def connector_clearances(plate: FlatPlate, layout: Layout):
    """Per-connector worst slab clearance against its two tiles (mm).

    For every tile vertex inside the connector's axis span, the margin is
    ``max(|across| - width/2, |z| - thickness/2)``; the reported value is
    the minimum. Positive margins mean no contact.
    """
    width = plate.params.resolved_width(plate.avg_edge, layout)
    half_w = width / 2.0
    half_t = plate.params.connector_thickness / 2.0
    by_id = {l.id: l for l in layout.linkages}
    tiles = {t.tri: t for t in plate.tiles}
    out = {}
    for lid in plate.connector_linkage_ids:
        l = by_id[lid]
        ca = _tri_centroid(layout, l.tri_a)
        cb = _tri_centroid(layout, l.tri_b)
        axis = cb - ca
        length = float(np.linalg.norm(axis))
        axis = axis / length
        perp = np.array([-axis[1], axis[0]])
        margin = math.inf
        for tri in (l.tri_a, l.tri_b):
            v = tiles[tri].vertices
            t_along = (v[:, :2] - ca) @ axis
            across = np.abs((v[:, :2] - ca) @ perp)
            inside = (t_along > 1e-9) & (t_along < length - 1e-9)
            if not inside.any():
                continue
            m = np.maximum(across[inside] - half_w, np.abs(v[inside, 2]) - half_t)
            margin = min(margin, float(m.min()))
        out[lid] = margin
    return out


# ---------------------------------------------------------------------------
# Exports


def export_plate_mesh(plate: FlatPlate, path, format: str | None = None) -> None:
    """All solids in one file: OBJ named groups or concatenated STL facets."""
    path = Path(path)
    fmt = (format or path.suffix.lstrip(".")).upper()
    solids = list(plate.tiles) + list(plate.connectors)
    try:
        if fmt == "OBJ":
            lines = []
            base = 1
            for s in solids:
                lines.append(f"g {s.name}")
                for x, y, z in s.vertices:
                    lines.append(f"v {float(x)!r} {float(y)!r} {float(z)!r}")
                for a, bb, cc in s.faces:
                    lines.append(f"f {base + a} {base + bb} {base + cc}")
                base += len(s.vertices)
            path.write_text("\n".join(lines) + "\n")
        elif fmt == "STL":
            total = sum(len(s.faces) for s in solids)
            parts = [b"freeshell flat plate" + b" " * 60,
                     struct.pack("<I", total)]
            for s in solids:
                v = s.vertices
                for a, bb, cc in s.faces:
                    p0, p1, p2 = v[a], v[bb], v[cc]
                    n = np.cross(p1 - p0, p2 - p0)
                    nrm = np.linalg.norm(n)
                    if nrm > 0:
                        n = n / nrm
                    parts.append(struct.pack(
                        "<12fH", n[0], n[1], n[2],
                        p0[0], p0[1], p0[2], p1[0], p1[1], p1[2],
                        p2[0], p2[1], p2[2], 0))
            path.write_bytes(b"".join(parts))
        else:
            raise IoError(f"unsupported plate format {fmt!r}")
    except OSError as exc:
        raise IoError(str(exc)) from exc


def export_layout_svg(layout: Layout, plate: FlatPlate, path) -> None:
    """Printable layout drawing: tile outlines, connector bars, cut seams,
    interlock markers and a 10 mm scale bar. Millimeter user units,
    deterministic element order."""
    pts = layout.coords.reshape(-1, 2)
    lo = pts.min(axis=0) - 5.0
    hi = pts.max(axis=0) + 5.0
    hi[1] += 8.0  # room for the scale bar
    w = float(hi[0] - lo[0])
    h = float(hi[1] - lo[1])

    def sx(x):
        return float(x - lo[0])

    def sy(y):
        return float(hi[1] - y)  # flip so +y is up

    el = []
    for t in plate.tiles:
        pts3 = t.mid_triangle
        coords = " ".join(f"{sx(p[0])!r},{sy(p[1])!r}" for p in pts3)
        el.append(f'<polygon id="tile_{t.tri:04d}" points="{coords}" '
                  f'fill="#dfe8f0" stroke="#455a64" stroke-width="0.2"/>')
    width = plate.params.resolved_width(plate.avg_edge, layout)
    by_id = {l.id: l for l in layout.linkages}
    for lid in plate.connector_linkage_ids:
        l = by_id[lid]
        ca = _tri_centroid(layout, l.tri_a)
        cb = _tri_centroid(layout, l.tri_b)
        mid = 0.5 * (ca + cb)
        length = float(np.linalg.norm(cb - ca))
        ang = math.degrees(math.atan2(-(cb[1] - ca[1]), cb[0] - ca[0]))
        el.append(
            f'<rect id="connector_{lid:04d}" x="{sx(mid[0]) - length / 2!r}" '
            f'y="{sy(mid[1]) - width / 2!r}" width="{length!r}" height="{width!r}" '
            f'transform="rotate({ang!r} {sx(mid[0])!r} {sy(mid[1])!r})" '
            f'fill="#ffb74d" stroke="#e65100" stroke-width="0.15"/>')
    c = layout.coords.reshape(-1, 2)
    for lid, (mx, my) in plate.interlock_annotations:
        l = by_id[lid]
        pa = 0.5 * (c[l.slot_i] + c[l.slot_j])
        pb = 0.5 * (c[l.slot_k] + c[l.slot_m])
        el.append(
            f'<line id="cut_{lid:04d}" x1="{sx(pa[0])!r}" y1="{sy(pa[1])!r}" '
            f'x2="{sx(pb[0])!r}" y2="{sy(pb[1])!r}" stroke="#c62828" '
            f'stroke-width="0.3" stroke-dasharray="1.2,0.8"/>')
        el.append(
            f'<circle id="interlock_{lid:04d}" cx="{sx(mx)!r}" cy="{sy(my)!r}" '
            f'r="1.0" fill="none" stroke="#c62828" stroke-width="0.25"/>')
    bar_y = sy(lo[1] + 3.0)
    el.append(f'<line id="scalebar" x1="{2.0!r}" y1="{bar_y!r}" '
              f'x2="{12.0!r}" y2="{bar_y!r}" stroke="#000" stroke-width="0.5"/>')
    el.append(f'<text id="scalebar_label" x="{2.0!r}" y="{bar_y - 1.5!r}" '
              f'font-size="2.5" font-family="sans-serif">10 mm</text>')

    svg = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
        f'width="{w!r}mm" height="{h!r}mm" viewBox="0 0 {w!r} {h!r}">',
        *el,
        "</svg>",
    ]
    try:
        Path(path).write_text("\n".join(svg) + "\n")
    except OSError as exc:
        raise IoError(str(exc)) from exc


def write_recipe(recipe: PrintRecipe, path) -> None:
    try:
        Path(path).write_text("\n".join(recipe.lines()) + "\n")
    except OSError as exc:
        raise IoError(str(exc)) from exc


def write_interlocks(plate: FlatPlate, path) -> None:
    lines = [f"interlock linkage={lid} x_mm={x!r} y_mm={y!r}"
             for lid, (x, y) in plate.interlock_annotations]
    try:
        Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))
    except OSError as exc:
        raise IoError(str(exc)) from exc
