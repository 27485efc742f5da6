"""Low-level geometric primitives shared by several modules.

Everything here is plain numpy on small arrays; no module state.
"""
from __future__ import annotations

from fractions import Fraction

import numpy as np

# Error bound factor for the orient2d floating-point filter (Shewchuk-style).
_ORIENT_ERRBOUND = (3.0 + 16.0 * np.finfo(float).eps) * np.finfo(float).eps


def orient2d(a, b, c) -> int:
    """Sign of the signed area of triangle (a, b, c).

    Returns +1 for counterclockwise, -1 for clockwise, 0 for collinear.
    A floating-point filter handles the common case; near-degenerate
    inputs fall back to exact rational arithmetic, so the sign is always
    correct for float inputs.
    """
    detleft = (a[0] - c[0]) * (b[1] - c[1])
    detright = (a[1] - c[1]) * (b[0] - c[0])
    det = detleft - detright
    detsum = abs(detleft) + abs(detright)
    if abs(det) > _ORIENT_ERRBOUND * detsum:
        return 1 if det > 0 else -1
    # Exact fallback: floats are rationals, Fraction arithmetic is exact.
    ax, ay = Fraction(float(a[0])), Fraction(float(a[1]))
    bx, by = Fraction(float(b[0])), Fraction(float(b[1]))
    cx, cy = Fraction(float(c[0])), Fraction(float(c[1]))
    det = (ax - cx) * (by - cy) - (ay - cy) * (bx - cx)
    if det > 0:
        return 1
    if det < 0:
        return -1
    return 0


def triangle_area2(tri) -> float:
    """Twice the signed area of a 2D triangle given as a (3, 2) array."""
    a, b, c = tri
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


def triangles_overlap(t1, t2) -> bool:
    """True iff two 2D triangles intersect with positive area.

    Shared edges, shared vertices and mere touching do not count. Uses a
    separating-axis test over the edge lines of both triangles with exact
    orientation predicates, so the answer does not depend on round-off.
    """
    t1 = [tuple(map(float, p)) for p in t1]
    t2 = [tuple(map(float, p)) for p in t2]
    if orient2d(*t1) == 0 or orient2d(*t2) == 0:
        return False  # degenerate triangles have no interior
    if orient2d(*t1) < 0:
        t1 = [t1[0], t1[2], t1[1]]
    if orient2d(*t2) < 0:
        t2 = [t2[0], t2[2], t2[1]]
    for poly, other in ((t1, t2), (t2, t1)):
        for i in range(3):
            p, q = poly[i], poly[(i + 1) % 3]
            # Edge line of a CCW polygon: interior is strictly left.
            if all(orient2d(p, q, v) <= 0 for v in other):
                return False
    return True


def closest_point_on_triangle(p, a, b, c):
    """Closest point to ``p`` on triangle (a, b, c) in 3D.

    Classic Voronoi-region case analysis; exact for all vertex, edge and
    face regions. Returns the closest point as an array.
    """
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = float(np.dot(ab, ap))
    d2 = float(np.dot(ac, ap))
    if d1 <= 0.0 and d2 <= 0.0:
        return a
    bp = p - b
    d3 = float(np.dot(ab, bp))
    d4 = float(np.dot(ac, bp))
    if d3 >= 0.0 and d4 <= d3:
        return b
    vc = d1 * d4 - d3 * d2
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        denom = d1 - d3
        v = d1 / denom if denom != 0.0 else 0.0
        return a + v * ab
    cp = p - c
    d5 = float(np.dot(ab, cp))
    d6 = float(np.dot(ac, cp))
    if d6 >= 0.0 and d5 <= d6:
        return c
    vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        denom = d2 - d6
        w = d2 / denom if denom != 0.0 else 0.0
        return a + w * ac
    va = d3 * d6 - d5 * d4
    if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        denom = (d4 - d3) + (d5 - d6)
        w = (d4 - d3) / denom if denom != 0.0 else 0.0
        return b + w * (c - b)
    denom = va + vb + vc
    if denom == 0.0:
        return a
    v = vb / denom
    w = vc / denom
    return a + ab * v + ac * w


def clip_polygon_halfplane(poly, point, normal, eps=0.0):
    """Clip a convex polygon to the halfplane ``normal . (x - point) <= eps``.

    ``poly`` is a list of 2D points (CCW or CW, orientation preserved).
    Returns a possibly empty list of points.
    """
    if not poly:
        return []
    out = []
    n = len(poly)
    px, py = float(point[0]), float(point[1])
    nx, ny = float(normal[0]), float(normal[1])

    def side(v):
        return nx * (v[0] - px) + ny * (v[1] - py)

    for i in range(n):
        cur = poly[i]
        nxt = poly[(i + 1) % n]
        sc, sn = side(cur), side(nxt)
        if sc <= eps:
            out.append(cur)
            if sn > eps:
                t = (eps - sc) / (sn - sc)
                out.append((cur[0] + t * (nxt[0] - cur[0]),
                            cur[1] + t * (nxt[1] - cur[1])))
        elif sn <= eps:
            t = (eps - sc) / (sn - sc)
            out.append((cur[0] + t * (nxt[0] - cur[0]),
                        cur[1] + t * (nxt[1] - cur[1])))
    return _drop_repeats(out)


def _drop_repeats(poly, tol=1e-12):
    if not poly:
        return []
    out = [poly[0]]
    for p in poly[1:]:
        if abs(p[0] - out[-1][0]) > tol or abs(p[1] - out[-1][1]) > tol:
            out.append(p)
    if len(out) > 1 and abs(out[0][0] - out[-1][0]) <= tol and abs(out[0][1] - out[-1][1]) <= tol:
        out.pop()
    return out


def convex_clip(poly, halfplanes):
    """Clip a convex polygon against a list of (point, normal) halfplanes."""
    for point, normal in halfplanes:
        poly = clip_polygon_halfplane(poly, point, normal)
        if len(poly) < 3:
            return []
    return poly


def subtract_convex(piece, halfplanes):
    """Decompose ``piece`` minus the convex region ``∩ {n.(x-p) <= 0}``.

    Returns a list of disjoint convex polygons covering piece \\ region.
    Standard halfplane peeling: for each halfplane H of the region, emit
    the part of the remainder outside H, keep clipping the rest.
    """
    outside = []
    rest = list(piece)
    for point, normal in halfplanes:
        if len(rest) < 3:
            break
        neg = (-normal[0], -normal[1])
        out_part = clip_polygon_halfplane(rest, point, neg)
        if len(out_part) >= 3 and abs(polygon_area(out_part)) > 1e-14:
            outside.append(out_part)
        rest = clip_polygon_halfplane(rest, point, normal)
    return outside


def polygon_area(poly) -> float:
    """Signed area of a simple polygon."""
    s = 0.0
    n = len(poly)
    for i in range(n):
        x0, y0 = poly[i]
        x1, y1 = poly[(i + 1) % n]
        s += x0 * y1 - x1 * y0
    return 0.5 * s


def rect_halfplanes(center, axis, t0, t1, halfwidth):
    """Halfplanes of an oriented rectangle.

    The rectangle spans ``t in [t0, t1]`` along unit ``axis`` from
    ``center`` and ``|u| <= halfwidth`` across it. Returned as
    (point, outward_normal) pairs for use with the clippers above.
    """
    ax, ay = float(axis[0]), float(axis[1])
    cx, cy = float(center[0]), float(center[1])
    perp = (-ay, ax)
    return [
        ((cx + t1 * ax, cy + t1 * ay), (ax, ay)),
        ((cx + t0 * ax, cy + t0 * ay), (-ax, -ay)),
        ((cx + halfwidth * perp[0], cy + halfwidth * perp[1]), perp),
        ((cx - halfwidth * perp[0], cy - halfwidth * perp[1]), (-perp[0], -perp[1])),
    ]


def point_in_halfplanes(pt, halfplanes, eps=0.0) -> bool:
    """True if ``pt`` satisfies every ``normal . (x - point) <= eps``."""
    for point, normal in halfplanes:
        if normal[0] * (pt[0] - point[0]) + normal[1] * (pt[1] - point[1]) > eps:
            return False
    return True


def segment_clip_params(p0, p1, halfplanes):
    """Parameter interval [t0, t1] of segment p0->p1 inside a convex region.

    Returns None when the segment misses the region.
    """
    t0, t1 = 0.0, 1.0
    dx = p1[0] - p0[0]
    dy = p1[1] - p0[1]
    for point, normal in halfplanes:
        num = normal[0] * (point[0] - p0[0]) + normal[1] * (point[1] - p0[1])
        den = normal[0] * dx + normal[1] * dy
        if abs(den) < 1e-300:
            if num < 0.0:
                return None
            continue
        t = num / den
        if den > 0.0:
            t1 = min(t1, t)
        else:
            t0 = max(t0, t)
        if t0 >= t1:
            return None
    return (t0, t1)


def subtract_intervals(intervals, cut):
    """Subtract one interval from a list of disjoint intervals."""
    c0, c1 = cut
    out = []
    for a, b in intervals:
        if c1 <= a or c0 >= b:
            out.append((a, b))
            continue
        if c0 > a:
            out.append((a, c0))
        if c1 < b:
            out.append((c1, b))
    return [(a, b) for a, b in out if b - a > 1e-12]
