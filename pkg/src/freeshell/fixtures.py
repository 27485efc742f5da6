"""Synthetic shell meshes for tests, demos and randomized property runs."""
from __future__ import annotations

import math

import numpy as np

from .mesh import TargetMesh, make_mesh


def flat_square(size: float = 10.0) -> TargetMesh:
    """Unit-style square split into two triangles, lying in z = 0.

    The smallest developable fixture: one interior edge, one linkage.
    """
    v = np.array([
        [0.0, 0.0, 0.0],
        [size, 0.0, 0.0],
        [size, size, 0.0],
        [0.0, size, 0.0],
    ])
    t = np.array([[0, 1, 2], [0, 2, 3]])
    return make_mesh(v, t)


def flat_square_grid(n: int = 4, size: float = 40.0) -> TargetMesh:
    """n x n grid of square cells in z = 0, each split into two triangles."""
    xs = np.linspace(0.0, size, n + 1)
    verts = [[x, y, 0.0] for y in xs for x in xs]
    tris = []
    for j in range(n):
        for i in range(n):
            a = j * (n + 1) + i
            b = a + 1
            c = a + n + 2
            d = a + n + 1
            tris.append([a, b, c])
            tris.append([a, c, d])
    return make_mesh(np.array(verts), np.array(tris))


def cone_cap(base: float = 20.0, seam: bool = False) -> TargetMesh:
    """Three lateral faces of a regular tetrahedron, base removed.

    With ``seam=False`` the apex is an interior vertex carrying the full
    angle deficit; flattening it requires opening a seam. With
    ``seam=True`` one lateral edge is pre-split (duplicated base corner),
    which makes the surface intrinsically flat.
    """
    h = base * math.sqrt(2.0 / 3.0)
    r = base / math.sqrt(3.0)
    ang = [math.pi / 2 + k * 2 * math.pi / 3 for k in range(3)]
    b = [[r * math.cos(a), r * math.sin(a), 0.0] for a in ang]
    apex = [0.0, 0.0, h]
    if not seam:
        v = np.array([apex, b[0], b[1], b[2]])
        t = np.array([[0, 1, 2], [0, 2, 3], [0, 3, 1]])
    else:
        v = np.array([apex, b[0], b[1], b[2], b[0]])
        t = np.array([[0, 1, 2], [0, 2, 3], [0, 3, 4]])
    return make_mesh(v, t)


def hemisphere(radius: float = 40.0, segments: int = 13, rings: int = 6) -> TargetMesh:
    """Latitude-longitude hemisphere, open at the equator.

    The default 13 segments x 6 rings gives 13 + 5 * 26 = 143 faces at
    roughly one hundred square centimeters, a mid-size positively curved
    benchmark shell.
    """
    verts = [[0.0, 0.0, radius]]
    for j in range(1, rings + 1):
        theta = (math.pi / 2) * j / rings
        z = radius * math.cos(theta)
        rho = radius * math.sin(theta)
        for i in range(segments):
            phi = 2 * math.pi * i / segments
            verts.append([rho * math.cos(phi), rho * math.sin(phi), z])
    tris = []

    def ring(j, i):
        return 1 + (j - 1) * segments + (i % segments)

    for i in range(segments):
        tris.append([0, ring(1, i), ring(1, i + 1)])
    for j in range(1, rings):
        for i in range(segments):
            a = ring(j, i)
            b = ring(j, i + 1)
            c = ring(j + 1, i + 1)
            d = ring(j + 1, i)
            tris.append([a, d, c])
            tris.append([a, c, b])
    return make_mesh(np.array(verts), np.array(tris))


def spherical_cap(radius: float = 30.0, angle: float = 1.0,
                  segments: int = 8, rings: int = 3) -> TargetMesh:
    """Spherical cap subtending ``angle`` radians of polar arc."""
    verts = [[0.0, 0.0, radius]]
    for j in range(1, rings + 1):
        theta = angle * j / rings
        z = radius * math.cos(theta)
        rho = radius * math.sin(theta)
        for i in range(segments):
            phi = 2 * math.pi * i / segments
            verts.append([rho * math.cos(phi), rho * math.sin(phi), z])
    tris = []

    def ring(j, i):
        return 1 + (j - 1) * segments + (i % segments)

    for i in range(segments):
        tris.append([0, ring(1, i), ring(1, i + 1)])
    for j in range(1, rings):
        for i in range(segments):
            a = ring(j, i)
            b = ring(j, i + 1)
            c = ring(j + 1, i + 1)
            d = ring(j + 1, i)
            tris.append([a, d, c])
            tris.append([a, c, b])
    return make_mesh(np.array(verts), np.array(tris))


def bumpy_grid(nx: int = 3, ny: int = 3, size: float = 30.0,
               amplitude: float = 4.0, seed: int = 0) -> TargetMesh:
    """Grid sheet with a smooth random height field; mildly curved."""
    rng = np.random.default_rng(seed)
    phases = rng.uniform(0, 2 * math.pi, size=4)
    freqs = rng.uniform(0.5, 1.5, size=4)
    xs = np.linspace(0.0, size, nx + 1)
    ys = np.linspace(0.0, size, ny + 1)

    def height(x, y):
        u, v = x / size * math.pi, y / size * math.pi
        return amplitude * (
            math.sin(freqs[0] * u + phases[0]) * math.sin(freqs[1] * v + phases[1])
            + 0.5 * math.sin(freqs[2] * (u + v) + phases[2])
            + 0.25 * math.cos(freqs[3] * (u - v) + phases[3]))

    verts = [[x, y, height(x, y)] for y in ys for x in xs]
    tris = []
    for j in range(ny):
        for i in range(nx):
            a = j * (nx + 1) + i
            b = a + 1
            c = a + nx + 2
            d = a + nx + 1
            tris.append([a, b, c])
            tris.append([a, c, d])
    return make_mesh(np.array(verts), np.array(tris))


def random_fixture(rng: np.random.Generator) -> TargetMesh:
    """Draw a random small fixture for property runs (deterministic per rng)."""
    kind = rng.integers(0, 3)
    if kind == 0:
        nx = int(rng.integers(2, 5))
        ny = int(rng.integers(2, 5))
        amp = float(rng.uniform(0.5, 6.0))
        return bumpy_grid(nx, ny, size=30.0, amplitude=amp,
                          seed=int(rng.integers(0, 2**31)))
    if kind == 1:
        base = float(rng.uniform(10.0, 30.0))
        return cone_cap(base=base, seam=bool(rng.integers(0, 2)))
    segments = int(rng.integers(5, 9))
    rings = int(rng.integers(2, 4))
    ang = float(rng.uniform(0.5, 1.3))
    return spherical_cap(radius=30.0, angle=ang, segments=segments, rings=rings)
