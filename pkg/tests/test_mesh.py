import math
import struct

import numpy as np
import pytest

from freeshell import fixtures
from freeshell.errors import IoError, ParseError, TopologyError
from freeshell.mesh import (build_adjacency, edge_statistics, load_mesh,
                            make_mesh, save_mesh)


def write_obj(path, text):
    path.write_text(text)
    return path


class TestLoadMesh:
    def test_single_triangle(self, tmp_path):
        p = write_obj(tmp_path / "tri.obj",
                      "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n")
        mesh = load_mesh(p)
        assert mesh.n_vertices == 3
        assert mesh.n_triangles == 1
        assert mesh.boundary_flags.all()

    def test_closed_tetrahedron_rejected(self, tmp_path):
        p = write_obj(tmp_path / "tet.obj",
                      "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 0 0 1\n"
                      "f 1 3 2\nf 1 2 4\nf 2 3 4\nf 1 4 3\n")
        with pytest.raises(TopologyError, match="closed surface"):
            load_mesh(p)

    def test_unit_square(self, tmp_path):
        p = write_obj(tmp_path / "sq.obj",
                      "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\n"
                      "f 1 2 3\nf 1 3 4\n")
        mesh = load_mesh(p)
        assert mesh.n_vertices == 4
        assert mesh.n_triangles == 2
        adj = build_adjacency(mesh)
        assert len(adj.edges) == 5
        assert len(adj.interior_edges) == 1

    def test_quad_faces_are_fanned(self, tmp_path):
        p = write_obj(tmp_path / "quad.obj",
                      "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n")
        assert load_mesh(p).n_triangles == 2

    def test_nonmanifold_rejected(self, tmp_path):
        # three triangles sharing one edge
        p = write_obj(tmp_path / "bad.obj",
                      "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 0 -1 0\nv 0 0 1\n"
                      "f 1 2 3\nf 2 1 4\nf 1 2 5\n")
        with pytest.raises(TopologyError, match="non-manifold"):
            load_mesh(p)

    def test_missing_file(self, tmp_path):
        with pytest.raises(IoError):
            load_mesh(tmp_path / "nope.obj")

    def test_garbage_rejected(self, tmp_path):
        p = write_obj(tmp_path / "bad.obj", "v 1 2\nf 1 2 3\n")
        with pytest.raises(ParseError):
            load_mesh(p)

    def test_vertex_normals_unit(self):
        mesh = fixtures.hemisphere()
        norms = np.linalg.norm(mesh.vertex_normals, axis=1)
        assert np.abs(norms - 1.0).max() < 1e-9

    def test_two_components_rejected(self):
        v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0],
                      [5, 5, 0], [6, 5, 0], [5, 6, 0]], dtype=float)
        t = np.array([[0, 1, 2], [3, 4, 5]])
        with pytest.raises(TopologyError, match="components"):
            make_mesh(v, t)


class TestSaveMesh:
    def test_single_triangle_obj(self, tmp_path):
        mesh = make_mesh(np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0.0]]),
                         np.array([[0, 1, 2]]))
        p = tmp_path / "tri.obj"
        save_mesh(mesh, p)
        lines = p.read_text().splitlines()
        assert sum(1 for ln in lines if ln.startswith("v ")) == 3
        assert sum(1 for ln in lines if ln.startswith("f ")) == 1

    def test_obj_roundtrip_exact(self, tmp_path):
        mesh = fixtures.hemisphere()
        p = tmp_path / "h.obj"
        save_mesh(mesh, p)
        back = load_mesh(p)
        assert np.array_equal(mesh.vertices, back.vertices)
        assert np.array_equal(mesh.triangles, back.triangles)

    def test_hemisphere_roundtrip_face_count(self, tmp_path):
        mesh = fixtures.hemisphere()
        assert mesh.n_triangles == 143
        p = tmp_path / "h.stl"
        save_mesh(mesh, p)
        assert load_mesh(p).n_triangles == 143

    def test_stl_single_facet_normal(self, tmp_path):
        v = np.array([[0, 0, 0], [2, 0, 0], [0, 2, 0.0]])
        mesh = make_mesh(v, np.array([[0, 1, 2]]))
        p = tmp_path / "tri.stl"
        save_mesh(mesh, p)
        data = p.read_bytes()
        (count,) = struct.unpack_from("<I", data, 80)
        assert count == 1
        rec = struct.unpack_from("<12fH", data, 84)
        expected = np.cross(v[1] - v[0], v[2] - v[0])
        expected = expected / np.linalg.norm(expected)
        assert np.abs(np.array(rec[:3]) - expected).max() < 1e-6

    def test_stl_roundtrip_coordinates(self, tmp_path):
        mesh = fixtures.hemisphere()
        p = tmp_path / "h.stl"
        save_mesh(mesh, p)
        back = load_mesh(p)
        # binary STL stores float32; tolerance scales with coordinate size
        a = np.sort(mesh.vertices, axis=0)
        b = np.sort(back.vertices, axis=0)
        assert np.abs(a - b).max() < 1e-5 * np.abs(mesh.vertices).max() + 1e-6


class TestEdgeStatistics:
    def test_equilateral(self):
        s = 2.0
        v = np.array([[0, 0, 0], [s, 0, 0], [s / 2, s * math.sqrt(3) / 2, 0]])
        st = edge_statistics(make_mesh(v, np.array([[0, 1, 2]])))
        assert st.avg == pytest.approx(2.0, abs=1e-12)

    def test_unit_square(self):
        st = edge_statistics(fixtures.flat_square(size=1.0))
        # edges {1, 1, 1, 1, sqrt 2}
        assert st.count == 5
        assert st.avg == pytest.approx(1.082842712474619, abs=1e-12)
        assert st.min == pytest.approx(1.0)
        assert st.max == pytest.approx(math.sqrt(2.0))

    def test_scaling_homogeneity(self):
        m1 = fixtures.hemisphere(radius=40.0)
        m2 = make_mesh(m1.vertices * 3.0, m1.triangles)
        s1, s2 = edge_statistics(m1), edge_statistics(m2)
        assert s2.avg == pytest.approx(3.0 * s1.avg, rel=1e-12)
        assert s2.min == pytest.approx(3.0 * s1.min, rel=1e-12)
        assert s2.max == pytest.approx(3.0 * s1.max, rel=1e-12)

    def test_permutation_invariance(self, rng):
        mesh = fixtures.flat_square_grid(3)
        perm = rng.permutation(mesh.n_triangles)
        shuffled = make_mesh(mesh.vertices, mesh.triangles[perm])
        a, b = edge_statistics(mesh), edge_statistics(shuffled)
        assert (a.avg, a.min, a.max, a.count) == (b.avg, b.min, b.max, b.count)
