import math

import numpy as np
import pytest

from freeshell import fixtures, verify
from freeshell._geom import triangles_overlap
from freeshell.flatten import explode_mesh
from freeshell.mesh import make_mesh
from freeshell.param import parameterize


def single_triangle_mesh():
    return make_mesh(np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0.0]]),
                     np.array([[0, 1, 2]]))


def rectangle_pair_layout(gap, shear=0.0, length=2.0):
    """Two rest-shape triangles separated by ``gap`` across a shared edge,
    with tri_b optionally translated ``shear`` along the edge."""
    mesh = fixtures.flat_square(size=length / math.sqrt(2.0))
    lay = explode_mesh(mesh, parameterize(mesh))
    l = lay.linkages[0]
    c = lay.coords.reshape(-1, 2)
    p, q = c[l.slot_i], c[l.slot_j]
    edge = q - p
    edge_dir = edge / np.linalg.norm(edge)
    n = np.array([edge[1], -edge[0]])
    n = n / np.linalg.norm(n)
    if np.dot(lay.coords[l.tri_b].mean(axis=0) - p, n) < 0:
        n = -n
    lay.coords[l.tri_b] += gap * n + shear * edge_dir
    return lay, l


class TestLayoutMetrics:
    def test_constructed_optimum(self):
        lay, l = rectangle_pair_layout(0.25)
        rep = verify.layout_metrics(lay, 0.25)
        assert rep.max_edge_distortion < 1e-12
        assert rep.max_shear_angle < 1e-9
        assert rep.overlap_pairs == 0
        assert rep.connected
        assert rep.avg_gap == pytest.approx(0.25, abs=1e-12)

    def test_sheared_quad_angle_closed_form(self):
        gap, shear = 0.4, 0.2
        lay, l = rectangle_pair_layout(gap, shear=shear)
        expected = math.degrees(math.atan2(shear, gap))
        assert verify.shear_angle(lay, l) == pytest.approx(expected, abs=1e-9)

    def test_overlapping_pair_counted(self):
        lay, l = rectangle_pair_layout(-0.2)  # negative gap: pushed through
        rep = verify.layout_metrics(lay, 0.2)
        assert rep.overlap_pairs == 1

    def test_histogram_sums_to_retained(self, hemisphere_run):
        layout, stats = hemisphere_run
        rep = verify.layout_metrics(layout, stats.target_gap)
        assert sum(rep.gap_histogram) == rep.retained_count
        assert len(rep.gap_histogram) == 20

    def test_rigid_motion_invariance(self, hemisphere_layout):
        lay = hemisphere_layout
        rep0 = verify.layout_metrics(lay, 1.0)
        ang = 0.83
        rot = np.array([[math.cos(ang), -math.sin(ang)],
                        [math.sin(ang), math.cos(ang)]])
        lay.coords = lay.coords @ rot.T + np.array([3.0, -11.0])
        rep1 = verify.layout_metrics(lay, 1.0)
        assert rep1.max_gap == pytest.approx(rep0.max_gap, abs=1e-9)
        assert rep1.avg_gap == pytest.approx(rep0.avg_gap, abs=1e-9)
        assert rep1.max_edge_distortion == pytest.approx(
            rep0.max_edge_distortion, abs=1e-9)
        assert rep1.max_shear_angle == pytest.approx(
            rep0.max_shear_angle, abs=1e-7)
        assert rep1.overlap_pairs == rep0.overlap_pairs

    def test_no_overlap_implies_disjoint_samples(self, rng):
        # Monte-Carlo spot check: no sample point lies strictly inside
        # two triangles when the overlap count is zero
        mesh = fixtures.flat_square_grid(3)
        lay, _ = __import__("freeshell.flatten", fromlist=["x"]).\
            run_discrete_flattening(mesh)
        rep = verify.layout_metrics(lay, 1.0)
        assert rep.overlap_pairs == 0
        lo = lay.coords.reshape(-1, 2).min(axis=0)
        hi = lay.coords.reshape(-1, 2).max(axis=0)
        pts = rng.uniform(lo, hi, size=(2000, 2))
        for p in pts:
            inside = 0
            for t in range(lay.n_triangles):
                a, b, c = lay.coords[t]
                d1 = np.cross(np.append(b - a, 0), np.append(p - a, 0))[2]
                d2 = np.cross(np.append(c - b, 0), np.append(p - b, 0))[2]
                d3 = np.cross(np.append(a - c, 0), np.append(p - c, 0))[2]
                if (d1 > 1e-12 and d2 > 1e-12 and d3 > 1e-12) or \
                   (d1 < -1e-12 and d2 < -1e-12 and d3 < -1e-12):
                    inside += 1
            assert inside <= 1


class TestOverlapPredicate:
    def test_positive_overlap(self):
        assert triangles_overlap([(0, 0), (2, 0), (0, 2)],
                                 [(0.5, 0.5), (2.5, 0.5), (0.5, 2.5)])

    def test_shared_edge_not_overlap(self):
        assert not triangles_overlap([(0, 0), (2, 0), (0, 2)],
                                     [(2, 0), (0, 2), (2, 2)])

    def test_shared_point_not_overlap(self):
        assert not triangles_overlap([(0, 0), (2, 0), (0, 2)],
                                     [(0, 0), (-2, 0), (0, -2)])

    def test_containment_is_overlap(self):
        assert triangles_overlap([(0, 0), (10, 0), (0, 10)],
                                 [(1, 1), (2, 1), (1, 2)])

    def test_degenerate_never_overlaps(self):
        assert not triangles_overlap([(0, 0), (1, 0), (2, 0)],
                                     [(0, 0), (2, 0), (0, 2)])


class TestPointToMesh:
    def test_point_above_triangle(self):
        mesh = single_triangle_mesh()
        r = verify.point_to_mesh_distance(np.array([[0.2, 0.2, 1.0]]), mesh)
        assert r.per_point[0] == pytest.approx(1.0, abs=1e-12)

    def test_point_on_surface(self):
        mesh = single_triangle_mesh()
        r = verify.point_to_mesh_distance(np.array([[0.25, 0.25, 0.0]]), mesh)
        assert r.per_point[0] == pytest.approx(0.0, abs=1e-12)

    def test_vertex_region(self):
        mesh = single_triangle_mesh()
        r = verify.point_to_mesh_distance(np.array([[2.0, 0.0, 0.0]]), mesh)
        assert r.per_point[0] == pytest.approx(1.0, abs=1e-12)

    def test_edge_region(self):
        mesh = single_triangle_mesh()
        r = verify.point_to_mesh_distance(np.array([[0.5, -1.0, 0.0]]), mesh)
        assert r.per_point[0] == pytest.approx(1.0, abs=1e-12)

    def test_accelerated_equals_brute(self, hemisphere_mesh, rng):
        pts = rng.uniform(-60, 60, size=(1000, 3))
        fast = verify.point_to_mesh_distance(pts, hemisphere_mesh,
                                             accelerate=True)
        slow = verify.point_to_mesh_distance(pts, hemisphere_mesh,
                                             accelerate=False)
        assert np.array_equal(fast.per_point, slow.per_point)

    def test_empty_points_rejected(self, hemisphere_mesh):
        with pytest.raises(ValueError):
            verify.point_to_mesh_distance(np.empty((0, 3)), hemisphere_mesh)


class TestScan:
    def test_points_on_surface(self, hemisphere_mesh):
        pts = verify.synthetic_scan(hemisphere_mesh, 200, sigma=0.0, seed=3)
        r = verify.point_to_mesh_distance(pts, hemisphere_mesh)
        assert r.max < 1e-9

    def test_jitter_scale(self, hemisphere_mesh):
        pts = verify.synthetic_scan(hemisphere_mesh, 500, sigma=0.5, seed=3)
        r = verify.point_to_mesh_distance(pts, hemisphere_mesh)
        assert 0.05 < r.avg < 1.5

    def test_xyz_roundtrip(self, hemisphere_mesh, tmp_path):
        pts = verify.synthetic_scan(hemisphere_mesh, 50, seed=1)
        p = tmp_path / "scan.xyz"
        verify.save_xyz(pts, p)
        back = verify.load_xyz(p)
        assert np.array_equal(pts, back)


class TestReports:
    def test_layout_report_keys(self, hemisphere_run, tmp_path):
        layout, stats = hemisphere_run
        rep = verify.layout_metrics(layout, stats.target_gap)
        p = tmp_path / "report.txt"
        verify.write_report(rep.to_mapping(), p)
        text = p.read_text()
        for key in ("avg_gap", "max_gap", "overlap_pairs", "connected"):
            assert f"{key}=" in text

    def test_distance_report_keys(self, hemisphere_mesh, tmp_path):
        pts = verify.synthetic_scan(hemisphere_mesh, 20, seed=0)
        res = verify.point_to_mesh_distance(pts, hemisphere_mesh)
        p = tmp_path / "dist.txt"
        verify.write_report(res.to_mapping(), p)
        text = p.read_text()
        assert "avg_mm=" in text and "max_mm=" in text

    def test_byte_identical(self, hemisphere_run, tmp_path):
        layout, stats = hemisphere_run
        rep = verify.layout_metrics(layout, stats.target_gap)
        a = tmp_path / "a.txt"
        b = tmp_path / "b.txt"
        verify.write_report(rep.to_mapping(), a)
        verify.write_report(rep.to_mapping(), b)
        assert a.read_bytes() == b.read_bytes()
