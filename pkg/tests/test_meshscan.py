import math

import numpy as np
import pytest

from recgan3d import kernels, meshscan as ms
from recgan3d.meshscan import DepthImage, PinholeCamera, TriangleMesh, ViewPose
from recgan3d.voxelgrid import BINARY, OccupancyGrid, dilate

from oracles import exact_surface_voxels, flood_fill_exterior, ray_plane_depth

IDENTITY = ViewPose()


def unit_cube(lo=-0.5, hi=0.5):
    return ms.procedural.assemble([((lo,) * 3, (hi,) * 3)])


class TestNormalize:
    def test_unit_cube_fixed_point(self):
        m = unit_cube()
        assert np.allclose(ms.normalize_mesh(m).vertices, m.vertices, atol=1e-15)

    def test_translated_scaled_cube(self):
        out = ms.normalize_mesh(unit_cube(0.0, 2.0))
        lo, hi = out.bounds()
        assert np.allclose(lo, -0.5) and np.allclose(hi, 0.5)

    def test_longest_edge_exactly_one(self):
        out = ms.normalize_mesh(ms.make_procedural_mesh("box", {"width": 2.0, "height": 1.0, "depth": 1.0}))
        lo, hi = out.bounds()
        assert (hi - lo).max() == 1.0
        assert np.allclose(hi - lo, [1.0, 0.5, 0.5])
        assert np.allclose((lo + hi) / 2, 0.0)

    def test_drops_degenerate_triangles(self):
        v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [2, 0, 0]], dtype=float)
        out = ms.normalize_mesh(TriangleMesh(v, [[0, 1, 2], [0, 1, 3]]))
        assert len(out.triangles) == 1

    def test_empty(self):
        with pytest.raises(ms.EmptyGeometryError):
            ms.normalize_mesh(TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=int)))

    def test_index_range_checked(self):
        with pytest.raises(ValueError):
            TriangleMesh(np.zeros((3, 3)), [[0, 1, 3]])


class TestViewPoses:
    def test_125(self):
        poses = ms.make_view_poses(5)
        assert len(poses) == 125
        assert len({p.as_tuple() for p in poses}) == 125

    def test_single(self):
        assert ms.make_view_poses(1) == [ViewPose(0.0, 0.0, 0.0)]

    def test_two_per_axis_order(self):
        poses = ms.make_view_poses(2)
        assert len(poses) == 8
        assert {a for p in poses for a in p.as_tuple()} == {0.0, math.pi}
        # roll-major, then pitch, then yaw
        assert [p.as_tuple() for p in poses[:3]] == [(0.0, 0.0, 0.0), (0.0, 0.0, math.pi), (0.0, math.pi, 0.0)]
        assert poses[4].roll == math.pi

    def test_invalid(self):
        with pytest.raises(ValueError):
            ms.make_view_poses(0)

    def test_angles_wrapped(self):
        p = ViewPose(-0.5, 2 * math.pi, 7.0)
        assert all(0 <= a < 2 * math.pi for a in p.as_tuple())
        assert p.pitch == 0.0

    def test_rotation_orthonormal(self):
        r = ViewPose(0.3, 1.2, 2.9).rotation()
        assert np.allclose(r @ r.T, np.eye(3))
        assert np.linalg.det(r) == pytest.approx(1.0)


def odd_camera(distance=2.0):
    # odd image size puts a pixel center exactly on the optical axis
    return PinholeCamera(width=65, height=65, focal=70.0, distance=distance)


class TestRender:
    def test_empty_mesh(self):
        empty = TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=int))
        d = ms.render_depth(empty, IDENTITY, PinholeCamera())
        assert d.depth.shape == (128, 128)
        assert np.all(d.depth == ms.SENTINEL)

    def test_cube_face_on(self):
        cam = odd_camera()
        d = ms.render_depth(unit_cube(), IDENTITY, cam)
        assert d.depth[32, 32] == pytest.approx(1.5, abs=1e-12)
        dirs = cam.ray_directions().reshape(65, 65, 3)
        # every hit lies on the front face z = -0.5, per the ray/plane oracle
        hit = np.isfinite(d.depth)
        expected = ray_plane_depth(cam.center, dirs[hit].T, -0.5)
        assert np.allclose(d.depth[hit], expected, atol=1e-12)

    def test_miss_pixel(self):
        cam = odd_camera()
        d = ms.render_depth(unit_cube(), IDENTITY, cam)
        # corner pixel ray reaches |x| = 32/70 * 2.5 > 0.5 at the back face: misses
        assert d.depth[0, 0] == ms.SENTINEL
        dirs = cam.ray_directions().reshape(65, 65, 3)
        for v, u in [(0, 0), (64, 64), (32, 0)]:
            p = cam.center + dirs[v, u] * ray_plane_depth(cam.center, dirs[v, u], -0.5)
            assert np.max(np.abs(p[:2])) > 0.5
            assert d.depth[v, u] == ms.SENTINEL

    def test_hits_vs_frustum_oracle(self):
        cam = odd_camera()
        d = ms.render_depth(unit_cube(), IDENTITY, cam)
        dirs = cam.ray_directions().reshape(65, 65, 3)
        t = ray_plane_depth(cam.center, np.moveaxis(dirs, -1, 0), -0.5)
        pts = cam.center[:, None, None] + np.moveaxis(dirs, -1, 0) * t
        on_face = (np.abs(pts[0]) < 0.5 - 1e-9) & (np.abs(pts[1]) < 0.5 - 1e-9)
        assert np.all(np.isfinite(d.depth[on_face]))

    def test_deterministic(self):
        m = ms.normalize_mesh(ms.make_procedural_mesh("chair"))
        pose = ViewPose(0.4, 1.0, 2.2)
        a = ms.render_depth(m, pose, PinholeCamera())
        b = ms.render_depth(m, pose, PinholeCamera())
        assert a.depth.tobytes() == b.depth.tobytes()

    def test_watertight_shared_edge(self):
        # rays through the shared diagonal of a split quad must not leak between triangles
        cam = odd_camera()
        d = ms.render_depth(unit_cube(), IDENTITY, cam)
        assert np.isfinite(d.depth[32, 32])
        assert np.all(np.isfinite(d.depth[12:53, 12:53]))


class TestPartialGrid:
    def test_no_hits(self):
        cam = PinholeCamera()
        depth = DepthImage(np.full((128, 128), ms.SENTINEL))
        assert ms.depth_to_partial_grid(depth, IDENTITY, cam, 8).count() == 0

    def test_single_point_cell(self):
        d = 1.8
        f = 10.0
        cam = PinholeCamera(width=1, height=1, focal=f, cx=0.5 - f * 0.24 / d, cy=0.5, distance=d)
        depth = DepthImage(np.array([[math.hypot(0.24, d)]]))
        pts = ms.back_project(depth, cam)
        assert np.allclose(pts, [[0.24, 0.0, 0.0]], atol=1e-12)
        g = ms.depth_to_partial_grid(depth, IDENTITY, cam, 4)
        assert g.count() == 1
        assert g.values[2, 2, 2] == 1

    def test_face_on_cube_shell(self):
        cam = PinholeCamera()
        n = 16
        depth = ms.render_depth(unit_cube(), IDENTITY, cam)
        g = ms.depth_to_partial_grid(depth, IDENTITY, cam, n)
        ii, jj, kk = np.nonzero(g.values)
        # front face z = -0.5 lands in the first slab; the frustum covers the face entirely
        assert set(kk.tolist()) == {0}
        assert g.count() == n * n

    def test_min_resolution(self):
        with pytest.raises(ValueError):
            ms.depth_to_partial_grid(DepthImage(np.full((2, 2), ms.SENTINEL)), IDENTITY, PinholeCamera(), 3)


class TestVoxelizeSurface:
    def test_full_domain_cube(self):
        g = ms.voxelize_surface(unit_cube(), IDENTITY, 4)
        assert g.count() == 56
        m = unit_cube()
        assert np.array_equal(g.values, exact_surface_voxels(m.vertices, m.triangles, 4))

    def test_single_small_triangle(self):
        v = np.array([[0.01, 0.01, 0.01], [0.05, 0.01, 0.02], [0.02, 0.06, 0.03]])
        g = ms.voxelize_surface(TriangleMesh(v, [[0, 1, 2]]), IDENTITY, 8)
        assert g.count() == 1
        assert g.values[4, 4, 4] == 1

    def test_empty_mesh(self):
        empty = TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=int))
        assert ms.voxelize_surface(empty, IDENTITY, 8).count() == 0

    def test_full_turn_periodicity(self):
        m = ms.normalize_mesh(ms.make_procedural_mesh("chair"))
        assert ms.voxelize_surface(m, ViewPose(yaw=2 * math.pi), 16) == ms.voxelize_surface(m, IDENTITY, 16)

    @pytest.mark.parametrize("kind", ["chair", "stool", "table"])
    def test_against_exact_overlap(self, kind):
        m = ms.normalize_mesh(ms.make_procedural_mesh(kind))
        pose = ViewPose(0.3, 0.7, 1.9)
        n = 16
        sampled = ms.voxelize_surface(m, pose, n)
        posed = m.transformed(pose.rotation())
        exact = exact_surface_voxels(posed.vertices, posed.triangles, n)
        # every sampled voxel is truly touched; anything missed is a grazing neighbour
        assert np.all(exact >= sampled.values)
        assert np.all(dilate(sampled, 1).values >= exact)
        assert sampled.count() >= 0.9 * exact.sum()

    @pytest.mark.parametrize("kind", ["box", "chair", "table"])
    def test_quarter_turn_is_lattice_rotation(self, kind):
        m = ms.normalize_mesh(ms.make_procedural_mesh(kind))
        n = 16
        base = ms.voxelize_surface(m, IDENTITY, n).values
        turned = ms.voxelize_surface(m, ViewPose(yaw=math.pi / 2), n).values
        # R_y(pi/2): (x, y, z) -> (z, y, -x)
        expected = np.zeros_like(base)
        for i, j, k in zip(*np.nonzero(base)):
            expected[k, j, n - 1 - i] = 1
        assert np.array_equal(turned, expected)

    def test_solid_flag(self):
        m = unit_cube(-0.4, 0.4)
        surf = ms.voxelize_surface(m, IDENTITY, 8)
        solid = ms.voxelize_surface(m, IDENTITY, 8, solid=True)
        assert np.all(solid.values >= surf.values)
        assert solid.count() > surf.count()


class TestFillSolid:
    def test_hollow_shell(self):
        v = np.zeros((6, 6, 6), dtype=np.uint8)
        v[1:5, 1:5, 1:5] = 1
        v[2:4, 2:4, 2:4] = 0
        out = ms.fill_solid(OccupancyGrid(v, BINARY))
        assert out.count() == 64
        assert np.array_equal(out.values, flood_fill_exterior(v))

    def test_no_cavity(self):
        v = np.zeros((6, 6, 6), dtype=np.uint8)
        v[1:3, 1:3, 1:3] = 1
        g = OccupancyGrid(v, BINARY)
        assert ms.fill_solid(g) == g

    def test_empty(self):
        assert ms.fill_solid(OccupancyGrid.empty(5)).count() == 0

    def test_random_vs_bfs(self):
        rng = np.random.default_rng(8)
        for _ in range(5):
            v = (rng.random((7, 7, 7)) < 0.45).astype(np.uint8)
            assert np.array_equal(ms.fill_solid(OccupancyGrid(v, BINARY)).values, flood_fill_exterior(v))


class TestProcedural:
    def test_box(self):
        m = ms.make_procedural_mesh("box", {"width": 1, "height": 1, "depth": 1})
        assert len(m.vertices) == 8 and len(m.triangles) == 12

    def test_counts(self):
        assert len(ms.make_procedural_mesh("chair").triangles) == 72
        assert len(ms.make_procedural_mesh("stool").triangles) == 60
        assert len(ms.make_procedural_mesh("table").triangles) == 60

    def test_outward_orientation(self):
        m = unit_cube()
        a, b, c = m.corners
        normals = np.cross(b - a, c - a)
        centroids = (a + b + c) / 3
        assert np.all(np.einsum("ij,ij->i", normals, centroids) > 0)

    def test_deterministic(self):
        a = ms.make_procedural_mesh("chair", {"leg_height": 0.5})
        b = ms.make_procedural_mesh("chair", {"leg_height": 0.5})
        assert np.array_equal(a.vertices, b.vertices)

    def test_bad_params(self):
        with pytest.raises(ValueError):
            ms.make_procedural_mesh("chair", {"leg_height": 0.0})
        with pytest.raises(ValueError):
            ms.make_procedural_mesh("box", {"width": -1.0})
        with pytest.raises(ValueError):
            ms.make_procedural_mesh("sofa")


class TestObj:
    def test_roundtrip(self, tmp_path):
        m = ms.make_procedural_mesh("stool")
        ms.write_obj(m, tmp_path / "s.obj")
        back = ms.read_obj(tmp_path / "s.obj")
        assert np.array_equal(back.vertices, m.vertices)
        assert np.array_equal(back.triangles, m.triangles)

    def test_fan_triangulation(self, tmp_path):
        (tmp_path / "q.obj").write_text("# quad\nv 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvn 0 0 1\nf 1/1/1 2/2/1 3/3/1 4/4/1\n")
        m = ms.read_obj(tmp_path / "q.obj")
        assert m.triangles.tolist() == [[0, 1, 2], [0, 2, 3]]

    def test_bad_file(self, tmp_path):
        (tmp_path / "bad.obj").write_text("v 0 0\n")
        with pytest.raises(ms.MeshFormatError):
            ms.read_obj(tmp_path / "bad.obj")


class TestScanProperties:
    @pytest.mark.parametrize("n", [16, 32, 64])
    def test_partial_within_dilated_surface(self, n):
        rng = np.random.default_rng(n)
        for kind in ("chair", "table"):
            m = ms.normalize_mesh(ms.make_procedural_mesh(kind, ms.random_params(kind, rng)))
            pose = ViewPose(*rng.uniform(0, 2 * math.pi, 3))
            _, partial, full = ms.scan(m, pose, PinholeCamera(), n)
            outside = partial.values.astype(bool) & ~dilate(full, 1).values.astype(bool)
            assert not outside.any()
            assert 0 < partial.count() < full.count()

    def test_scan_deterministic(self):
        m = ms.normalize_mesh(ms.make_procedural_mesh("stool"))
        pose = ViewPose(1.0, 2.0, 3.0)
        a = ms.voxelize_surface(m, pose, 32)
        b = ms.voxelize_surface(m, pose, 32)
        assert a.values.tobytes() == b.values.tobytes()


@pytest.mark.skipif("cython" not in kernels.backends(), reason="extension not built")
class TestBackendsAgree:
    def test_cast_rays_bitwise(self):
        fast, ref = kernels.backends()["cython"], kernels.backends()["python"]
        m = ms.normalize_mesh(ms.make_procedural_mesh("table")).transformed(ViewPose(0.5, 1.5, 2.5).rotation())
        cam = PinholeCamera(width=48, height=48, focal=52.0)
        args = (cam.center, cam.ray_directions(), *m.corners)
        assert fast.cast_rays(*args).tobytes() == ref.cast_rays(*args).tobytes()

    def test_sample_triangles_bitwise(self):
        fast, ref = kernels.backends()["cython"], kernels.backends()["python"]
        m = ms.normalize_mesh(ms.make_procedural_mesh("chair")).transformed(ViewPose(2.0, 0.1, 4.0).rotation())
        for n in (8, 16, 32):
            assert np.array_equal(fast.sample_triangles(*m.corners, n, 0.4 / n),
                                  ref.sample_triangles(*m.corners, n, 0.4 / n))

    def test_boundary_coordinates_clamped(self):
        fast = kernels.backends()["cython"]
        v = np.array([[0.5, 0.5, 0.5], [0.49999999999999994, 0.5, 0.5], [0.5, 0.49999999999999994, 0.5]])
        g = fast.sample_triangles(v[:1], v[1:2], v[2:], 4, 0.1)
        assert g[3, 3, 3] == 1 and g.sum() == 1
