import numpy as np
import pytest

from primgen.geometry import (
    CubeLattice,
    Primitive,
    TriangleMesh,
    cuboid_mesh,
    euler_from_matrix,
    mirror_primitive,
    points_in_primitive,
    points_in_primitive_set,
    primitive_set_mesh,
    rotation_matrix,
    rotation_matrix_derivatives,
    sample_mesh_surface,
    transform_lattice,
    voxel_occupancy,
    wrap_angles,
)


def test_rotation_identity():
    assert np.allclose(rotation_matrix([0, 0, 0]), np.eye(3), atol=1e-15)


def test_rotation_quarter_turn_about_x():
    r = rotation_matrix([np.pi / 2, 0, 0])
    assert np.allclose(r @ np.array([0, 1, 0]), [0, 0, 1], atol=1e-12)


def test_rotation_composition_matches_per_axis_products():
    rng = np.random.default_rng(0)
    for _ in range(20):
        tx, ty, tz = rng.uniform(-np.pi, np.pi, 3)
        cx, sx = np.cos(tx), np.sin(tx)
        cy, sy = np.cos(ty), np.sin(ty)
        cz, sz = np.cos(tz), np.sin(tz)
        rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
        ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
        rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
        assert np.allclose(rotation_matrix([tx, ty, tz]), rz @ ry @ rx, atol=1e-12)


def test_rotation_orthonormal_det_one_many():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        r = rotation_matrix(rng.uniform(-np.pi, np.pi, 3))
        assert np.allclose(r.T @ r, np.eye(3), atol=1e-12)
        assert abs(np.linalg.det(r) - 1.0) < 1e-12


def test_rotation_derivatives_match_finite_differences():
    rng = np.random.default_rng(2)
    h = 1e-7
    for _ in range(10):
        th = rng.uniform(-np.pi, np.pi, 3)
        dr = rotation_matrix_derivatives(th)
        for i in range(3):
            e = np.zeros(3)
            e[i] = h
            fd = (rotation_matrix(th + e) - rotation_matrix(th - e)) / (2 * h)
            assert np.allclose(dr[i], fd, atol=1e-6)


def test_euler_round_trip():
    rng = np.random.default_rng(3)
    for _ in range(50):
        th = rng.uniform(-1.4, 1.4, 3)
        assert np.allclose(euler_from_matrix(rotation_matrix(th)), th, atol=1e-9)


def test_wrap_angles():
    assert np.allclose(wrap_angles([np.pi, -np.pi, 2 * np.pi]), [np.pi, np.pi, 0])
    assert np.allclose(wrap_angles([3 * np.pi / 2]), [-np.pi / 2])


class TestLattice:
    def test_counts_and_bounds(self):
        lat = CubeLattice.regular(7)
        assert lat.count == 343
        assert lat.samples.min() == -0.5 and lat.samples.max() == 0.5

    def test_identity_transform(self):
        lat = CubeLattice.regular(3)
        prim = Primitive([1, 1, 1], [0, 0, 0], [0, 0, 0])
        assert np.allclose(transform_lattice(prim, lat), lat.samples)

    def test_pure_scaling_extends_x(self):
        lat = CubeLattice.regular(3)
        prim = Primitive([2, 1, 1], [0, 0, 0], [0, 0, 0])
        out = transform_lattice(prim, lat)
        assert np.isclose(out[:, 0].min(), -1.0) and np.isclose(out[:, 0].max(), 1.0)

    def test_transform_matches_per_point_oracle(self):
        rng = np.random.default_rng(4)
        lat = CubeLattice.regular(5)
        for _ in range(10):
            prim = Primitive(rng.uniform(0.5, 2, 3), rng.uniform(-1, 1, 3),
                             rng.uniform(-np.pi, np.pi, 3))
            out = transform_lattice(prim, lat)
            r = rotation_matrix(prim.rotation)
            for i in range(lat.count):
                expected = r @ (np.diag(prim.scale) @ lat.samples[i]) + prim.translation
                assert np.allclose(out[i], expected, atol=1e-12)


class TestPrimitive:
    def test_rejects_nonpositive_scale(self):
        with pytest.raises(ValueError):
            Primitive([0, 1, 1], [0, 0, 0], [0, 0, 0])

    def test_default_axis_flags_follow_rotation(self):
        p = Primitive([1, 1, 1], [0, 0, 0], [0.3, 0, 0])
        assert list(p.axis_flags) == [1, 0, 0]


class TestMirror:
    def test_on_plane_fixed_point(self):
        p = Primitive([1, 2, 3], [0, 1, 2], [0, 0, 0])
        m = mirror_primitive(p, 0, 0.0)
        assert np.allclose(m.translation, p.translation)
        assert np.allclose(m.scale, p.scale)

    def test_translation_reflects(self):
        p = Primitive([1, 1, 1], [1, 0, 0], [0, 0, 0])
        m = mirror_primitive(p, 0, 0.0)
        assert np.allclose(m.translation, [-1, 0, 0])

    def test_involution(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            p = Primitive(rng.uniform(0.5, 2, 3), rng.uniform(-1, 1, 3),
                          rng.uniform(-1.5, 1.5, 3))
            mm = mirror_primitive(mirror_primitive(p, 0, 0.7), 0, 0.7)
            assert np.allclose(mm.scale, p.scale, atol=1e-12)
            assert np.allclose(mm.translation, p.translation, atol=1e-12)
            assert np.allclose(mm.rotation, p.rotation, atol=1e-12)

    def test_mirrored_lattice_is_reflected_point_set(self):
        rng = np.random.default_rng(6)
        lat = CubeLattice.regular(4)
        for axis in range(3):
            p = Primitive(rng.uniform(0.5, 2, 3), rng.uniform(-1, 1, 3),
                          rng.uniform(-1.5, 1.5, 3))
            m = mirror_primitive(p, axis, 0.3)
            pts = transform_lattice(p, lat)
            pts[:, axis] = 2 * 0.3 - pts[:, axis]
            mpts = transform_lattice(m, lat)
            # compare as sets: sort both lexicographically
            a = pts[np.lexsort(pts.T)]
            b = mpts[np.lexsort(mpts.T)]
            assert np.allclose(a, b, atol=1e-9)


class TestMeshSampling:
    def unit_square(self):
        verts = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], dtype=float)
        faces = np.array([[0, 1, 2], [0, 2, 3]])
        return TriangleMesh(verts, faces)

    def test_planar_mesh_samples_on_plane(self):
        pts, _ = sample_mesh_surface(self.unit_square(), 4, seed=0)
        assert pts.shape == (4, 3)
        assert np.allclose(pts[:, 2], 0.0, atol=1e-12)

    def test_area_proportional(self):
        verts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0],
                          [10, 0, 0], [13, 0, 0], [10, 6, 0]], dtype=float)
        faces = np.array([[0, 1, 2], [3, 4, 5]])  # areas 0.5 and 9
        _, fids = sample_mesh_surface(TriangleMesh(verts, faces), 10000, seed=1)
        frac = np.mean(fids == 1)
        assert abs(frac - 9 / 9.5) < 0.02

    def test_count_zero_rejected(self):
        with pytest.raises(ValueError):
            sample_mesh_surface(self.unit_square(), 0, seed=0)

    def test_empty_mesh_rejected(self):
        with pytest.raises(ValueError):
            sample_mesh_surface(TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3))), 5, 0)

    def test_deterministic_under_seed(self):
        a, fa = sample_mesh_surface(self.unit_square(), 100, seed=7)
        b, fb = sample_mesh_surface(self.unit_square(), 100, seed=7)
        assert np.array_equal(a, b) and np.array_equal(fa, fb)

    def test_points_lie_on_their_faces(self):
        mesh = cuboid_mesh(Primitive([1, 2, 3], [0.5, 0, 0], [0.2, 0.1, -0.3]))
        pts, fids = sample_mesh_surface(mesh, 500, seed=2)
        for p, f in zip(pts[:50], fids[:50]):
            a, b, c = mesh.vertices[mesh.faces[f]]
            # barycentric residual: solve p = a + u(b-a) + v(c-a)
            m = np.stack([b - a, c - a], axis=1)
            uv, res, _, _ = np.linalg.lstsq(m, p - a, rcond=None)
            assert np.linalg.norm(m @ uv - (p - a)) < 1e-9


class TestVoxelOccupancy:
    def test_unit_cube_fully_occupied(self):
        prim = Primitive([1, 1, 1], [0, 0, 0], [0, 0, 0])
        grid = voxel_occupancy([prim], 2)
        assert grid.occupancy.all()

    def test_disjoint_primitive_empty(self):
        prim = Primitive([1, 1, 1], [0, 0, 0], [0, 0, 0])
        far = Primitive([1, 1, 1], [100, 0, 0], [0, 0, 0])
        grid = voxel_occupancy([prim], 4)
        centers = grid.cell_centers()
        assert not points_in_primitive(centers, far).any()

    def test_against_explicit_inverse_transform(self):
        rng = np.random.default_rng(8)
        prim = Primitive(rng.uniform(0.5, 2, 3), rng.uniform(-1, 1, 3),
                         rng.uniform(-1, 1, 3))
        cells = rng.uniform(-3, 3, (10000, 3))
        fast = points_in_primitive(cells, prim)
        r = rotation_matrix(prim.rotation)
        for i in range(0, 10000, 97):
            local = np.linalg.inv(np.diag(prim.scale)) @ r.T @ (cells[i] - prim.translation)
            assert fast[i] == (np.max(np.abs(local)) <= 0.5)

    def test_mesh_voxelization_matches_primitive(self):
        prim = Primitive([1.5, 2.0, 1.0], [0.2, -0.1, 0.4], [0, 0, 0.4])
        mesh = cuboid_mesh(prim)
        grid_mesh = voxel_occupancy(mesh, 16)
        centers = grid_mesh.cell_centers()
        direct = points_in_primitive(centers, prim).reshape(grid_mesh.occupancy.shape)
        assert np.mean(grid_mesh.occupancy == direct) > 0.99

    def test_rejects_bad_resolution(self):
        with pytest.raises(ValueError):
            voxel_occupancy([Primitive([1, 1, 1], [0, 0, 0], [0, 0, 0])], 0)


def test_primitive_set_mesh_labels():
    a = Primitive([1, 1, 1], [0, 0, 0], [0, 0, 0])
    b = Primitive([1, 1, 1], [3, 0, 0], [0, 0, 0])
    mesh = primitive_set_mesh([a, b], labels=[5, 9])
    assert mesh.n_faces == 24
    assert set(mesh.face_labels) == {5, 9}
