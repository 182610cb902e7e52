"""Geometry foundation: oriented cuboids, rotations, lattices, meshes, voxel grids.

All coordinates are plain float64 numpy arrays.  A cuboid primitive is the
canonical centered cube [-0.5, 0.5]^3 scaled per axis by S, rotated by
R(theta) and translated by T, i.e. world point = R * diag(S) * p + T.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np


def _vec3(x, name: str) -> np.ndarray:
    v = np.asarray(x, dtype=np.float64).reshape(-1)
    if v.shape != (3,):
        raise ValueError(f"{name} must be a 3-vector, got shape {v.shape}")
    return v


@dataclass(frozen=True)
class Primitive:
    """One oriented cuboid: per-axis scale, translation, Euler rotation.

    axis_flags[i] = 0 forces rotation[i] = 0; `symmetric` marks members of
    a mirror pair produced by symmetry completion.
    """

    scale: np.ndarray
    translation: np.ndarray
    rotation: np.ndarray
    axis_flags: np.ndarray = field(default=None)
    symmetric: bool = False

    def __post_init__(self):
        object.__setattr__(self, "scale", _vec3(self.scale, "scale"))
        object.__setattr__(self, "translation", _vec3(self.translation, "translation"))
        object.__setattr__(self, "rotation", _vec3(self.rotation, "rotation"))
        if self.axis_flags is None:
            flags = (np.abs(self.rotation) > 0).astype(np.int64)
        else:
            flags = np.asarray(self.axis_flags, dtype=np.int64).reshape(-1)
            if flags.shape != (3,):
                raise ValueError("axis_flags must be a 3-vector of 0/1")
        object.__setattr__(self, "axis_flags", flags)
        if not np.all(self.scale > 0):
            raise ValueError(f"scale components must be positive, got {self.scale}")
        if not np.all(np.isfinite(self.scale) & np.isfinite(self.translation) & np.isfinite(self.rotation)):
            raise ValueError("non-finite primitive parameters")

    def with_params(self, scale=None, translation=None, rotation=None) -> "Primitive":
        return replace(
            self,
            scale=self.scale if scale is None else scale,
            translation=self.translation if translation is None else translation,
            rotation=self.rotation if rotation is None else rotation,
        )

    @property
    def volume(self) -> float:
        return float(np.prod(self.scale))

    def as_vector(self) -> np.ndarray:
        """[s_x, s_y, s_z, t_x, t_y, t_z, theta_x, theta_y, theta_z]."""
        return np.concatenate([self.scale, self.translation, self.rotation])


@dataclass
class PointCloud:
    """Surface samples of a shape plus optional free-space (negative) samples."""

    points: np.ndarray
    negative: np.ndarray = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if self.points.shape[0] < 1:
            raise ValueError("point cloud must contain at least one point")
        if self.negative is None:
            self.negative = np.zeros((0, 3), dtype=np.float64)
        else:
            self.negative = np.asarray(self.negative, dtype=np.float64).reshape(-1, 3)

    def __len__(self) -> int:
        return self.points.shape[0]

    def bounding_box(self):
        return self.points.min(axis=0), self.points.max(axis=0)

    def bbox_diagonal(self) -> float:
        lo, hi = self.bounding_box()
        return float(np.linalg.norm(hi - lo))


@dataclass(frozen=True)
class CubeLattice:
    """Fixed volumetric sampling of the canonical cube [-0.5, 0.5]^3."""

    samples: np.ndarray
    per_axis: int

    @classmethod
    def regular(cls, per_axis: int = 7) -> "CubeLattice":
        if per_axis < 1:
            raise ValueError("per_axis must be >= 1")
        if per_axis == 1:
            axis = np.array([0.0])
        else:
            axis = np.linspace(-0.5, 0.5, per_axis)
        gx, gy, gz = np.meshgrid(axis, axis, axis, indexing="ij")
        pts = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)
        return cls(samples=pts, per_axis=per_axis)

    @property
    def count(self) -> int:
        return self.samples.shape[0]


@dataclass
class TriangleMesh:
    """Indexed triangle mesh with optional small-integer face labels."""

    vertices: np.ndarray
    faces: np.ndarray
    face_labels: np.ndarray = None

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= len(self.vertices)):
            raise ValueError("face index out of range")
        if self.face_labels is not None:
            self.face_labels = np.asarray(self.face_labels, dtype=np.int64).reshape(-1)
            if self.face_labels.shape[0] != self.faces.shape[0]:
                raise ValueError("face_labels length must match faces")

    @property
    def n_faces(self) -> int:
        return self.faces.shape[0]

    def face_areas(self) -> np.ndarray:
        v = self.vertices
        f = self.faces
        e1 = v[f[:, 1]] - v[f[:, 0]]
        e2 = v[f[:, 2]] - v[f[:, 0]]
        return 0.5 * np.linalg.norm(np.cross(e1, e2), axis=1)

    def drop_degenerate_faces(self, area_eps: float = 1e-14) -> "TriangleMesh":
        keep = self.face_areas() > area_eps
        labels = self.face_labels[keep] if self.face_labels is not None else None
        return TriangleMesh(self.vertices, self.faces[keep], labels)

    def bounding_box(self):
        if self.vertices.size == 0:
            raise ValueError("empty mesh")
        return self.vertices.min(axis=0), self.vertices.max(axis=0)


def rotation_matrix(theta) -> np.ndarray:
    """Rotation matrix for Euler angles, composed as R_z(tz) @ R_y(ty) @ R_x(tx)."""
    tx, ty, tz = np.asarray(theta, dtype=np.float64).reshape(3)
    cx, sx = np.cos(tx), np.sin(tx)
    cy, sy = np.cos(ty), np.sin(ty)
    cz, sz = np.cos(tz), np.sin(tz)
    rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return rz @ ry @ rx


def rotation_matrix_derivatives(theta):
    """d R / d theta_i for the R_z @ R_y @ R_x composition; returns (3, 3, 3)."""
    tx, ty, tz = np.asarray(theta, dtype=np.float64).reshape(3)
    cx, sx = np.cos(tx), np.sin(tx)
    cy, sy = np.cos(ty), np.sin(ty)
    cz, sz = np.cos(tz), np.sin(tz)
    rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    drx = np.array([[0, 0, 0], [0, -sx, -cx], [0, cx, -sx]])
    dry = np.array([[-sy, 0, cy], [0, 0, 0], [-cy, 0, -sy]])
    drz = np.array([[-sz, -cz, 0], [cz, -sz, 0], [0, 0, 0]])
    return np.stack([rz @ ry @ drx, rz @ dry @ rx, drz @ ry @ rx])


def wrap_angles(theta) -> np.ndarray:
    """Wrap angles into (-pi, pi]."""
    t = np.asarray(theta, dtype=np.float64)
    wrapped = np.mod(-t + np.pi, 2.0 * np.pi)
    return -(wrapped - np.pi)


def euler_from_matrix(r: np.ndarray) -> np.ndarray:
    """Euler angles (tx, ty, tz) with R = R_z(tz) @ R_y(ty) @ R_x(tx)."""
    ty = np.arcsin(-np.clip(r[2, 0], -1.0, 1.0))
    if abs(r[2, 0]) < 0.99999:
        tx = np.arctan2(r[2, 1], r[2, 2])
        tz = np.arctan2(r[1, 0], r[0, 0])
    else:  # gimbal lock: fold tz into tx
        tx = np.arctan2(-r[1, 2], r[1, 1])
        tz = 0.0
    return np.array([tx, ty, tz])


def transform_lattice(prim: Primitive, lattice: CubeLattice) -> np.ndarray:
    """World-space lattice points R(theta) @ diag(S) @ p + T, shape (M, 3)."""
    r = rotation_matrix(prim.rotation)
    return (lattice.samples * prim.scale) @ r.T + prim.translation


def mirror_primitive(prim: Primitive, axis: int, offset: float) -> Primitive:
    """Reflect a cuboid across the plane {x_axis = offset}.

    Translation reflects; the rotation angle about the plane-normal axis is
    kept and the two in-plane angles are negated, which reflects the oriented
    cuboid exactly (cuboids have mirror symmetry in each local plane).
    """
    if axis not in (0, 1, 2):
        raise ValueError("axis must be 0, 1 or 2")
    t = prim.translation.copy()
    t[axis] = 2.0 * offset - t[axis]
    rot = -prim.rotation
    rot[axis] = prim.rotation[axis]
    return Primitive(prim.scale.copy(), t, wrap_angles(rot),
                     axis_flags=prim.axis_flags.copy(), symmetric=prim.symmetric)


def sample_mesh_surface(mesh: TriangleMesh, count: int, seed: int):
    """Area-proportional surface samples; returns (points (count,3), face_ids)."""
    if mesh.n_faces == 0 or mesh.vertices.size == 0:
        raise ValueError("empty mesh")
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(seed)
    areas = mesh.face_areas()
    total = areas.sum()
    if total <= 0:
        raise ValueError("mesh has no area")
    face_ids = rng.choice(mesh.n_faces, size=count, p=areas / total)
    u = rng.random(count)
    v = rng.random(count)
    flip = u + v > 1.0
    u[flip] = 1.0 - u[flip]
    v[flip] = 1.0 - v[flip]
    f = mesh.faces[face_ids]
    a = mesh.vertices[f[:, 0]]
    b = mesh.vertices[f[:, 1]]
    c = mesh.vertices[f[:, 2]]
    pts = a + u[:, None] * (b - a) + v[:, None] * (c - a)
    return pts, face_ids


def points_in_primitive(points: np.ndarray, prim: Primitive) -> np.ndarray:
    """Boolean inside test |diag(S)^-1 R^T (q - T)|_inf <= 0.5."""
    r = rotation_matrix(prim.rotation)
    local = (np.asarray(points, dtype=np.float64) - prim.translation) @ r
    return np.max(np.abs(local / prim.scale), axis=-1) <= 0.5


def points_in_primitive_set(points: np.ndarray, prims) -> np.ndarray:
    """Inside test against the union of cuboids."""
    pts = np.asarray(points, dtype=np.float64)
    inside = np.zeros(pts.shape[0], dtype=bool)
    for p in prims:
        inside |= points_in_primitive(pts, p)
    return inside


def point_box_distance(points: np.ndarray, prim: Primitive) -> np.ndarray:
    """Euclidean distance from each point to the cuboid solid (0 inside)."""
    r = rotation_matrix(prim.rotation)
    local = (np.asarray(points, dtype=np.float64) - prim.translation) @ r
    excess = np.abs(local) - 0.5 * prim.scale
    return np.linalg.norm(np.maximum(excess, 0.0), axis=-1)


def cuboid_mesh(prim: Primitive, label: int = None) -> TriangleMesh:
    """12-triangle mesh of one cuboid (outward-facing winding not guaranteed)."""
    corners = np.array([[x, y, z] for x in (-0.5, 0.5) for y in (-0.5, 0.5) for z in (-0.5, 0.5)])
    r = rotation_matrix(prim.rotation)
    verts = (corners * prim.scale) @ r.T + prim.translation
    # two triangles per face of the +-0.5 cube, indices into the corner table
    faces = np.array([
        [0, 1, 3], [0, 3, 2],   # x = -0.5
        [4, 6, 7], [4, 7, 5],   # x = +0.5
        [0, 4, 5], [0, 5, 1],   # y = -0.5
        [2, 3, 7], [2, 7, 6],   # y = +0.5
        [0, 2, 6], [0, 6, 4],   # z = -0.5
        [1, 5, 7], [1, 7, 3],   # z = +0.5
    ])
    labels = None if label is None else np.full(12, label, dtype=np.int64)
    return TriangleMesh(verts, faces, labels)


def primitive_set_mesh(prims, labels=None) -> TriangleMesh:
    """Concatenated cuboid meshes; labels per primitive if given, else index."""
    verts, faces, labs = [], [], []
    offset = 0
    for i, p in enumerate(prims):
        lab = (labels[i] if labels is not None else i)
        m = cuboid_mesh(p, label=lab)
        verts.append(m.vertices)
        faces.append(m.faces + offset)
        labs.append(m.face_labels)
        offset += len(m.vertices)
    if not verts:
        raise ValueError("empty primitive set")
    return TriangleMesh(np.vstack(verts), np.vstack(faces), np.concatenate(labs))


def _mesh_inside(points: np.ndarray, mesh: TriangleMesh) -> np.ndarray:
    """Ray-parity inside test for a closed mesh, vectorized over points.

    Casts rays along a fixed slightly-skew direction so axis-aligned faces
    are never hit edge-on.
    """
    pts = np.asarray(points, dtype=np.float64)
    direction = np.array([0.577350269189626, 0.577350269189001, 0.577350269190251])
    direction /= np.linalg.norm(direction)
    v0 = mesh.vertices[mesh.faces[:, 0]]
    e1 = mesh.vertices[mesh.faces[:, 1]] - v0
    e2 = mesh.vertices[mesh.faces[:, 2]] - v0
    pvec = np.cross(direction, e2)                       # (F, 3)
    det = np.einsum("fj,fj->f", e1, pvec)
    ok = np.abs(det) > 1e-14
    inv_det = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    counts = np.zeros(len(pts), dtype=np.int64)
    # loop over faces to bound memory; fine for desk-scale meshes
    for f in range(len(mesh.faces)):
        if not ok[f]:
            continue
        tvec = pts - v0[f]
        u = (tvec @ pvec[f]) * inv_det[f]
        qvec = np.cross(tvec, e1[f])
        v = (qvec @ direction) * inv_det[f]
        t = (qvec @ e2[f]) * inv_det[f]
        hit = (u >= 0.0) & (v >= 0.0) & (u + v <= 1.0) & (t > 1e-12)
        counts += hit
    return counts % 2 == 1


@dataclass
class VoxelGrid:
    """Boolean occupancy over a regular grid spanning an axis-aligned box."""

    occupancy: np.ndarray
    origin: np.ndarray
    cell_size: np.ndarray

    @property
    def resolution(self) -> int:
        return self.occupancy.shape[0]

    def cell_centers(self) -> np.ndarray:
        n = self.occupancy.shape
        ax = [self.origin[i] + self.cell_size[i] * (np.arange(n[i]) + 0.5) for i in range(3)]
        gx, gy, gz = np.meshgrid(*ax, indexing="ij")
        return np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)


def voxel_occupancy(source, resolution: int, bounds=None) -> VoxelGrid:
    """Occupancy grid: cell true iff its center lies inside the source solid.

    `source` is a TriangleMesh or an iterable of Primitive.  The grid spans
    `bounds` (lo, hi) when given, else the source's tight bounding box.
    """
    if resolution < 1:
        raise ValueError("resolution must be >= 1")
    is_mesh = isinstance(source, TriangleMesh)
    if bounds is None:
        if is_mesh:
            lo, hi = source.bounding_box()
        else:
            prims = list(source)
            if not prims:
                raise ValueError("empty primitive set")
            corners = np.vstack([cuboid_mesh(p).vertices for p in prims])
            lo, hi = corners.min(axis=0), corners.max(axis=0)
    else:
        lo, hi = (np.asarray(b, dtype=np.float64) for b in bounds)
    extent = hi - lo
    if not np.all(np.isfinite(extent)) or np.any(extent < 0):
        raise ValueError("invalid grid bounds")
    cell = extent / resolution
    grid = VoxelGrid(np.zeros((resolution,) * 3, dtype=bool), lo.copy(), cell)
    centers = grid.cell_centers()
    if is_mesh:
        inside = _mesh_inside(centers, source)
    else:
        inside = points_in_primitive_set(centers, list(source))
    grid.occupancy = inside.reshape((resolution,) * 3)
    return grid
