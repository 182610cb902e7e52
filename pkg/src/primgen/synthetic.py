"""Synthetic cuboid shapes for tests, demos and desk-scale training sets.

Shapes are sized so the default kernel bandwidths (coarse 2.0, fine 0.5)
play the same coarse/fine roles they do on real furniture scans: overall
extents of a few units, details a fraction of a unit.
"""

from __future__ import annotations

import numpy as np

from .geometry import Primitive, TriangleMesh, primitive_set_mesh, sample_mesh_surface


def random_cuboid(rng: np.random.Generator, extent_range=(0.8, 3.0),
                  center_span=0.8, max_rotation=0.0, rotation_axis=None) -> Primitive:
    """One random cuboid, optionally rotated about a single axis."""
    scale = rng.uniform(*extent_range, 3)
    center = rng.uniform(-center_span, center_span, 3)
    rotation = np.zeros(3)
    flags = np.zeros(3, dtype=np.int64)
    if max_rotation > 0.0:
        axis = int(rng.integers(3)) if rotation_axis is None else rotation_axis
        rotation[axis] = rng.uniform(-max_rotation, max_rotation)
        flags[axis] = 1
    return Primitive(scale, center, rotation, axis_flags=flags)


def surface_cloud(prims, n_points: int, seed: int) -> np.ndarray:
    """Area-proportional samples on the union-of-cuboids surface."""
    mesh = primitive_set_mesh(list(prims))
    pts, _ = sample_mesh_surface(mesh, n_points, seed)
    return pts


def table_shape(rng: np.random.Generator, n_legs: int = None):
    """Table-like arrangement: a top slab plus 2-4 legs, symmetric in x.

    Returns a list of disjoint cuboids with the slab first.
    """
    if n_legs is None:
        n_legs = int(rng.integers(2, 5))
    top_w = rng.uniform(2.4, 4.0)       # x extent
    top_d = rng.uniform(1.6, 3.0)       # y extent
    top_t = rng.uniform(0.25, 0.45)     # z thickness
    leg_h = rng.uniform(1.4, 2.4)
    leg_w = rng.uniform(0.25, 0.45)
    top_z = leg_h + top_t / 2.0
    prims = [Primitive([top_w, top_d, top_t], [0.0, 0.0, top_z], np.zeros(3))]
    inset_x = top_w / 2.0 - leg_w
    inset_y = top_d / 2.0 - leg_w
    corners = [(-inset_x, -inset_y), (inset_x, -inset_y), (inset_x, inset_y), (-inset_x, inset_y)]
    for cx, cy in corners[:n_legs]:
        prims.append(Primitive([leg_w, leg_w, leg_h], [cx, cy, leg_h / 2.0], np.zeros(3)))
    return prims


def chair_shape(rng: np.random.Generator):
    """Chair-like arrangement: seat, back and two side slabs (4 cuboids)."""
    seat_w = rng.uniform(1.8, 2.6)
    seat_d = rng.uniform(1.8, 2.6)
    seat_t = rng.uniform(0.25, 0.4)
    side_h = rng.uniform(1.2, 1.8)
    back_h = rng.uniform(1.6, 2.4)
    thick = rng.uniform(0.25, 0.4)
    seat_z = side_h + seat_t / 2.0
    prims = [
        Primitive([seat_w, seat_d, seat_t], [0.0, 0.0, seat_z], np.zeros(3)),
        Primitive([seat_w, thick, back_h],
                  [0.0, -(seat_d - thick) / 2.0, seat_z + seat_t / 2.0 + back_h / 2.0],
                  np.zeros(3)),
        Primitive([thick, seat_d, side_h], [-(seat_w - thick) / 2.0, 0.0, side_h / 2.0], np.zeros(3)),
        Primitive([thick, seat_d, side_h], [(seat_w - thick) / 2.0, 0.0, side_h / 2.0], np.zeros(3)),
    ]
    return prims


def furniture_shape(rng: np.random.Generator):
    """Random 3-5 cuboid arrangement (table or chair family)."""
    if rng.random() < 0.5:
        return table_shape(rng)
    return chair_shape(rng)


def two_part_labeled_mesh(rng: np.random.Generator = None):
    """Two stacked labeled cuboids (tiny gap so nearest-part assignment has
    no ties); returns (mesh, parts) for segmentation metrics tests."""
    rng = rng or np.random.default_rng(0)
    a = Primitive([2.0, 2.0, 1.0], [0.0, 0.0, 0.5], np.zeros(3))
    b = Primitive([0.8, 0.8, 2.0], [0.0, 0.0, 2.02], np.zeros(3))
    return primitive_set_mesh([a, b], labels=[0, 1]), [a, b]
