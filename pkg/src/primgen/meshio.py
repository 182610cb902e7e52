"""File formats: OBJ meshes, XYZ point clouds, voxel-grid text, depth images."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .geometry import TriangleMesh, VoxelGrid


def load_obj(path) -> TriangleMesh:
    """Read a Wavefront OBJ; polygons are fan-triangulated on load.

    `g`/`o` group lines assign sequential integer face labels (first group is
    0); files without groups get label 0 on every face.
    """
    vertices = []
    faces = []
    labels = []
    group_ids = {}
    current = None
    for raw in Path(path).read_text().splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        tag = parts[0]
        if tag == "v":
            vertices.append([float(parts[1]), float(parts[2]), float(parts[3])])
        elif tag in ("g", "o"):
            name = " ".join(parts[1:]) if len(parts) > 1 else ""
            if name not in group_ids:
                group_ids[name] = len(group_ids)
            current = group_ids[name]
        elif tag == "f":
            idx = []
            for tok in parts[1:]:
                # "v", "v/vt", "v//vn", "v/vt/vn"; negative = relative
                i = int(tok.split("/")[0])
                idx.append(i - 1 if i > 0 else len(vertices) + i)
            for k in range(1, len(idx) - 1):
                faces.append([idx[0], idx[k], idx[k + 1]])
                labels.append(current if current is not None else 0)
    if not vertices or not faces:
        raise ValueError(f"no geometry in OBJ file {path}")
    mesh = TriangleMesh(np.array(vertices), np.array(faces), np.array(labels))
    return mesh.drop_degenerate_faces()


def save_obj(path, mesh: TriangleMesh, group_names=None) -> None:
    """Write a mesh; faces are grouped by label when labels are present."""
    lines = []
    for v in mesh.vertices:
        lines.append(f"v {v[0]:.17g} {v[1]:.17g} {v[2]:.17g}")
    if mesh.face_labels is None:
        for f in mesh.faces:
            lines.append(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}")
    else:
        order = np.argsort(mesh.face_labels, kind="stable")
        last = None
        for fi in order:
            lab = int(mesh.face_labels[fi])
            if lab != last:
                name = group_names[lab] if group_names else f"part_{lab}"
                lines.append(f"g {name}")
                last = lab
            f = mesh.faces[fi]
            lines.append(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_xyz(path) -> np.ndarray:
    """Read whitespace-separated `x y z` lines; returns (N, 3)."""
    pts = []
    for raw in Path(path).read_text().splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) < 3:
            raise ValueError(f"bad XYZ line: {line!r}")
        pts.append([float(parts[0]), float(parts[1]), float(parts[2])])
    if not pts:
        raise ValueError(f"no points in {path}")
    return np.array(pts, dtype=np.float64)


def save_xyz(path, points: np.ndarray) -> None:
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    lines = [f"{p[0]:.17g} {p[1]:.17g} {p[2]:.17g}" for p in pts]
    Path(path).write_text("\n".join(lines) + "\n")


def save_voxel_grid(path, grid: VoxelGrid) -> None:
    """Debug dump: header line, then one 0/1 row per (x, y) with z across."""
    n = grid.resolution
    lines = [
        f"resolution {n}",
        "origin " + " ".join(f"{v:.17g}" for v in grid.origin),
        "cell " + " ".join(f"{v:.17g}" for v in grid.cell_size),
    ]
    occ = grid.occupancy.astype(np.int8)
    for i in range(n):
        for j in range(n):
            lines.append("".join(str(int(b)) for b in occ[i, j]))
    Path(path).write_text("\n".join(lines) + "\n")


def load_voxel_grid(path) -> VoxelGrid:
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    n = int(lines[0].split()[1])
    origin = np.array([float(v) for v in lines[1].split()[1:4]])
    cell = np.array([float(v) for v in lines[2].split()[1:4]])
    rows = lines[3:]
    occ = np.zeros((n, n, n), dtype=bool)
    k = 0
    for i in range(n):
        for j in range(n):
            occ[i, j] = np.frombuffer(rows[k].encode(), dtype=np.uint8) == ord("1")
            k += 1
    return VoxelGrid(occ, origin, cell)


def save_depth_pgm(path, image: np.ndarray) -> None:
    """16-bit binary PGM; values in [0, 1] map to 0..65535."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError("depth image must be 2D")
    q = np.clip(np.round(img * 65535.0), 0, 65535).astype(">u2")
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n65535\n".encode("ascii")
    Path(path).write_bytes(header + q.tobytes())


def load_depth_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    # header = magic, width, height, maxval as whitespace-separated tokens
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    pos += 1  # single whitespace after maxval
    if tokens[0] != b"P5":
        raise ValueError("not a binary PGM file")
    width, height, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval > 255:
        raw = np.frombuffer(data, dtype=">u2", count=width * height, offset=pos)
    else:
        raw = np.frombuffer(data, dtype=np.uint8, count=width * height, offset=pos)
    return raw.reshape(height, width).astype(np.float64) / float(maxval)


def save_depth_grid(path, image: np.ndarray) -> None:
    """Plain-text float grid: `width height` header then one row per line."""
    img = np.asarray(image, dtype=np.float64)
    lines = [f"{img.shape[1]} {img.shape[0]}"]
    for row in img:
        lines.append(" ".join(f"{v:.17g}" for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def load_depth_grid(path) -> np.ndarray:
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    width, height = (int(v) for v in lines[0].split())
    rows = [np.array([float(v) for v in ln.split()]) for ln in lines[1 : 1 + height]]
    img = np.vstack(rows)
    if img.shape != (height, width):
        raise ValueError("depth grid header does not match data")
    return img


def load_depth_image(path) -> np.ndarray:
    """Dispatch on suffix: .pgm binary or anything else as float grid."""
    if str(path).lower().endswith(".pgm"):
        return load_depth_pgm(path)
    return load_depth_grid(path)
