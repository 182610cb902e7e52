"""Quantitative evaluation: volumetric IoU, normalized surface-to-surface
distance, and part-segmentation face-labeling accuracy."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .geometry import (
    Primitive,
    TriangleMesh,
    point_box_distance,
    points_in_primitive_set,
    primitive_set_mesh,
    sample_mesh_surface,
    voxel_occupancy,
)

IOU_RESOLUTION = 30
SURFACE_SAMPLES = 5000


@dataclass
class EvalReport:
    per_shape: list = field(default_factory=list)   # dicts with iou / surface / seg

    def add(self, name: str, **metrics) -> None:
        self.per_shape.append({"shape": name, **metrics})

    def means(self) -> dict:
        keys = set()
        for row in self.per_shape:
            keys.update(k for k, v in row.items() if isinstance(v, (int, float)))
        return {k: float(np.mean([r[k] for r in self.per_shape if k in r]))
                for k in sorted(keys)}

    def to_json(self) -> str:
        return json.dumps({"per_shape": self.per_shape, "means": self.means()},
                          indent=2, sort_keys=True)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    def as_table(self) -> str:
        """Aligned plain-text table, one row per shape plus a mean row."""
        if not self.per_shape:
            return "(empty report)"
        keys = sorted({k for r in self.per_shape for k in r if k != "shape"})
        header = ["shape"] + keys
        rows = [[str(r.get("shape", "?"))] + [f"{r[k]:.4f}" if k in r else "-"
                                              for k in keys]
                for r in self.per_shape]
        means = self.means()
        rows.append(["mean"] + [f"{means[k]:.4f}" if k in means else "-" for k in keys])
        widths = [max(len(row[i]) for row in [header] + rows) for i in range(len(header))]
        lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
        for row in rows:
            lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)))
        return "\n".join(lines)


def occupancy_iou(grid_a: np.ndarray, grid_b: np.ndarray) -> float:
    a = np.asarray(grid_a, dtype=bool).ravel()
    b = np.asarray(grid_b, dtype=bool).ravel()
    union = np.sum(a | b)
    if union == 0:
        return 0.0
    return float(np.sum(a & b) / union)


def iou(pred, gt, resolution: int = IOU_RESOLUTION) -> float:
    """Volumetric IoU over the grid spanning the ground truth's bounding box.

    `pred` is a primitive iterable (or PrimitiveSet); `gt` a TriangleMesh or
    another primitive iterable.  Predicted volume outside the grid is
    clipped.
    """
    gt_grid = voxel_occupancy(gt, resolution)
    pred_prims = list(pred)
    centers = gt_grid.cell_centers()
    pred_occ = points_in_primitive_set(centers, pred_prims).reshape(gt_grid.occupancy.shape)
    return occupancy_iou(pred_occ, gt_grid.occupancy)


def _gt_mesh(gt) -> TriangleMesh:
    return gt if isinstance(gt, TriangleMesh) else primitive_set_mesh(list(gt))


def surface_distance(pred, gt, n_samples: int = SURFACE_SAMPLES, seed: int = 0,
                     direction: str = "symmetric") -> float:
    """Mean nearest-neighbor distance between surface samples of the
    prediction and the ground truth, normalized by the diameter of the
    sphere circumscribing the ground-truth bounding box (its diagonal).

    `direction`: "symmetric" (mean of both directions), "pred-to-gt" or
    "gt-to-pred".
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    pred_prims = list(pred)
    if not pred_prims:
        raise ValueError("empty prediction")
    gt_mesh = _gt_mesh(gt)
    pred_mesh = primitive_set_mesh(pred_prims)
    pred_pts, _ = sample_mesh_surface(pred_mesh, n_samples, seed)
    gt_pts, _ = sample_mesh_surface(gt_mesh, n_samples, seed + 1)
    lo, hi = gt_mesh.bounding_box()
    diameter = float(np.linalg.norm(hi - lo))
    if diameter <= 0:
        raise ValueError("degenerate ground-truth mesh")
    d_pg = cKDTree(gt_pts).query(pred_pts)[0].mean()
    d_gp = cKDTree(pred_pts).query(gt_pts)[0].mean()
    if direction == "pred-to-gt":
        dist = d_pg
    elif direction == "gt-to-pred":
        dist = d_gp
    elif direction == "symmetric":
        dist = 0.5 * (d_pg + d_gp)
    else:
        raise ValueError(f"unknown direction {direction!r}")
    return float(dist / diameter)


def face_label_accuracy(pred, gt_mesh: TriangleMesh, seed: int = 0,
                        samples_per_face: int = 10) -> float:
    """Fraction of ground-truth faces whose majority-vote predicted segment,
    after each segment is relabeled to its own face-majority ground-truth
    label, matches the ground truth.

    Points are sampled on the ground-truth surface (10x the face count by
    default), each assigned to the nearest predicted primitive; faces take
    the majority point label; predicted segments then adopt the majority
    ground-truth label of their faces.
    """
    if gt_mesh.face_labels is None:
        raise ValueError("ground-truth mesh has no face labels")
    pred_prims = list(pred)
    if not pred_prims:
        raise ValueError("empty prediction")
    n_faces = gt_mesh.n_faces
    n_points = samples_per_face * n_faces
    pts, face_ids = sample_mesh_surface(gt_mesh, n_points, seed)

    dists = np.stack([point_box_distance(pts, p) for p in pred_prims], axis=1)
    point_seg = dists.argmin(axis=1)

    n_seg = len(pred_prims)
    # face-level majority vote of point segments
    counts = np.zeros((n_faces, n_seg), dtype=np.int64)
    np.add.at(counts, (face_ids, point_seg), 1)
    sampled = counts.sum(axis=1) > 0
    face_seg = counts.argmax(axis=1)

    # relabel each predicted segment by the ground-truth majority of its faces
    labels = np.unique(gt_mesh.face_labels)
    label_index = {int(l): i for i, l in enumerate(labels)}
    seg_vote = np.zeros((n_seg, len(labels)), dtype=np.int64)
    for f in range(n_faces):
        if sampled[f]:
            seg_vote[face_seg[f], label_index[int(gt_mesh.face_labels[f])]] += 1
    seg_label = labels[seg_vote.argmax(axis=1)]

    predicted = np.full(n_faces, -1, dtype=np.int64)
    predicted[sampled] = seg_label[face_seg[sampled]]
    return float(np.mean(predicted == gt_mesh.face_labels))
