"""Sequential cuboid extraction from a point cloud.

One round: run several randomly initialized block-alternation fits of the
weighted energy at the coarse bandwidth, keep the lowest-energy sane
candidate, re-fit it at the fine bandwidth, mirror it across the detected
symmetry plane if the shape has one, then retire the points it explains
(retired points join the negative set and repel later primitives).  Every
few accepted primitives each one is re-optimized against its own points
plus everything still unexplained.  Rounds stop at the coverage target or
the primitive budget.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .energy import EnergyConfig, EnergyObjective
from .geometry import (Primitive, PointCloud, euler_from_matrix,
                       mirror_primitive, point_box_distance, wrap_angles)
from .optim import AlternationConfig, LbfgsConfig, alternate_fit


@dataclass(frozen=True)
class ParserConfig:
    coverage_fraction: float = 0.97
    max_primitives: int = 20
    restarts: int = 10
    assign_eps: float = 0.03          # fraction of the cloud bbox diagonal
    sigma_coarse: float = 2.0
    sigma_fine: float = 0.5
    refine_period: int = 3
    symmetry_threshold: float = 0.02  # mean mirror-NN distance, fraction of diagonal
    seed: int = 0
    # negative-shape seeding: free cells of an occupancy grid over the padded
    # bounding box, after 1-cell dilation of the occupancy and hole filling
    neg_resolution: int = 30
    neg_dilation: int = 1
    neg_pad: float = 0.25
    neg_cap: int = 3000
    # robustness guards
    max_scale_factor: float = 2.0     # reject candidates larger than this x bbox extent
    min_fit_fraction: float = 0.01    # reject candidates explaining fewer points
    coarse_lbfgs_iterations: int = 12
    fine_lbfgs_iterations: int = 25
    alternation_iterations: int = 5
    delta_tolerance: float = 0.01

    def __post_init__(self):
        if not (0.0 < self.coverage_fraction <= 1.0):
            raise ValueError("coverage_fraction must lie in (0, 1]")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if self.assign_eps <= 0:
            raise ValueError("assign_eps must be positive")

    def energy_config(self, sigma: float) -> EnergyConfig:
        return EnergyConfig(sigma=sigma)

    def alternation_config(self, lbfgs_iterations: int) -> AlternationConfig:
        return AlternationConfig(
            max_iterations=self.alternation_iterations,
            delta_tolerance=self.delta_tolerance,
            lbfgs=LbfgsConfig(max_iterations=lbfgs_iterations),
        )


@dataclass
class PrimitiveSet:
    primitives: list
    fitted_indices: list            # per primitive, indices into the source cloud
    symmetry_plane: float = None    # x = value, or None
    coverage: float = 0.0
    coverage_reached: bool = True
    diagnostics: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.primitives)

    def __iter__(self):
        return iter(self.primitives)


def detect_symmetry(points, threshold_frac: float = 0.02):
    """Plane x = median if the cloud matches its mirror image, else None.

    Match quality is the symmetric mean nearest-neighbor distance between
    the cloud and its reflection, as a fraction of the bbox diagonal.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if pts.shape[0] == 0:
        raise ValueError("empty cloud")
    plane = float(np.median(pts[:, 0]))
    mirrored = pts.copy()
    mirrored[:, 0] = 2.0 * plane - mirrored[:, 0]
    diag = float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))
    if diag <= 0:
        return None
    tree = cKDTree(pts)
    d_fwd, _ = tree.query(mirrored)
    tree_m = cKDTree(mirrored)
    d_bwd, _ = tree_m.query(pts)
    score = 0.5 * (d_fwd.mean() + d_bwd.mean()) / diag
    return plane if score < threshold_frac else None


def free_space_samples(points, cfg: ParserConfig, rng: np.random.Generator):
    """Negative-shape seed points: centers of ambient free cells.

    The point-occupancy grid over the padded bounding box is dilated (so
    cells touching the evidence are not treated as free) and holes enclosed
    by the shape are filled; remaining free-cell centers are the ambient
    space the shape must not grow into.  A capped seeded subsample keeps the
    set small; the energy's alpha weighting is ratio-based, so subsampling
    roughly preserves the total negative weight.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    ext = np.maximum(hi - lo, 1e-9)
    lo = lo - cfg.neg_pad * ext
    hi = hi + cfg.neg_pad * ext
    n = cfg.neg_resolution
    cell = (hi - lo) / n
    idx = np.clip(((pts - lo) / cell).astype(np.int64), 0, n - 1)
    occ = np.zeros((n, n, n), dtype=bool)
    occ[idx[:, 0], idx[:, 1], idx[:, 2]] = True
    if cfg.neg_dilation > 0:
        occ = ndimage.binary_dilation(occ, iterations=cfg.neg_dilation)
    solid = ndimage.binary_fill_holes(occ)
    free = np.argwhere(~solid)
    centers = lo + (free + 0.5) * cell
    if cfg.neg_cap and len(centers) > cfg.neg_cap:
        keep = rng.choice(len(centers), cfg.neg_cap, replace=False)
        centers = centers[np.sort(keep)]
    return centers


def assign_points(points, prim: Primitive, eps_frac: float, diagonal: float = None):
    """Indices of points within eps * diagonal of the cuboid (0 inside)."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if pts.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)
    if diagonal is None:
        diagonal = float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))
    dist = point_box_distance(pts, prim)
    return np.flatnonzero(dist <= eps_frac * diagonal)


def _random_start(rng: np.random.Generator, lo, hi, ext) -> Primitive:
    scale = rng.uniform(0.1, 0.5, 3) * ext
    translation = rng.uniform(lo, hi)
    return Primitive(scale, translation, np.zeros(3))


def _pca_candidate(points) -> Primitive:
    """Oriented box from the principal axes of a point subset: the signed
    axis permutation closest to the identity (det +1) gives the rotation,
    local extents the scale.  Strong init when the subset is one part."""
    pts = np.asarray(points, dtype=np.float64)
    center = pts.mean(axis=0)
    centered = pts - center
    cov = centered.T @ centered / max(1, len(pts))
    _, vecs = np.linalg.eigh(cov)
    best = None
    from itertools import permutations
    for perm in permutations(range(3)):
        p = vecs[:, list(perm)]
        for sx in (1.0, -1.0):
            for sy in (1.0, -1.0):
                sz = 1.0 if np.linalg.det(p * np.array([sx, sy, 1.0])) > 0 else -1.0
                q = p * np.array([sx, sy, sz])
                if np.linalg.det(q) < 0:
                    continue
                score = np.trace(q)
                if best is None or score > best[0]:
                    best = (score, q)
    r = best[1]
    local = centered @ r
    lo, hi = local.min(axis=0), local.max(axis=0)
    scale = np.maximum(hi - lo, 1e-6)
    translation = center + r @ ((hi + lo) / 2.0)
    return Primitive(scale, translation, wrap_angles(euler_from_matrix(r)))


def _sane(prim: Primitive, ext, factor: float = 2.0) -> bool:
    """Guard against the runaway-inflation direction of the energy (volume
    reward is unbounded); candidates beyond factor x bbox extent are junk."""
    return bool(np.all(prim.scale <= factor * np.max(ext)))


def _fit_round(points_pos, points_neg, cfg: ParserConfig, round_seed, ext, lo, hi):
    """Random-restart coarse fits followed by one fine re-fit of the winner.

    The coarse screen runs on the positive term only: with the blur
    bandwidth comparable to the shape, the weighted energy of any candidate
    can turn positive (the negative mass outweighs every match), and its
    minimum is then the empty fit.  The negative shape enters at the fine
    re-fit, where it does its intended job of stopping growth into free
    space.

    Returns (fine result, winning coarse result) or (None, None) when every
    restart produced an insane candidate (fled or inflated beyond bounds).
    """
    coarse_obj = EnergyObjective(points_pos, None, cfg.energy_config(cfg.sigma_coarse))
    alt_coarse = cfg.alternation_config(cfg.coarse_lbfgs_iterations)
    cap = np.full(3, 1.25 * float(np.max(ext)))
    best = None
    for r in range(cfg.restarts):
        rng = np.random.default_rng(np.random.SeedSequence(
            entropy=cfg.seed, spawn_key=(round_seed, r)))
        prim0 = _random_start(rng, lo, hi, ext)
        try:
            res = alternate_fit(prim0, points_pos, None,
                                cfg.energy_config(cfg.sigma_coarse),
                                alt_coarse, objective=coarse_obj, scale_cap=cap)
        except (ValueError, FloatingPointError):
            continue
        if not np.isfinite(res.energy) or not _sane(res.primitive, ext, cfg.max_scale_factor):
            continue
        if best is None or res.energy < best.energy:
            best = res
    if best is None:
        return None, None
    fine_obj = EnergyObjective(points_pos, points_neg, cfg.energy_config(cfg.sigma_fine))
    alt_fine = cfg.alternation_config(cfg.fine_lbfgs_iterations)
    sigma_mid = float(np.sqrt(cfg.sigma_coarse * cfg.sigma_fine))

    # two refinement paths from the winning coarse candidate: the annealed
    # axis-aligned descent, and a principal-axes re-initialization from the
    # points the candidate explains (rescues rotated parts, which the
    # theta = 0 restarts reach poorly)
    starts = [best.primitive]
    near = point_box_distance(points_pos, best.primitive) <= 0.1 * float(np.linalg.norm(ext))
    if near.sum() >= 10:
        starts.append(_pca_candidate(points_pos[near]))
    fine = None
    for start in starts:
        prim = start
        # anneal the bandwidth: a direct coarse -> fine jump strands
        # over-grown candidates outside the fine kernel range
        if sigma_mid > cfg.sigma_fine * 1.5:
            try:
                mid = alternate_fit(prim, points_pos, None, cfg.energy_config(sigma_mid),
                                    cfg.alternation_config(cfg.coarse_lbfgs_iterations),
                                    scale_cap=cap)
            except (ValueError, FloatingPointError):
                continue
            if _sane(mid.primitive, ext, cfg.max_scale_factor):
                prim = mid.primitive
        try:
            cand = alternate_fit(prim, points_pos, points_neg,
                                 cfg.energy_config(cfg.sigma_fine),
                                 alt_fine, objective=fine_obj, scale_cap=cap)
        except (ValueError, FloatingPointError):
            continue
        if not _sane(cand.primitive, ext, cfg.max_scale_factor):
            continue
        if fine is None or cand.energy < fine.energy:
            fine = cand
    if fine is None:
        fine = best  # both refinement paths inflated; keep the coarse candidate
    return fine, best


def fit_primitives(cloud, cfg: ParserConfig = ParserConfig()) -> PrimitiveSet:
    """Decompose a point cloud into cuboids (sequential extraction)."""
    if isinstance(cloud, PointCloud):
        points = cloud.points
        user_neg = cloud.negative if len(cloud.negative) else None
    else:
        points = np.asarray(cloud, dtype=np.float64).reshape(-1, 3)
        user_neg = None
    n_total = points.shape[0]
    if n_total < 10:
        raise ValueError("need at least 10 points to parse a shape")

    lo, hi = points.min(axis=0), points.max(axis=0)
    ext = np.maximum(hi - lo, 1e-9)
    diag = float(np.linalg.norm(hi - lo))
    rng = np.random.default_rng(np.random.SeedSequence(entropy=cfg.seed, spawn_key=(0xFEED,)))
    neg_seed = free_space_samples(points, cfg, rng) if user_neg is None else user_neg
    plane = detect_symmetry(points, cfg.symmetry_threshold)

    unfitted = np.ones(n_total, dtype=bool)
    prims, fitted_sets = [], []
    fitted_points = np.zeros((0, 3))
    diagnostics = {"rounds": [], "plane": plane}
    round_idx = 0
    attempts_left = 1   # one retry per round for sliver candidates
    since_refine = 0

    def coverage() -> float:
        return 1.0 - unfitted.sum() / n_total

    while coverage() < cfg.coverage_fraction and len(prims) < cfg.max_primitives:
        pos = points[unfitted]
        if pos.shape[0] == 0:
            break
        neg = np.vstack([neg_seed, fitted_points]) if len(fitted_points) else neg_seed
        fine, coarse = _fit_round(pos, neg, cfg, round_idx, ext, lo, hi)
        round_idx += 1
        if fine is None:
            if attempts_left > 0:
                attempts_left -= 1
                continue
            break
        prim = fine.primitive
        local = assign_points(pos, prim, cfg.assign_eps, diag)
        if local.size < cfg.min_fit_fraction * n_total:
            if attempts_left > 0:
                attempts_left -= 1
                continue
            break  # retry also failed: nothing useful left to extract
        attempts_left = 1

        new_prims = [prim]
        if plane is not None and abs(prim.translation[0] - plane) > cfg.assign_eps * diag:
            mirrored = mirror_primitive(replace(prim, symmetric=True), 0, plane)
            if abs(mirrored.translation[0] - prim.translation[0]) > cfg.assign_eps * diag:
                new_prims = [replace(prim, symmetric=True), mirrored]

        for p in new_prims:
            idx_local = assign_points(points[unfitted], p, cfg.assign_eps, diag)
            global_idx = np.flatnonzero(unfitted)[idx_local]
            prims.append(p)
            fitted_sets.append(global_idx)
            unfitted[global_idx] = False
            fitted_points = np.vstack([fitted_points, points[global_idx]]) \
                if len(fitted_points) else points[global_idx]
            since_refine += 1
        diagnostics["rounds"].append({
            "round": round_idx - 1,
            "coarse_energy": coarse.energy,
            "fine_energy": fine.energy,
            "deltas": coarse.deltas,
            "converged_iteration": coarse.converged_iteration,
            "added": len(new_prims),
            "coverage": coverage(),
        })
        if since_refine >= cfg.refine_period and coverage() < cfg.coverage_fraction:
            result = PrimitiveSet(prims, fitted_sets, plane, coverage(), True, diagnostics)
            result = refine_set(result, points, cfg, neg_seed=neg_seed)
            prims, fitted_sets = result.primitives, result.fitted_indices
            since_refine = 0

    reached = coverage() >= cfg.coverage_fraction
    return PrimitiveSet(prims, fitted_sets, plane, coverage(), reached, diagnostics)


def refine_set(prim_set: PrimitiveSet, points, cfg: ParserConfig = ParserConfig(),
               neg_seed=None) -> PrimitiveSet:
    """Re-optimize each primitive at the fine bandwidth, others held fixed.

    The positive set for primitive t is its own fitted points plus every
    point no primitive has claimed; the negative set is the free-space seed
    plus the other primitives' fitted points.
    """
    if not prim_set.primitives:
        raise ValueError("empty primitive set")
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if neg_seed is None:
        rng = np.random.default_rng(np.random.SeedSequence(entropy=cfg.seed,
                                                           spawn_key=(0xFEED,)))
        neg_seed = free_space_samples(points, cfg, rng)
    claimed = np.zeros(len(points), dtype=bool)
    for idx in prim_set.fitted_indices:
        claimed[idx] = True
    unclaimed = np.flatnonzero(~claimed)
    ext = np.maximum(points.max(axis=0) - points.min(axis=0), 1e-9)

    new_prims = list(prim_set.primitives)
    alt = cfg.alternation_config(cfg.fine_lbfgs_iterations)
    for t in range(len(new_prims)):
        own = prim_set.fitted_indices[t]
        pos_idx = np.concatenate([own, unclaimed])
        if pos_idx.size == 0:
            continue
        others = [prim_set.fitted_indices[j] for j in range(len(new_prims)) if j != t]
        neg = neg_seed
        if others:
            other_idx = np.concatenate(others) if len(others) > 1 else others[0]
            if other_idx.size:
                neg = np.vstack([neg_seed, points[other_idx]])
        try:
            res = alternate_fit(new_prims[t], points[pos_idx], neg,
                                cfg.energy_config(cfg.sigma_fine), alt)
        except (ValueError, FloatingPointError):
            continue
        if _sane(res.primitive, ext, cfg.max_scale_factor):
            new_prims[t] = replace(res.primitive, symmetric=new_prims[t].symmetric)
    return PrimitiveSet(new_prims, list(prim_set.fitted_indices),
                        prim_set.symmetry_plane, prim_set.coverage,
                        prim_set.coverage_reached, prim_set.diagnostics)


def save_primitive_set(path, prim_set: PrimitiveSet, source_file: str = None,
                       seed: int = None) -> None:
    """JSON: one record per cuboid plus metadata."""
    records = [{
        "scale": p.scale.tolist(),
        "translation": p.translation.tolist(),
        "rotation": p.rotation.tolist(),
        "axis_flags": p.axis_flags.tolist(),
        "symmetric": bool(p.symmetric),
    } for p in prim_set.primitives]
    meta = {
        "symmetry_plane": prim_set.symmetry_plane,
        "source_file": source_file,
        "seed": seed,
        "coverage": prim_set.coverage,
        "coverage_reached": prim_set.coverage_reached,
    }
    Path(path).write_text(json.dumps({"primitives": records, "metadata": meta},
                                     indent=2, sort_keys=True) + "\n")


def load_primitive_set(path) -> PrimitiveSet:
    d = json.loads(Path(path).read_text())
    prims = [Primitive(r["scale"], r["translation"], r["rotation"],
                       axis_flags=r.get("axis_flags"),
                       symmetric=r.get("symmetric", False))
             for r in d["primitives"]]
    meta = d.get("metadata", {})
    return PrimitiveSet(prims, [np.zeros(0, dtype=np.int64) for _ in prims],
                        meta.get("symmetry_plane"),
                        meta.get("coverage", 0.0),
                        meta.get("coverage_reached", True))
