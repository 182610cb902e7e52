import numpy as np, time, sys
from scipy import ndimage
from primgen.energy import EnergyConfig, EnergyObjective
from primgen.geometry import Primitive, voxel_occupancy, points_in_primitive_set
from primgen.optim import alternate_fit, AlternationConfig, LbfgsConfig
from primgen.synthetic import random_cuboid, surface_cloud

def neg_points(Q, mode, resolution=30, cap=3000, seed=0):
    lo, hi = Q.min(0), Q.max(0)
    ext = np.maximum(hi - lo, 1e-9)
    pad = 0.5 if mode == "ambient" else 0.0
    lo2, hi2 = lo - pad*ext, hi + pad*ext
    cell = (hi2 - lo2) / resolution
    idx = np.clip(((Q - lo2) / cell).astype(int), 0, resolution - 1)
    occ = np.zeros((resolution,)*3, dtype=bool)
    occ[idx[:,0], idx[:,1], idx[:,2]] = True
    mask = ndimage.binary_fill_holes(occ) if mode == "ambient" else occ
    centers = lo2 + (np.argwhere(~mask) + 0.5) * cell
    if cap is not None and len(centers) > cap:
        keep = np.random.default_rng(seed).choice(len(centers), cap, replace=False)
        centers = centers[np.sort(keep)]
    return centers

def iou_vs(pred, gens):
    grid = voxel_occupancy(gens, 30)
    a = points_in_primitive_set(grid.cell_centers(), pred)
    b = grid.occupancy.ravel()
    return np.sum(a & b) / max(1, np.sum(a | b))

def run():
    rng = np.random.default_rng(3)
    for k in (2, 4, 8, 16):
        for mode in ("literal", "ambient"):
            for trial in range(4):
                rot = 0.6 if trial % 2 else 0.0
                g0 = random_cuboid(rng, extent_range=(1.5, 4.5), center_span=1.0, max_rotation=rot)
                gen = Primitive(g0.scale*k, g0.translation*k, g0.rotation, axis_flags=g0.axis_flags)
                Q = surface_cloud([gen], 1000, seed=77+trial)
                Qn = neg_points(Q, mode, seed=trial)
                obj_c = EnergyObjective(Q, Qn, EnergyConfig(sigma=2.0))
                obj_f = EnergyObjective(Q, Qn, EnergyConfig(sigma=0.5))
                lo, hi = Q.min(0), Q.max(0); ext = hi-lo
                t0 = time.time(); best = None
                for r in range(10):
                    rr = np.random.default_rng(123450+1000*trial + r)
                    prim0 = Primitive(rr.uniform(0.1,0.5,3)*ext, rr.uniform(lo,hi), np.zeros(3))
                    res = alternate_fit(prim0, Q, Qn, EnergyConfig(sigma=2.0),
                                        AlternationConfig(lbfgs=LbfgsConfig(max_iterations=12)),
                                        objective=obj_c)
                    if best is None or res.energy < best.energy: best = res
                fine = alternate_fit(best.primitive, Q, Qn, EnergyConfig(sigma=0.5),
                                     AlternationConfig(lbfgs=LbfgsConfig(max_iterations=25)),
                                     objective=obj_f)
                dt = time.time() - t0
                print(f"k={k:2d} {mode:8} t{trial} rot={rot}: "
                      f"Ec(gen)={obj_c.value(gen):12.1f} Ef(gen)={obj_f.value(gen):10.1f} "
                      f"Ebest_c={best.energy:12.1f} iou_c={iou_vs([best.primitive],[gen]):.2f} "
                      f"Ef_fit={fine.energy:10.1f} iou_f={iou_vs([fine.primitive],[gen]):.2f} {dt:.0f}s",
                      flush=True)

run()
