import numpy as np, time
from scipy.optimize import linear_sum_assignment
from primgen.geometry import Primitive, voxel_occupancy, points_in_primitive_set
from primgen.parser import ParserConfig, fit_primitives
from primgen.synthetic import random_cuboid, surface_cloud, furniture_shape

def iou_vs(pred_list, gens):
    grid = voxel_occupancy(gens, 30)
    a = points_in_primitive_set(grid.cell_centers(), pred_list)
    b = grid.occupancy.ravel()
    return np.sum(a & b) / max(1, np.sum(a | b))

def single_cuboid_trials(k, n_pts, n_trials=6):
    rng = np.random.default_rng(11)
    times, ious, nprims, convs = [], [], [], []
    for trial in range(n_trials):
        rot = 0.6 if trial % 2 else 0.0
        g0 = random_cuboid(rng, extent_range=(1.5, 4.5), center_span=1.0, max_rotation=rot)
        gen = Primitive(g0.scale*k, g0.translation*k, g0.rotation, axis_flags=g0.axis_flags)
        Q = surface_cloud([gen], n_pts, seed=300+trial)
        t0 = time.time()
        ps = fit_primitives(Q, ParserConfig(seed=trial))
        dt = time.time()-t0
        i = iou_vs(list(ps.primitives), [gen])
        times.append(dt); ious.append(i); nprims.append(len(ps))
        if ps.diagnostics["rounds"]:
            convs.append(ps.diagnostics["rounds"][0]["converged_iteration"])
        print(f"  k={k} t{trial} rot={rot}: IoU={i:.3f} prims={len(ps)} cov={ps.coverage:.3f} {dt:.0f}s", flush=True)
    print(f"k={k}: IoU>=0.8 in {sum(x>=0.8 for x in ious)}/{n_trials}, median t={np.median(times):.0f}s, conv<=5: {sum(1 for c in convs if 0 < c <= 5)}/{len(convs)}", flush=True)

def furniture_trials(k, n_pts, n_trials=3):
    rng = np.random.default_rng(21)
    for trial in range(n_trials):
        gens0 = furniture_shape(rng)
        gens = [Primitive(p.scale*k, p.translation*k, p.rotation) for p in gens0]
        Q = surface_cloud(gens, n_pts, seed=900+trial)
        t0=time.time()
        ps = fit_primitives(Q, ParserConfig(seed=50+trial))
        dt=time.time()-t0
        # hungarian center matching
        lo = Q.min(0); hi = Q.max(0); diag = np.linalg.norm(hi-lo)
        C = np.array([[np.linalg.norm(g.translation - p.translation) for p in ps.primitives] for g in gens]) if len(ps) else np.zeros((len(gens),0))
        matched = 0
        if len(ps):
            ri, ci = linear_sum_assignment(C)
            matched = sum(1 for a,b in zip(ri,ci) if C[a,b] < 0.1*diag)
        print(f"  k={k} furn t{trial}: gens={len(gens)} prims={len(ps)} cov={ps.coverage:.3f} reached={ps.coverage_reached} matched={matched}/{len(gens)} iou={iou_vs(list(ps.primitives), gens):.3f} plane={ps.symmetry_plane} {dt:.0f}s", flush=True)

for k in (1, 2, 4):
    single_cuboid_trials(k, 800, 6)
for k in (1, 2, 4):
    furniture_trials(k, 1500, 3)
