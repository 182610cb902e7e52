"""Command-line interface.

Subcommands: fit, render-depth, dataset build, train, generate, complete,
eval iou|surface|seg.  Exit code 0 on success, 2 on usage errors; other
failures print a one-line JSON error object to stderr and exit 1.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np


def _config(args):
    from .pipeline import PipelineConfig

    cfg = PipelineConfig.from_file(args.config) if getattr(args, "config", None) \
        else PipelineConfig()
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    return cfg


def _load_points(path):
    from .geometry import sample_mesh_surface
    from .meshio import load_obj, load_xyz

    path = str(path)
    if path.endswith(".obj"):
        return load_obj(path), None
    return None, load_xyz(path)


def cmd_fit(args) -> int:
    from .geometry import sample_mesh_surface
    from .parser import ParserConfig, fit_primitives, save_primitive_set

    cfg = _config(args)
    mesh, points = _load_points(args.input)
    if points is None:
        points, _ = sample_mesh_surface(mesh, args.points, args.seed or 0)
    parser_cfg = ParserConfig(**{**cfg.parser.__dict__, "seed": args.seed or cfg.seed})
    prim_set = fit_primitives(points, parser_cfg)
    out = args.output or (Path(args.input).stem + ".prims.json")
    save_primitive_set(out, prim_set, source_file=str(args.input),
                       seed=args.seed or cfg.seed)
    if not prim_set.coverage_reached:
        print(f"warning: coverage target not reached ({prim_set.coverage:.3f})",
              file=sys.stderr)
    print(json.dumps({"output": str(out), "primitives": len(prim_set),
                      "coverage": prim_set.coverage,
                      "coverage_reached": prim_set.coverage_reached}, sort_keys=True))
    return 0


def cmd_render_depth(args) -> int:
    from .meshio import load_obj, save_depth_grid, save_depth_pgm
    from .pipeline import render_depth

    cfg = _config(args)
    mesh = load_obj(args.input)
    images, views = render_depth(mesh, args.seed or cfg.seed, cfg.render)
    out_dir = Path(args.output or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = Path(args.input).stem
    written = []
    for i, img in enumerate(images):
        path = out_dir / f"{stem}.view{i}.pgm"
        save_depth_pgm(path, img)
        if args.also_grid:
            save_depth_grid(out_dir / f"{stem}.view{i}.txt", img)
        written.append(str(path))
    print(json.dumps({"outputs": written,
                      "views": [list(v) for v in np.round(views, 6).tolist()]},
                     sort_keys=True))
    return 0


def cmd_dataset_build(args) -> int:
    from .pipeline import build_dataset

    cfg = _config(args)
    manifest = build_dataset(args.meshes, args.output, cfg,
                             log=lambda m: print(m, file=sys.stderr))
    print(json.dumps({"output": str(args.output),
                      "shapes": len(manifest["shapes"]),
                      "failures": len(manifest["failures"])}, sort_keys=True))
    return 0


def cmd_train(args) -> int:
    from .network import save_weights
    from .pipeline import train_on_dataset

    cfg = _config(args)
    if args.unconditioned:
        cfg.encoder_kind = "none"
    if args.encoder:
        cfg.encoder_kind = args.encoder
    weights, history = train_on_dataset(args.dataset, cfg,
                                        conditioned=not args.unconditioned)
    save_weights(args.output, weights)
    print(json.dumps({"output": str(args.output), "epochs": history["epochs"],
                      "final_loss": history["final"][-1] if history["final"] else None},
                     sort_keys=True))
    return 0


def cmd_generate(args) -> int:
    from .network import load_weights
    from .parser import PrimitiveSet, save_primitive_set
    from .tokens import TokenSequence
    from .tokens import detokenize
    from .training import draw_init_token, generate

    weights = load_weights(args.weights)
    rng = np.random.default_rng(args.seed or 0)
    outputs = []
    for i in range(args.count):
        init = draw_init_token(weights, rng)
        tokens = generate(weights, init, d=None, max_steps=args.max_steps,
                          mode=args.mode, seed=(args.seed or 0) + 1000 + i)
        prims = detokenize(TokenSequence.from_array(tokens, weights.stats),
                           weights.stats)
        out = Path(args.output) / f"sample{i:03d}.prims.json"
        out.parent.mkdir(parents=True, exist_ok=True)
        save_primitive_set(out, PrimitiveSet(prims, [np.zeros(0, dtype=np.int64)
                                                     for _ in prims]))
        if args.obj:
            _export_obj(out.with_suffix(".obj"), prims)
        outputs.append(str(out))
    print(json.dumps({"outputs": outputs}, sort_keys=True))
    return 0


def _export_obj(path, prims) -> None:
    from .geometry import primitive_set_mesh
    from .meshio import save_obj

    if prims:
        save_obj(path, primitive_set_mesh(prims))


def cmd_complete(args) -> int:
    from .meshio import load_depth_image
    from .network import load_weights
    from .parser import PrimitiveSet, save_primitive_set
    from .pipeline import complete_from_depth

    weights = load_weights(args.weights)
    img = load_depth_image(args.depth)
    prims, _ = complete_from_depth(weights, img, max_steps=args.max_steps,
                                   mode=args.mode, seed=args.seed or 0)
    out = args.output or (Path(args.depth).stem + ".prims.json")
    save_primitive_set(out, PrimitiveSet(prims, [np.zeros(0, dtype=np.int64)
                                                 for _ in prims]))
    if args.obj:
        _export_obj(Path(out).with_suffix(".obj"), prims)
    print(json.dumps({"output": str(out), "primitives": len(prims)}, sort_keys=True))
    return 0


def _load_eval_inputs(args):
    from .meshio import load_obj
    from .parser import load_primitive_set

    pred = load_primitive_set(args.pred)
    gt = load_obj(args.gt)
    return pred, gt


def cmd_eval_iou(args) -> int:
    from .metrics import iou

    pred, gt = _load_eval_inputs(args)
    value = iou(pred.primitives, gt)
    print(f"{value:.6f}")
    return 0


def cmd_eval_surface(args) -> int:
    from .metrics import surface_distance

    pred, gt = _load_eval_inputs(args)
    value = surface_distance(pred.primitives, gt, n_samples=args.samples,
                             seed=args.seed or 0, direction=args.direction)
    print(f"{value:.6f}")
    return 0


def cmd_eval_seg(args) -> int:
    from .metrics import face_label_accuracy
    from .meshio import load_obj
    from .parser import load_primitive_set

    pred = load_primitive_set(args.pred)
    gt = load_obj(args.gt)
    if args.gt_labels:
        labels = np.array([int(line) for line in
                           Path(args.gt_labels).read_text().split()])
        if len(labels) != gt.n_faces:
            raise ValueError("label file length does not match face count")
        gt.face_labels = labels
    value = face_label_accuracy(pred.primitives, gt, seed=args.seed or 0)
    print(f"{value:.6f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="primgen",
                                 description="Cuboid shape abstraction and generation")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="decompose a mesh or point cloud into cuboids")
    p.add_argument("--input", required=True, help=".obj mesh or .xyz point cloud")
    p.add_argument("--output", help="output prims JSON (default <input>.prims.json)")
    p.add_argument("--points", type=int, default=1200, help="surface samples for meshes")
    p.add_argument("--seed", type=int)
    p.add_argument("--config")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("render-depth", help="render depth views of a mesh")
    p.add_argument("--input", required=True)
    p.add_argument("--output", help="output directory")
    p.add_argument("--also-grid", action="store_true", help="write float-grid text too")
    p.add_argument("--seed", type=int)
    p.add_argument("--config")
    p.set_defaults(func=cmd_render_depth)

    p = sub.add_parser("dataset", help="dataset operations")
    dsub = p.add_subparsers(dest="dataset_command", required=True)
    pb = dsub.add_parser("build", help="build a token dataset from meshes")
    pb.add_argument("--meshes", required=True, help="directory of .obj files")
    pb.add_argument("--output", required=True)
    pb.add_argument("--seed", type=int)
    pb.add_argument("--config")
    pb.set_defaults(func=cmd_dataset_build)

    p = sub.add_parser("train", help="train the sequence generator")
    p.add_argument("--dataset", required=True)
    p.add_argument("--output", required=True, help="weights file")
    p.add_argument("--unconditioned", action="store_true",
                   help="ignore depth images (synthesis-only model)")
    p.add_argument("--encoder", choices=["tiny", "conv"])
    p.add_argument("--seed", type=int)
    p.add_argument("--config")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="sample shapes from a trained model")
    p.add_argument("--weights", required=True)
    p.add_argument("--output", required=True, help="output directory")
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--max-steps", type=int, default=60)
    p.add_argument("--mode", choices=["top2", "all", "greedy"], default="top2")
    p.add_argument("--obj", action="store_true", help="export cuboids as OBJ too")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("complete", help="complete a shape from one depth image")
    p.add_argument("--weights", required=True)
    p.add_argument("--depth", required=True, help=".pgm or float-grid depth image")
    p.add_argument("--output")
    p.add_argument("--max-steps", type=int, default=60)
    p.add_argument("--mode", choices=["top2", "all", "greedy"], default="greedy")
    p.add_argument("--obj", action="store_true")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_complete)

    p = sub.add_parser("eval", help="evaluation metrics")
    esub = p.add_subparsers(dest="eval_command", required=True)
    pe = esub.add_parser("iou", help="volumetric IoU against a mesh")
    pe.add_argument("--pred", required=True)
    pe.add_argument("--gt", required=True)
    pe.set_defaults(func=cmd_eval_iou)
    pe = esub.add_parser("surface", help="normalized surface-to-surface distance")
    pe.add_argument("--pred", required=True)
    pe.add_argument("--gt", required=True)
    pe.add_argument("--samples", type=int, default=5000)
    pe.add_argument("--direction", default="symmetric",
                    choices=["symmetric", "pred-to-gt", "gt-to-pred"])
    pe.add_argument("--seed", type=int)
    pe.set_defaults(func=cmd_eval_surface)
    pe = esub.add_parser("seg", help="face labeling accuracy")
    pe.add_argument("--pred", required=True)
    pe.add_argument("--gt", required=True)
    pe.add_argument("--gt-labels", help="text file, one integer label per face")
    pe.add_argument("--seed", type=int)
    pe.set_defaults(func=cmd_eval_seg)

    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:
        print(json.dumps({"error": str(exc), "type": type(exc).__name__}),
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
