"""Command-line front end: dataset generation, view partitioning, expert
and baseline training, distillation, finetuning, evaluation, rendering,
and the full comparison pipeline.

Every failure exits nonzero with a single stage-tagged line on stderr,
e.g. `[divide] error: ...`.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .distill import ExpertRegistry, distill, finetune, init_student
from .field import load_field, render_image, save_field
from .partition import load_partitions, save_partitions
from .pipeline import (PARTITION_METHODS, RECIPES, StageError, divide_views,
                       distill_recipe, evaluate, pipeline_config_from_dict,
                       run_pipeline, train_recipe)
from .scene import gen_dataset, load_dataset, save_image, scene_by_name
from .training import (bundle_from_dict, fresh_field, train_baseline,
                       train_experts)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="fieldmerge",
        description="Divide-and-conquer training for grid radiance fields.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="render a synthetic posed dataset")
    g.add_argument("--scene", default="twotone")
    g.add_argument("--train", type=int, default=180)
    g.add_argument("--test", type=int, default=64)
    g.add_argument("--res", type=int, default=64)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--radius", type=float, default=4.0)
    g.add_argument("--samples", type=int, default=512,
                   help="oracle samples per ray")
    g.add_argument("--out", required=True)

    d = sub.add_parser("divide", help="partition the training views")
    d.add_argument("--data", required=True)
    d.add_argument("--k", type=int, default=4)
    d.add_argument("--method", default="azimuth", choices=PARTITION_METHODS)
    d.add_argument("--overlap-deg", type=float, default=0.0)
    d.add_argument("--adjacency", default=None,
                   help="co-visibility weights (graph methods)")
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--out", required=True, help="partition manifest path")

    te = sub.add_parser("train-experts", help="one expert per partition")
    te.add_argument("--data", required=True)
    te.add_argument("--partitions", required=True)
    te.add_argument("--iters", type=int, default=5000)
    te.add_argument("--seed", type=int, default=0)
    te.add_argument("--workers", type=int, default=None)
    te.add_argument("--recipe", default="desk", choices=RECIPES)
    te.add_argument("--out", required=True, help="output directory")

    tb = sub.add_parser("train-baseline", help="single field on all views")
    tb.add_argument("--data", required=True)
    tb.add_argument("--iters", type=int, default=5000)
    tb.add_argument("--seed", type=int, default=0)
    tb.add_argument("--recipe", default="desk", choices=RECIPES)
    tb.add_argument("--out", required=True, help="checkpoint path")

    di = sub.add_parser("distill", help="merge experts into one student")
    di.add_argument("--experts", required=True,
                    help="directory with experts.json")
    di.add_argument("--data", required=True)
    di.add_argument("--partitions", required=True)
    di.add_argument("--iters", type=int, default=5000)
    di.add_argument("--virtual-fraction", type=float, default=0.5)
    di.add_argument("--warm-start", action="store_true",
                    help="init the student from the largest expert")
    di.add_argument("--seed", type=int, default=0)
    di.add_argument("--recipe", default="desk", choices=RECIPES)
    di.add_argument("--out", required=True, help="student checkpoint path")

    ft = sub.add_parser("finetune", help="photometric training from a ckpt")
    ft.add_argument("--ckpt", required=True)
    ft.add_argument("--data", required=True)
    ft.add_argument("--iters", type=int, default=5000)
    ft.add_argument("--seed", type=int, default=0)
    ft.add_argument("--recipe", default="desk", choices=RECIPES)
    ft.add_argument("--out", required=True, help="checkpoint path")

    ev = sub.add_parser("eval", help="score a checkpoint on a split")
    ev.add_argument("--ckpt", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--split", default="test")
    ev.add_argument("--out", default=None, help="metrics JSON path")

    rd = sub.add_parser("render", help="render one pose to a PNG")
    rd.add_argument("--ckpt", required=True)
    rd.add_argument("--pose", required=True,
                    help="view index, or a cameras.json path")
    rd.add_argument("--data", default=None,
                    help="dataset dir (required for an index pose)")
    rd.add_argument("--split", default="test")
    rd.add_argument("--index", type=int, default=0,
                    help="record index when --pose is a file")
    rd.add_argument("--out", required=True)

    pl = sub.add_parser("pipeline", help="full comparison run")
    pl.add_argument("--config", required=True, help="pipeline config JSON")
    return p


def _cmd_gen(args) -> int:
    scene = scene_by_name(args.scene)
    gen_dataset(scene, n_train=args.train, n_test=args.test,
                radius=args.radius, resolution=args.res, seed=args.seed,
                out=args.out, samples_per_ray=args.samples)
    print(f"wrote {args.train} train / {args.test} test views "
          f"({args.res}x{args.res}, scene {args.scene!r}) to {args.out}")
    return 0


def _cmd_divide(args) -> int:
    ds = load_dataset(args.data)
    pset = divide_views(ds, args.k, args.method,
                        overlap_deg=args.overlap_deg,
                        adjacency=args.adjacency, seed=args.seed)
    save_partitions(args.out, pset)
    print(f"method {pset.method!r}: {pset.k} partitions, "
          f"sizes {pset.sizes()} -> {args.out}")
    return 0


def _cmd_train_experts(args) -> int:
    pset = load_partitions(args.partitions)
    cfg = train_recipe(args.recipe, args.iters, args.seed)
    bundles = train_experts(args.data, pset.groups, cfg, args.out,
                            workers=args.workers)
    for b in bundles:
        tail = f"final probe {b.log[-1]['psnr']:.2f} dB" if b.log else "done"
        print(f"expert {b.partition_id}: {tail} "
              f"({b.wall_clock:.1f}s) -> {b.checkpoint}")
    return 0


def _cmd_train_baseline(args) -> int:
    ds = load_dataset(args.data)
    cfg = train_recipe(args.recipe, args.iters, args.seed)
    bundle = train_baseline(ds, cfg, args.out)
    tail = f"final probe {bundle.log[-1]['psnr']:.2f} dB" if bundle.log \
        else "done"
    print(f"baseline@{args.iters}: {tail} ({bundle.wall_clock:.1f}s) "
          f"-> {args.out}")
    return 0


def _cmd_distill(args) -> int:
    ds = load_dataset(args.data)
    pset = load_partitions(args.partitions)
    manifest = Path(args.experts) / "experts.json"
    bundles = [bundle_from_dict(d)
               for d in json.loads(manifest.read_text())]
    by_pid = {b.partition_id: b for b in bundles}
    models = [load_field(by_pid[pid].checkpoint)
              for pid in range(len(pset.groups))]
    registry = ExpertRegistry(models=models, groups=pset.groups,
                              method=pset.method,
                              poses=ds.views["train"].poses)
    cfg = distill_recipe(args.recipe, args.iters, 0, args.seed,
                         args.virtual_fraction, args.warm_start)
    student = init_student(registry, cfg, fresh_field(
        ds, train_recipe(args.recipe, max(args.iters, 1), args.seed)))
    log = distill(registry, student, cfg)
    save_field(args.out, student)
    tail = f"fidelity {log[-1]['teacher_psnr']:.2f} dB" if log else "done"
    print(f"distilled {len(models)} experts over {args.iters} steps: "
          f"{tail} -> {args.out}")
    return 0


def _cmd_finetune(args) -> int:
    ds = load_dataset(args.data)
    student = load_field(args.ckpt)
    cfg = distill_recipe(args.recipe, max(args.iters, 1), args.iters,
                         args.seed)
    log = finetune(student, ds, cfg)
    save_field(args.out, student)
    tail = f"final probe {log[-1]['psnr']:.2f} dB" if log else "done"
    print(f"finetuned {args.iters} steps: {tail} -> {args.out}")
    return 0


def _cmd_eval(args) -> int:
    ds = load_dataset(args.data)
    metrics = evaluate(args.ckpt, ds, split=args.split)
    if args.out:
        Path(args.out).write_text(
            json.dumps(metrics.to_dict(), indent=1, sort_keys=True) + "\n")
    print(f"{args.split}: psnr {metrics.psnr:.3f} dB  "
          f"ssim {metrics.ssim:.4f}  ms-ssim {metrics.ms_ssim:.4f}  "
          f"({len(metrics.per_image)} images)")
    return 0


def _cmd_render(args) -> int:
    model = load_field(args.ckpt)
    try:
        index = int(args.pose)
        pose_file = None
    except ValueError:
        index = args.index
        pose_file = args.pose
    if pose_file is None:
        if args.data is None:
            raise ValueError("an index pose needs --data for the cameras")
        ds = load_dataset(args.data)
        pose = ds.views[args.split].poses[index]
        background = ds.background
    else:
        from .geometry import load_cameras
        views = load_cameras(pose_file)
        merged = [p for split in sorted(views) for p in views[split].poses]
        if not 0 <= index < len(merged):
            raise ValueError(f"pose file has {len(merged)} records, "
                             f"index {index} is out of range")
        pose = merged[index]
        background = (1.0, 1.0, 1.0)
    save_image(args.out, render_image(model, pose, background))
    print(f"rendered {pose.width}x{pose.height} view -> {args.out}")
    return 0


def _cmd_pipeline(args) -> int:
    raw = json.loads(Path(args.config).read_text())
    config = pipeline_config_from_dict(raw)
    report = run_pipeline(config)
    for name, arm in sorted(report.arms.items()):
        print(f"{name}: psnr {arm['metrics']['psnr']:.3f} dB  "
              f"ssim {arm['metrics']['ssim']:.4f}")
    if "baseline_2B" in report.arms:
        delta = report.arms["dac"]["metrics"]["psnr"] \
            - report.arms["baseline_2B"]["metrics"]["psnr"]
        print(f"signed delta (dac - baseline_2B): {delta:+.3f} dB")
    print(f"report -> {Path(config.out) / 'report.json'}")
    return 0


_COMMANDS = {
    "gen": _cmd_gen,
    "divide": _cmd_divide,
    "train-experts": _cmd_train_experts,
    "train-baseline": _cmd_train_baseline,
    "distill": _cmd_distill,
    "finetune": _cmd_finetune,
    "eval": _cmd_eval,
    "render": _cmd_render,
    "pipeline": _cmd_pipeline,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except StageError as e:
        print(f"[{e.stage}] error: {e.__cause__}", file=sys.stderr)
        return 1
    except Exception as e:  # argparse handles its own usage errors
        print(f"[{args.command}] error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
