#!/usr/bin/env python3
"""Self-distillation fidelity experiment: train one expert on every view,
distill it into a fresh student without ever touching ground truth, and
report how closely the student reproduces the teacher's renders from
held-out poses.

Example:
    python scripts/self_distill.py --out runs/selfdistill --poses 16
"""

import argparse
import sys
from pathlib import Path

import numpy as np

from fieldmerge.distill import ExpertRegistry, desk_distill_config, distill
from fieldmerge.field import load_field, render_image, save_field
from fieldmerge.metrics import psnr
from fieldmerge.scene import gen_dataset, load_dataset, scene_by_name
from fieldmerge.training import desk_config, fresh_field, train_expert


def parse_args():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--scene", default="twotone")
    p.add_argument("--train", type=int, default=45)
    p.add_argument("--res", type=int, default=64)
    p.add_argument("--teacher-iters", type=int, default=2000)
    p.add_argument("--distill-iters", type=int, default=5000)
    p.add_argument("--poses", type=int, default=16,
                   help="held-out comparison poses")
    p.add_argument("--seed", type=int, default=0)
    return p.parse_args()


def main():
    args = parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data = out / "dataset"
    if not (data / "meta.json").exists():
        print(f"generating {args.train} training views ...", flush=True)
        gen_dataset(scene_by_name(args.scene), n_train=args.train,
                    n_test=args.poses, radius=4.0, resolution=args.res,
                    seed=args.seed, out=data)
    ds = load_dataset(data)

    tcfg = desk_config(args.teacher_iters, seed=args.seed)
    bundle = train_expert(ds, list(range(args.train)), tcfg,
                          out / "teacher.ckpt", partition_id=0)
    teacher = load_field(bundle.checkpoint)
    print(f"teacher trained ({bundle.wall_clock:.0f}s), "
          f"final probe {bundle.log[-1]['psnr']:.2f} dB")

    registry = ExpertRegistry(models=[teacher],
                              groups=[list(range(args.train))],
                              method="azimuth", poses=ds.views["train"].poses)
    student = fresh_field(ds, tcfg)
    dcfg = desk_distill_config(args.distill_iters, 0, seed=args.seed)
    log = distill(registry, student, dcfg)
    save_field(out / "student.ckpt", student)
    print(f"distilled {args.distill_iters} steps, "
          f"probe fidelity {log[-1]['teacher_psnr']:.2f} dB")

    poses = ds.views["test"].poses
    scores = []
    for pose in poses:
        t_img = render_image(teacher, pose, ds.background)
        s_img = render_image(student, pose, ds.background)
        scores.append(psnr(s_img, t_img))
    scores = np.array(scores)
    print(f"student-vs-teacher over {len(poses)} held-out poses: "
          f"mean {scores.mean():.2f} dB  min {scores.min():.2f} dB  "
          f"max {scores.max():.2f} dB")
    return 0


if __name__ == "__main__":
    sys.exit(main())
