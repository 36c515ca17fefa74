#!/usr/bin/env python3
"""Full comparison experiment: generate (or reuse) a synthetic dataset,
run divide / experts / distill / finetune, train matched baselines, and
print the three-arm score table with the signed delta.

Example:
    python scripts/run_comparison.py --out runs/twotone_k4 \
        --train 180 --test 64 --res 64 --k 4 --expert-iters 2000
"""

import argparse
import json
import sys
from pathlib import Path

from fieldmerge.pipeline import PipelineConfig, run_pipeline
from fieldmerge.scene import gen_dataset, scene_by_name


def parse_args():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--data", default=None,
                   help="existing dataset dir (default: generate under out)")
    p.add_argument("--scene", default="twotone")
    p.add_argument("--train", type=int, default=180)
    p.add_argument("--test", type=int, default=64)
    p.add_argument("--res", type=int, default=64)
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--method", default="percentile")
    p.add_argument("--overlap-deg", type=float, default=0.0,
                   help="azimuth sector widening, degrees")
    p.add_argument("--recipe", default="desk", choices=("desk", "paper"))
    p.add_argument("--expert-iters", type=int, default=2000)
    p.add_argument("--distill-iters", type=int, default=5000)
    p.add_argument("--finetune-iters", type=int, default=5000)
    p.add_argument("--virtual-fraction", type=float, default=0.5)
    p.add_argument("--warm-start", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=None)
    return p.parse_args()


def main():
    args = parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data = Path(args.data) if args.data else out / "dataset"
    if not (data / "meta.json").exists():
        print(f"generating {args.train}/{args.test} views at "
              f"{args.res}x{args.res} ...", flush=True)
        gen_dataset(scene_by_name(args.scene), n_train=args.train,
                    n_test=args.test, radius=4.0, resolution=args.res,
                    seed=args.seed, out=data)

    config = PipelineConfig(
        data=str(data), out=str(out), k=args.k, method=args.method,
        overlap_deg=args.overlap_deg, recipe=args.recipe,
        expert_iters=args.expert_iters, distill_iters=args.distill_iters,
        finetune_iters=args.finetune_iters, seed=args.seed,
        workers=args.workers, comparison=True,
        virtual_fraction=args.virtual_fraction, warm_start=args.warm_start)
    report = run_pipeline(config)

    wall = json.loads((out / "manifest.json").read_text())["wall_clock"]
    print(f"\n{'arm':<14}{'psnr':>8}{'ssim':>8}{'ms-ssim':>9}")
    for name in ("dac", "baseline_B", "baseline_2B"):
        m = report.arms[name]["metrics"]
        print(f"{name:<14}{m['psnr']:>8.3f}{m['ssim']:>8.4f}"
              f"{m['ms_ssim']:>9.4f}")
    delta = report.arms["dac"]["metrics"]["psnr"] \
        - report.arms["baseline_2B"]["metrics"]["psnr"]
    print(f"\nsigned delta (dac - baseline_2B): {delta:+.3f} dB")
    print("wall clock per stage:",
          ", ".join(f"{k} {v:.0f}s" for k, v in wall.items()))
    print(f"report: {out / 'report.json'}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
