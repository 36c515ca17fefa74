"""Finetune schedule sweep from the saved overlap-60 distilled student.

Also measures the routed-ensemble ceiling of the overlap experts (each
test view rendered by the expert owning its azimuth sector).
"""
import sys
import time

import numpy as np

sys.path.insert(0, "/root/pkg/src")

from fieldmerge.distill import desk_distill_config, finetune
from fieldmerge.field import copy_field, load_field, render_image
from fieldmerge.geometry import azimuth
from fieldmerge.metrics import psnr
from fieldmerge.scene import load_dataset

DS = "/root/pkg/.calib/ds180"
BASE2B = 34.861
TWO_PI = 2.0 * np.pi


def main():
    ds = load_dataset(DS)
    test_poses = ds.views["test"].poses

    def test_psnr(model):
        return float(np.mean([
            psnr(render_image(model, test_poses[i], ds.background),
                 ds.image("test", i)) for i in range(len(test_poses))]))

    experts = [load_field(f"{DS}/e60_{p}.ckpt") for p in range(4)]

    # routed ensemble: each test view uses the expert whose base sector
    # (no overlap) owns its azimuth
    scores = []
    for i, pose in enumerate(test_poses):
        sector = int((azimuth(pose.center) % TWO_PI) / (TWO_PI / 4)) % 4
        img = render_image(experts[sector], pose, ds.background)
        scores.append(psnr(img, ds.image("test", i)))
    print(f"routed o60 ensemble: {np.mean(scores):.3f} "
          f"(min {min(scores):.2f})", flush=True)

    base = load_field(f"{DS}/student_o60_d5000.ckpt")
    for steps, lr0, warm in ((4000, 0.05, 100), (2000, 0.15, 100),
                             (4000, 0.10, 100), (3000, 0.08, 100)):
        trial = copy_field(base)
        cfg = desk_distill_config(5000, steps, seed=0, finetune_lr0=lr0,
                                  finetune_warmup=warm)
        t0 = time.time()
        finetune(trial, ds, cfg)
        got = test_psnr(trial)
        print(f"ft@{steps} lr{lr0} w{warm}: {time.time() - t0:.0f}s "
              f"test {got:.3f} (delta {got - BASE2B:+.3f})", flush=True)


if __name__ == "__main__":
    main()
