"""Close the remaining criterion-7 gap: longer gentle finetune from the
saved distilled student, plus a warm-start distill arm, all scored on
the full 64-view test split against the saved baselines."""
import time
import numpy as np
from pathlib import Path

from fieldmerge.scene import load_dataset
from fieldmerge.partition import percentile_partition
from fieldmerge.training import desk_config, train_field
from fieldmerge.field import load_field, render_image, copy_field
from fieldmerge.distill import (ExpertRegistry, desk_distill_config, distill,
                                finetune)
from fieldmerge.metrics import psnr

T0 = time.perf_counter()
def mark(msg):
    print(f"[{time.perf_counter()-T0:7.1f}s] {msg}", flush=True)

root = Path("/root/pkg/.calib/ds180")
ds = load_dataset(root)
pset = percentile_partition(ds.views["train"].poses, 4)
models = [load_field(root / f"e{pid}.ckpt") for pid in range(4)]
reg = ExpertRegistry(models=models, groups=pset.groups, method=pset.method,
                     poses=ds.views["train"].poses)
poses = ds.views["test"].poses

def test_psnr(model):
    return float(np.mean([psnr(render_image(model, poses[i], ds.background),
                               ds.image("test", i)) for i in range(len(poses))]))

b2 = test_psnr(load_field(root / "b2.ckpt"))
mark(f"baseline@2B on full test: {b2:.3f}")

d5000 = load_field(root / "student_d5000.ckpt")

for steps in (2000, 4000):
    trial = copy_field(d5000)
    cfg = desk_distill_config(5000, steps)
    ft = finetune(trial, ds, cfg)
    dac = test_psnr(trial)
    mark(f"fresh-distill@5000 + ft@{steps}: test {dac:.3f} "
         f"(delta {dac - b2:+.3f})")

student = copy_field(models[0])
dcfg = desk_distill_config(2000, 2000, warm_start=True)
log = distill(reg, student, dcfg)
mark(f"warm distill@2000 done, fidelity {log[-1]['teacher_psnr']:.2f}, "
     f"test {test_psnr(student):.3f}")
ft = finetune(student, ds, dcfg)
dac = test_psnr(student)
mark(f"warm distill@2000 + ft@2000: test {dac:.3f} (delta {dac - b2:+.3f})")
