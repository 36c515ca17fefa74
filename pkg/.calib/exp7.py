"""Diagnose the finetune regression: distilled warm start + lr0=0.2 lands
below a from-scratch baseline. Sweep finetune lr from a longer distill."""
import time
import numpy as np
from pathlib import Path

from fieldmerge.scene import load_dataset
from fieldmerge.partition import percentile_partition
from fieldmerge.training import desk_config, train_field
from fieldmerge.field import load_field, save_field, render_image, copy_field
from fieldmerge.distill import (ExpertRegistry, desk_distill_config, distill,
                                indicator)
from fieldmerge.metrics import psnr
from fieldmerge.training import fresh_field

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
sub = list(range(0, len(poses), 4))          # 16-view eval subset

def test_psnr(model, idx=sub):
    return float(np.mean([psnr(render_image(model, poses[i], ds.background),
                               ds.image("test", i)) for i in idx]))

# ceiling: route each test view to its azimuth-nearest expert
ens = float(np.mean([psnr(render_image(models[indicator(reg, center=poses[i].center)],
                                       poses[i], ds.background),
                          ds.image("test", i)) for i in sub]))
mark(f"teacher-ensemble ceiling (16 views): {ens:.2f}")

B = 2000
student = fresh_field(ds, desk_config(B))
dcfg = desk_distill_config(5000, 0)
log = distill(reg, student, dcfg)
save_field(root / "student_d5000.ckpt", student)
mark(f"distill@5000 done, fidelity {log[-1]['teacher_psnr']:.2f}, "
     f"test {test_psnr(student):.2f}")

for lr0, warmup in [(0.2, 250), (0.1, 100), (0.05, 50), (0.02, 0)]:
    trial = copy_field(student)
    cfg = desk_config(B, lr0=lr0, warmup=warmup)
    ft = train_field(trial, ds, list(range(180)), cfg, log_probes=True)
    mark(f"finetune lr0={lr0:<4} warmup={warmup:<3} "
         f"probe {ft[-1]['psnr']:.2f}  test {test_psnr(trial):.2f}")
