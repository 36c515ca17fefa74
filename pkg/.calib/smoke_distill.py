import numpy as np
from pathlib import Path
from fieldmerge.scene import load_dataset
from fieldmerge.training import desk_config, train_expert, scene_bounds, fresh_field
from fieldmerge.field import load_field, render_image, params_equal, save_field
from fieldmerge.distill import (ExpertRegistry, DistillConfig, desk_distill_config,
                                indicator, interp_center, sample_distill_rays,
                                teacher_forward, distill_alpha, distill_color,
                                distill_hist, total_distill_loss, distill, finetune)
from fieldmerge.metrics import psnr
import copy

ds = load_dataset(Path("/root/pkg/.calib/ds45"))
ck = Path("/root/pkg/.calib/smoke")
ck.mkdir(exist_ok=True)

cfg = desk_config(200, batch_rays=512)
b0 = train_expert(ds, list(range(0, 22)), cfg, ck / "e0.ckpt", partition_id=0)
b1 = train_expert(ds, list(range(22, 45)), cfg, ck / "e1.ckpt", partition_id=1)
m0, m1 = load_field(b0.checkpoint), load_field(b1.checkpoint)
reg = ExpertRegistry(models=[m0, m1], groups=[list(range(0, 22)), list(range(22, 45))],
                     method="azimuth", poses=ds.views["train"].poses,
                     checkpoints=[b0.checkpoint, b1.checkpoint])

# indicator basics
assert indicator(reg, view=3) == 0 and indicator(reg, view=30) == 1
c = ds.views["train"].poses[5].center
assert indicator(reg, center=c) == 0

# slerp endpoint
c0 = ds.views["train"].poses[0].center
c1 = ds.views["train"].poses[1].center
assert np.linalg.norm(interp_center(c0, c1, 0.0) - c0) < 1e-9
assert np.linalg.norm(interp_center(c0, c1, 1.0) - c1) < 1e-9

rng = np.random.default_rng(0)
batch = sample_distill_rays(reg, 256, 0.5, rng)
print("virtual count", batch.virtual.sum(), "experts", np.bincount(batch.expert))
assert np.all(np.abs(np.linalg.norm(batch.dirs, axis=1) - 1) < 1e-12)
tg = teacher_forward(reg, batch, rng)
print("targets alpha range", tg.alpha.min(), tg.alpha.max())

# copied student: all distill terms exactly zero
student = copy.deepcopy(m0)
reg1 = ExpertRegistry(models=[m0], groups=[list(range(45))], method="azimuth",
                      poses=ds.views["train"].poses)
rng = np.random.default_rng(1)
batch = sample_distill_rays(reg1, 128, 0.5, rng)
tg = teacher_forward(reg1, batch, rng)
la = distill_alpha(student, tg)
lc = distill_color(student, tg)
lh = distill_hist(student, batch, tg)
print("copied student terms", la, lc, lh)
assert la == 0.0 and lc == 0.0 and lh == 0.0

dc = desk_distill_config(100, 0, batch_rays=256)
tot = total_distill_loss({"color": 1.0, "alpha": 1.0, "hist": 1.0, "orig": 0.0},
                         DistillConfig())
assert abs(tot - 1.0) < 1e-12, tot

# short distill run moves a fresh student toward the teacher
student = fresh_field(ds, desk_config(100))
before = [psnr(render_image(student, ds.views["train"].poses[v], (1., 1., 1.)),
               render_image(m0, ds.views["train"].poses[v], (1., 1., 1.)))
          for v in (0, 20, 40)]
ref0 = m0.proposal.raw.copy()
log = distill(reg1, student, dc)
after = [psnr(render_image(student, ds.views["train"].poses[v], (1., 1., 1.)),
              render_image(m0, ds.views["train"].poses[v], (1., 1., 1.)))
         for v in (0, 20, 40)]
print("distill 100 steps:", np.mean(before), "->", np.mean(after), "log", log)
assert np.array_equal(ref0, m0.proposal.raw), "teacher mutated"
assert np.mean(after) > np.mean(before) + 3

# finetune identity at 0 iterations
snap = copy.deepcopy(student)
out = finetune(student, ds, desk_distill_config(100, 0))
assert out == [] and params_equal(snap, student)
print("smoke OK")
