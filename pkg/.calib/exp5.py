import time, numpy as np
from pathlib import Path
from fieldmerge.scene import twotone_scene, gen_dataset, load_dataset
from fieldmerge.training import desk_config, train_expert, fresh_field
from fieldmerge.field import load_field, render_image
from fieldmerge.distill import ExpertRegistry, desk_distill_config, distill
from fieldmerge.metrics import psnr

root = Path("/root/pkg/.calib/ds45x16")
if not (root / "meta.json").exists():
    t0 = time.perf_counter()
    gen_dataset(twotone_scene(), n_train=45, n_test=16, radius=4.0,
                resolution=64, seed=0, out=root, samples_per_ray=512)
    print(f"gen {time.perf_counter()-t0:.1f}s", flush=True)
ds = load_dataset(root)

t0 = time.perf_counter()
bundle = train_expert(ds, list(range(45)), desk_config(2000), root / "teacher.ckpt")
print(f"teacher 2000 iters {time.perf_counter()-t0:.1f}s log {bundle.log[-1]}", flush=True)

teacher = load_field(bundle.checkpoint)
reg = ExpertRegistry(models=[teacher], groups=[list(range(45))],
                     method="azimuth", poses=ds.views["train"].poses)
student = fresh_field(ds, desk_config(2000))
dcfg = desk_distill_config(5000, 0)
t0 = time.perf_counter()
log = distill(reg, student, dcfg)
dt = time.perf_counter() - t0
print(f"distill 5000 steps {dt:.1f}s ({1000*dt/5000:.1f} ms/step)", flush=True)
for e in log:
    print(" ", e, flush=True)

poses = ds.views["test"].poses
vals = [psnr(render_image(student, p, ds.background),
             render_image(teacher, p, ds.background)) for p in poses]
print("student-vs-teacher on 16 held-out:", float(np.mean(vals)),
      "min", float(np.min(vals)), flush=True)
gt = [psnr(render_image(student, poses[i], ds.background), ds.image("test", i))
      for i in range(16)]
tgt = [psnr(render_image(teacher, poses[i], ds.background), ds.image("test", i))
       for i in range(16)]
print("student-vs-gt:", float(np.mean(gt)), " teacher-vs-gt:", float(np.mean(tgt)), flush=True)
