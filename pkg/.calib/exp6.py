import time, numpy as np
from pathlib import Path
from fieldmerge.scene import twotone_scene, gen_dataset, load_dataset
from fieldmerge.partition import percentile_partition
from fieldmerge.training import desk_config, train_expert, train_baseline, fresh_field
from fieldmerge.field import load_field, render_image
from fieldmerge.distill import ExpertRegistry, desk_distill_config, distill, finetune
from fieldmerge.metrics import psnr

T0 = time.perf_counter()
def mark(msg):
    print(f"[{time.perf_counter()-T0:7.1f}s] {msg}", flush=True)

root = Path("/root/pkg/.calib/ds180")
if not (root / "meta.json").exists():
    gen_dataset(twotone_scene(), n_train=180, n_test=64, radius=4.0,
                resolution=64, seed=0, out=root, samples_per_ray=512)
    mark("dataset generated")
ds = load_dataset(root)
B = 2000

pset = percentile_partition(ds.views["train"].poses, 4)
mark(f"partition sizes {pset.sizes()}")

models = []
for pid, group in enumerate(pset.groups):
    b = train_expert(ds, group, desk_config(B, seed=pid), root / f"e{pid}.ckpt",
                     partition_id=pid)
    mark(f"expert {pid} trained, final probe {b.log[-1]['psnr']:.2f}")
    models.append(load_field(b.checkpoint))

reg = ExpertRegistry(models=models, groups=pset.groups, method=pset.method,
                     poses=ds.views["train"].poses)
student = fresh_field(ds, desk_config(B))
dcfg = desk_distill_config(B, B)
log = distill(reg, student, dcfg)
mark(f"distill done, fidelity {log[-1]['teacher_psnr']:.2f}")
ft = finetune(student, ds, dcfg)
mark(f"finetune done, probe {ft[-1]['psnr']:.2f}")

base1 = train_baseline(ds, desk_config(B), root / "b1.ckpt")
mark(f"baseline@B done, probe {base1.log[-1]['psnr']:.2f}")
base2 = train_baseline(ds, desk_config(2 * B), root / "b2.ckpt")
mark(f"baseline@2B done, probe {base2.log[-1]['psnr']:.2f}")

m_b1 = load_field(base1.checkpoint)
m_b2 = load_field(base2.checkpoint)
poses = ds.views["test"].poses
def test_psnr(model):
    return float(np.mean([psnr(render_image(model, poses[i], ds.background),
                               ds.image("test", i)) for i in range(len(poses))]))
dac = test_psnr(student)
b1 = test_psnr(m_b1)
b2 = test_psnr(m_b2)
mark(f"eval done: DaC {dac:.3f}  baseline@B {b1:.3f}  baseline@2B {b2:.3f}")
print(f"signed delta (DaC - baseline@2B): {dac - b2:+.3f} dB", flush=True)
