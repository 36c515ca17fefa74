import tempfile, time, numpy as np
from pathlib import Path
from fieldmerge.scene import twotone_scene, gen_dataset
from fieldmerge.training import TrainConfig, build_ray_bank, init_adam, adam_step, lr_at, l_orig, scene_bounds
from fieldmerge.field import render_batch, render_backward, init_field, render_image
from fieldmerge.metrics import psnr

root = Path("/root/pkg/.calib/ds45")
if not (root / "meta.json").exists():
    gen_dataset(twotone_scene(), n_train=45, n_test=6, radius=4.0, resolution=64, seed=0, out=root, samples_per_ray=512)
from fieldmerge.scene import load_dataset
ds = load_dataset(root)
o, d, c = build_ray_bank(ds, "train", list(range(45)))
near, far = scene_bounds(ds)

def run(tag, batch, steps, n_coarse, n_fine):
    cfg = TrainConfig(iterations=steps, warmup=512, seed=0, fine_res=48,
                      batch_rays=batch, n_coarse=n_coarse, n_fine=n_fine)
    model = init_field(*ds.bbox, prop_res=32, fine_res=48, n_coarse=n_coarse,
                       n_fine=n_fine, near=near, far=far, init_sigma=0.1)
    rng = np.random.default_rng(0)
    params = model.params(); state = init_adam(params)
    t0 = time.perf_counter()
    marks = sorted({steps//4, steps//2, 2000, steps})
    for step in range(steps):
        pick = rng.integers(0, len(o), batch)
        b = render_batch(model, o[pick], d[pick], ds.background, rng=rng, stratified=True)
        diff = b.color - c[pick]
        g = model.zero_grads()
        render_backward(model, b, g, d_color=2*diff/diff.size)
        l_orig(model, b, g, cfg.lambda_tv, cfg.lambda_prop)
        adam_step(params, g, state, lr_at(step, cfg))
        if step + 1 in marks:
            te = np.mean([psnr(render_image(model, ds.views["test"].poses[i], ds.background), ds.image("test", i)) for i in range(6)])
            tr = psnr(render_image(model, ds.views["train"].poses[0], ds.background), ds.image("train", 0))
            print(f"{tag} step {step+1:5d} test {te:6.2f} train0 {tr:6.2f} ({time.perf_counter()-t0:6.1f}s)", flush=True)

run("A b1024 s5000 64/32", 1024, 5000, 64, 32)
run("B b2048 s2500 64/32", 2048, 2500, 64, 32)
run("C b1024 s5000 40/24", 1024, 5000, 40, 24)
run("D b2048 s5000 40/24", 2048, 5000, 40, 24)
