import time, numpy as np
from pathlib import Path
from fieldmerge.scene import load_dataset
from fieldmerge.training import TrainConfig, build_ray_bank, init_adam, adam_step, lr_at, l_orig, scene_bounds
from fieldmerge.field import render_batch, render_backward, init_field, render_image
from fieldmerge.metrics import psnr

ds = load_dataset(Path("/root/pkg/.calib/ds45"))
o, d, c = build_ray_bank(ds, "train", list(range(45)))
near, far = scene_bounds(ds)

def run(tag, lr0, ltv, steps=2000, fres=48, batch=1024, warmup=256):
    cfg = TrainConfig(iterations=steps, lr0=lr0, warmup=warmup, seed=0,
                      fine_res=fres, batch_rays=batch, n_coarse=40, n_fine=24,
                      lambda_tv=ltv, lambda_prop=1.0)
    model = init_field(*ds.bbox, prop_res=32, fine_res=fres, n_coarse=40,
                       n_fine=24, near=near, far=far, init_sigma=0.1)
    rng = np.random.default_rng(0)
    params = model.params(); state = init_adam(params)
    t0 = time.perf_counter()
    for step in range(steps):
        pick = rng.integers(0, len(o), batch)
        b = render_batch(model, o[pick], d[pick], ds.background, rng=rng, stratified=True)
        diff = b.color - c[pick]
        g = model.zero_grads()
        render_backward(model, b, g, d_color=2*diff/diff.size)
        l_orig(model, b, g, cfg.lambda_tv, cfg.lambda_prop)
        adam_step(params, g, state, lr_at(step, cfg))
        if step + 1 in (1000, 2000):
            te = np.mean([psnr(render_image(model, ds.views["test"].poses[i], ds.background), ds.image("test", i)) for i in range(3)])
            tr = np.mean([psnr(render_image(model, ds.views["train"].poses[i], ds.background), ds.image("train", i)) for i in (0, 22, 44)])
            print(f"{tag} step {step+1:4d} test {te:6.2f} train {tr:6.2f} ({time.perf_counter()-t0:5.1f}s)", flush=True)

run("lr.1 tv0    f48", 0.1, 0.0)
run("lr.2 tv0    f48", 0.2, 0.0)
run("lr.3 tv0    f48", 0.3, 0.0)
run("lr.2 tv1e-9 f48", 0.2, 1e-9)
run("lr.2 tv0    f64", 0.2, 0.0, fres=64)
