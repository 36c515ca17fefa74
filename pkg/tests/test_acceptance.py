"""Release gates for the package, one test per gate in numeric order.

Gates 6 and 7 train real models on freshly generated datasets and
dominate the runtime (roughly half an hour of desktop CPU for the whole
file); everything else is oracle math that finishes in seconds. Gate 8
re-runs individual stages of gate 7's pipeline and byte-compares the
artifacts, so it shares that fixture instead of training again.
"""

import math
import time

import numpy as np
import pytest

from fieldmerge.distill import (
    ExpertRegistry,
    desk_distill_config,
    distill,
    distill_alpha,
    distill_color,
    distill_hist,
    finetune,
    init_student,
    sample_distill_rays,
    teacher_forward,
)
from fieldmerge.field import (
    init_field,
    load_field,
    render_backward,
    render_batch,
    render_image,
    save_field,
)
from fieldmerge.geometry import (
    fibonacci_hemisphere,
    fps_select,
    look_at_camera,
)
from fieldmerge.histograms import HIST_EPS, SampleHistogram, bound, hist_loss
from fieldmerge.metrics import SSIM_C1, ms_ssim, psnr, psnr_from_mse, ssim
from fieldmerge.partition import (
    CommunityConfig,
    azimuth_partition,
    louvain,
    modularity,
    percentile_partition,
    save_partitions,
    spectral_cluster,
)
from fieldmerge.pipeline import (
    PipelineConfig,
    distill_recipe,
    divide_views,
    evaluate,
    run_pipeline,
    train_recipe,
)
from fieldmerge.scene import (
    AxisBox,
    Scene,
    gen_dataset,
    load_dataset,
    render_rays,
    twotone_scene,
)
from fieldmerge.training import (
    TrainConfig,
    desk_config,
    fresh_field,
    lr_at,
    train_expert,
    train_field,
)

from helpers import brute_force_best_q, planted_weighted_graph, two_block_graph

BOX = (np.array([-1.0, -1.0, -1.0]), np.array([1.0, 1.0, 1.0]))


def ring_poses(n, radius=4.0, z=1.5, offset=0.0):
    poses = []
    for i in range(n):
        ang = offset + 2.0 * math.pi * i / n
        center = (radius * math.cos(ang), radius * math.sin(ang), z)
        poses.append(look_at_camera(center, (0, 0, 0), focal=40.0,
                                    width=32, height=32))
    return poses


def random_histogram(rng, n_bins, lo=0.0, hi=4.0):
    cuts = np.sort(rng.uniform(lo, hi, size=n_bins + 1))
    cuts += np.arange(n_bins + 1) * 1e-9  # force strict increase
    alpha = rng.uniform(0.0, 1.0, size=n_bins)
    return SampleHistogram(edges=cuts, alpha=alpha)


def relerr(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-8)


def check_fd(value, raw, grad, rng, n_params, eps=1e-4, tol=1e-3):
    """Central finite differences on randomly chosen live parameters."""
    flat = raw.ravel()
    grad = grad.ravel()
    live = np.flatnonzero(np.abs(grad) > 1e-12)
    assert live.size >= n_params, \
        f"only {live.size} live parameters, wanted {n_params}"
    for idx in rng.choice(live, size=n_params, replace=False):
        orig = flat[idx]
        flat[idx] = orig + eps
        up = value()
        flat[idx] = orig - eps
        dn = value()
        flat[idx] = orig
        fd = (up - dn) / (2.0 * eps)
        assert relerr(grad[idx], fd) < tol, \
            f"index {idx}: analytic {grad[idx]:.3e} vs fd {fd:.3e}"


def test_gate_01_partition_suite():
    t0 = time.perf_counter()
    # eight views spaced 45 degrees into quarter-circle sectors:
    # membership is exact
    pset = azimuth_partition(ring_poses(8, offset=math.radians(10.0)), 4)
    assert pset.groups == [[0, 1], [2, 3], [4, 5], [6, 7]]

    # percentile splits balance to within one view for any (N, K)
    rng = np.random.default_rng(0)
    for _ in range(100):
        k = int(rng.integers(2, 9))
        n = int(rng.integers(k, 200))
        poses = [look_at_camera((3 * math.cos(a), 3 * math.sin(a), 0.7),
                                (0, 0, 0), focal=24.0, width=8, height=8)
                 for a in rng.uniform(0.0, 2.0 * math.pi, size=n)]
        sizes = percentile_partition(poses, k).sizes()
        assert max(sizes) - min(sizes) <= 1

    # a 180-camera farthest-point rig lands in near-balanced sectors
    centers = fibonacci_hemisphere(1440, radius=2.4)
    idx = fps_select(centers, 180, seed=0)
    poses = [look_at_camera(centers[i], (0, 0, 0), focal=24.0,
                            width=8, height=8) for i in idx]
    sizes = azimuth_partition(poses, 4).sizes()
    assert all(40 <= s <= 50 for s in sizes), sizes
    assert time.perf_counter() - t0 < 10.0


def test_gate_02_histogram_identity_and_bound():
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    for _ in range(1000):
        h = random_histogram(rng, int(rng.integers(1, 10)))
        assert hist_loss(h, h) == 0.0

    # enlarging the query interval never shrinks the bound
    for _ in range(1000):
        h = random_histogram(rng, int(rng.integers(1, 9)))
        a, b = np.sort(rng.uniform(-1.0, 4.5, size=2))
        lo, hi = float(a), float(b) + 1e-6
        grow = float(rng.uniform(0.0, 2.0))
        assert bound(h, (lo - grow, hi + grow)) >= bound(h, (lo, hi)) - 1e-12

    h = SampleHistogram(edges=[0.0, 1.0, 2.0, 3.0], alpha=[0.1, 0.2, 0.3])
    assert abs(bound(h, (0.5, 1.5)) - 0.3) < 1e-9
    covered = hist_loss(SampleHistogram(edges=[0.0, 2.0], alpha=[0.5]),
                        SampleHistogram(edges=[0.0, 1.0], alpha=[0.5]))
    assert abs(covered) < 1e-9
    undershoot = hist_loss(SampleHistogram(edges=[0.0, 1.0], alpha=[0.1]),
                           SampleHistogram(edges=[0.0, 1.0], alpha=[0.4]))
    assert abs(undershoot - 0.3 / (0.4 + HIST_EPS)) < 1e-9
    assert time.perf_counter() - t0 < 10.0


def _cube16(init_sigma, jitter_seed=None):
    field = init_field(*BOX, prop_res=16, fine_res=16, n_coarse=16, n_fine=8,
                       near=2.0, far=6.0, init_sigma=init_sigma)
    if jitter_seed is not None:
        rng = np.random.default_rng(jitter_seed)
        for p in field.params().values():
            p += rng.normal(0.0, 0.3, p.shape)
    return field


def test_gate_03_gradient_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    registry = ExpertRegistry(models=[_cube16(0.05), _cube16(0.8)],
                              groups=[[0, 1, 2, 3], [4, 5, 6, 7]],
                              method="azimuth", poses=ring_poses(8))
    batch = sample_distill_rays(registry, 32, 0.5, rng)
    targets = teacher_forward(registry, batch, rng)
    # fresh grids sit exactly at the teachers' mid-gray; jitter so every
    # loss term has signal
    student = _cube16(0.1, jitter_seed=42)
    params = student.params()
    bg = np.array([1.0, 1.0, 1.0])
    photo_target = rng.uniform(0.0, 1.0, size=(32, 3))

    def photometric():
        out = render_batch(student, batch.origins, batch.dirs, bg,
                           stratified=False)
        return float(np.sum((out.color - photo_target) ** 2))

    fwd = render_batch(student, batch.origins, batch.dirs, bg,
                       stratified=False)
    grads = student.zero_grads()
    render_backward(student, fwd, grads,
                    d_color=2.0 * (fwd.color - photo_target))
    for name in ("fine_density", "fine_color"):
        check_fd(photometric, params[name], grads[name], rng, 50)

    grads = student.zero_grads()
    distill_alpha(student, targets, grads)
    check_fd(lambda: distill_alpha(student, targets),
             params["fine_density"], grads["fine_density"], rng, 100)

    grads = student.zero_grads()
    distill_color(student, targets, grads)
    check_fd(lambda: distill_color(student, targets),
             params["fine_color"], grads["fine_color"], rng, 100)

    grads = student.zero_grads()
    distill_hist(student, batch, targets, grads)
    check_fd(lambda: distill_hist(student, batch, targets),
             params["proposal"], grads["proposal"], rng, 100)
    assert time.perf_counter() - t0 < 120.0


def test_gate_04_rendering_conservation():
    t0 = time.perf_counter()
    checked = 0
    for fseed in range(4):
        rng = np.random.default_rng(100 + fseed)
        field = init_field(*BOX, prop_res=8, fine_res=16, n_coarse=24,
                           n_fine=16, near=1.5, far=6.5, init_sigma=0.1)
        for p in field.params().values():
            p += rng.normal(0.0, 1.5, p.shape)
        for chunk in range(5):
            ray_rng = np.random.default_rng(1000 + 10 * fseed + chunk)
            origins = ray_rng.normal(size=(5000, 3))
            origins *= (2.0 + fseed) / np.linalg.norm(origins, axis=1,
                                                      keepdims=True)
            dirs = 0.4 * ray_rng.normal(size=(5000, 3)) - origins
            dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
            out = render_batch(field, origins, dirs, (1, 1, 1), rng=rng)
            sums = out.weights.sum(axis=1)
            assert sums.min() >= 0.0
            assert sums.max() <= 1.0 + 1e-12
            checked += len(sums)
    assert checked == 100_000

    # homogeneous slab of density 0.8, thickness 2: the 1024-sample
    # quadrature must land on exp(-1.6) per channel
    slab = AxisBox(lo=(-5, -5, 0.3), hi=(5, 5, 2.3), density=0.8,
                   color=(0, 0, 0))
    scene = Scene(primitives=(slab,), bbox_lo=(-6, -6, -1),
                  bbox_hi=(6, 6, 4), background=(1, 1, 1))
    out = render_rays(scene, np.array([[0.0, 0.0, -0.7]]),
                      np.array([[0.0, 0.0, 1.0]]), near=0.1, far=4.1,
                      samples_per_ray=1024)
    assert np.all(np.abs(out - math.exp(-1.6)) < 1e-3)
    assert time.perf_counter() - t0 < 60.0


def test_gate_05_clustering_oracles():
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    for g in range(50):
        adj = planted_weighted_graph(rng)
        pset = louvain(adj, CommunityConfig(gamma=1.0, seed=g))
        achieved = modularity(adj, pset, gamma=1.0)
        best = brute_force_best_q(adj)
        assert achieved >= 0.95 * best - 1e-12, \
            f"graph {g}: {achieved:.4f} < 0.95 * {best:.4f}"

    adj = np.zeros((8, 8))
    for block in (range(4), range(4, 8)):
        for a in block:
            for b in block:
                if a != b:
                    adj[a, b] = 1.0
    adj[3, 4] = adj[4, 3] = 1.0
    pset = louvain(adj, CommunityConfig(gamma=1.0, seed=0))
    assert sorted(map(tuple, pset.groups)) == [(0, 1, 2, 3), (4, 5, 6, 7)]

    blocks = two_block_graph(block=8, inside=10, cross=1)
    pset = spectral_cluster(blocks, 2, seed=0)
    assert sorted(map(tuple, pset.groups)) == \
        [tuple(range(8)), tuple(range(8, 16))]
    assert time.perf_counter() - t0 < 120.0


@pytest.fixture(scope="module")
def selfdistill_run(tmp_path_factory):
    t0 = time.perf_counter()
    data = tmp_path_factory.mktemp("gate6") / "data"
    gen_dataset(twotone_scene(), n_train=45, n_test=16, radius=4.0,
                resolution=64, seed=0, out=data, samples_per_ray=512)
    ds = load_dataset(data)
    tcfg = desk_config(2000, seed=0)
    teacher = fresh_field(ds, tcfg)
    train_field(teacher, ds, list(range(45)), tcfg)
    registry = ExpertRegistry(models=[teacher], groups=[list(range(45))],
                              method="azimuth",
                              poses=ds.views["train"].poses)
    student = fresh_field(ds, tcfg)
    distill(registry, student, desk_distill_config(5000, 0, seed=0))
    return {"ds": ds, "teacher": teacher, "student": student,
            "wall": time.perf_counter() - t0}


def test_gate_06_self_distillation_fidelity(selfdistill_run):
    r = selfdistill_run
    t0 = time.perf_counter()
    ds = r["ds"]
    scores = [psnr(render_image(r["student"], pose, ds.background),
                   render_image(r["teacher"], pose, ds.background))
              for pose in ds.views["test"].poses]
    mean = float(np.mean(scores))
    print(f"gate 6 student-vs-teacher: {mean:.2f} dB "
          f"over {len(scores)} held-out poses")
    assert mean >= 30.0, f"student matches teacher at {mean:.2f} dB < 30"
    assert r["wall"] + time.perf_counter() - t0 < 600.0


@pytest.fixture(scope="module")
def comparison_run(tmp_path_factory):
    t0 = time.perf_counter()
    root = tmp_path_factory.mktemp("gate7")
    data = root / "data"
    gen_dataset(twotone_scene(), n_train=180, n_test=64, radius=4.0,
                resolution=64, seed=0, out=data, samples_per_ray=512)
    config = PipelineConfig(data=str(data), out=str(root / "run"), k=4,
                            method="azimuth", overlap_deg=60.0,
                            expert_iters=2000, distill_iters=5000,
                            finetune_iters=2000, seed=0, workers=1,
                            comparison=True, recipe="desk")
    report = run_pipeline(config)
    return {"data": data, "out": root / "run", "config": config,
            "report": report, "wall": time.perf_counter() - t0}


def test_gate_07_divide_and_conquer_trend(comparison_run):
    r = comparison_run
    dac = r["report"].arms["dac"]["metrics"]["psnr"]
    base = r["report"].arms["baseline_2B"]["metrics"]["psnr"]
    delta = dac - base
    print(f"gate 7 signed delta (dac - baseline_2B): {delta:+.3f} dB "
          f"(dac {dac:.3f}, baseline {base:.3f})")
    assert delta >= -0.1, \
        f"dac {dac:.3f} vs baseline@2B {base:.3f}: delta {delta:+.3f} < -0.1"
    assert r["wall"] < 1800.0


def test_gate_08_stage_determinism(comparison_run, tmp_path):
    r = comparison_run
    out, cfg = r["out"], r["config"]
    ds = load_dataset(r["data"])

    pset = divide_views(ds, cfg.k, cfg.method, overlap_deg=cfg.overlap_deg,
                        seed=cfg.seed)
    save_partitions(tmp_path / "partitions.json", pset)
    assert (tmp_path / "partitions.json").read_bytes() == \
        (out / "partitions.json").read_bytes()

    # expert 0 trains with the pipeline seed offset by its partition id
    tcfg = train_recipe(cfg.recipe, cfg.expert_iters, cfg.seed)
    train_expert(ds, pset.groups[0], tcfg, tmp_path / "expert.ckpt",
                 partition_id=0)
    assert (tmp_path / "expert.ckpt").read_bytes() == \
        (out / "experts" / "expert_00.ckpt").read_bytes()

    models = [load_field(out / "experts" / f"expert_{pid:02d}.ckpt")
              for pid in range(cfg.k)]
    registry = ExpertRegistry(models=models, groups=pset.groups,
                              method=pset.method,
                              poses=ds.views["train"].poses)
    dcfg = distill_recipe(cfg.recipe, cfg.distill_iters, cfg.finetune_iters,
                          cfg.seed, cfg.virtual_fraction, cfg.warm_start)
    student = init_student(registry, dcfg, fresh_field(ds, tcfg))
    distill(registry, student, dcfg)
    save_field(tmp_path / "distilled.ckpt", student)
    assert (tmp_path / "distilled.ckpt").read_bytes() == \
        (out / "student_distilled.ckpt").read_bytes()

    finetune(student, ds, dcfg)
    save_field(tmp_path / "student.ckpt", student)
    assert (tmp_path / "student.ckpt").read_bytes() == \
        (out / "student.ckpt").read_bytes()

    rerun = evaluate(load_field(out / "student.ckpt"), ds)
    assert rerun.to_dict() == r["report"].arms["dac"]["metrics"]


def test_gate_09_metric_fixtures():
    t0 = time.perf_counter()
    assert psnr_from_mse(0.01) == 20.0
    assert psnr(np.full((8, 8, 3), 0.1), np.zeros((8, 8, 3))) == \
        pytest.approx(20.0, abs=1e-12)

    img = np.random.default_rng(3).uniform(0.0, 1.0, size=(16, 16, 3))
    assert ssim(img, img) == 1.0
    z, o = np.zeros((16, 16)), np.ones((16, 16))
    assert ssim(z, o) == pytest.approx(SSIM_C1 / (1.0 + SSIM_C1), abs=1e-9)
    assert ms_ssim(img, np.clip(img + 0.05, 0, 1), scales=1) == \
        ssim(img, np.clip(img + 0.05, 0, 1))
    assert time.perf_counter() - t0 < 5.0


def test_gate_10_schedule_fixtures():
    t0 = time.perf_counter()
    cfg = TrainConfig(iterations=5000, warmup=512)
    assert lr_at(511, cfg) == 0.01
    mid = 512 + (5000 - 512) // 2
    assert lr_at(mid, cfg) == 0.005
    for iters in (5000, 30000):
        tail = TrainConfig(iterations=iters, warmup=512)
        assert lr_at(iters - 1, tail) < 1e-6 * tail.lr0
    assert abs(lr_at(512, cfg) - cfg.lr0) < 1e-12
    assert time.perf_counter() - t0 < 1.0
