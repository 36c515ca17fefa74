"""Merging expert fields into one student.

The student never sees ground-truth images during distillation: rays
are drawn from training cameras and from virtual cameras interpolated
between same-partition training cameras, each ray is routed to the
expert that owns its source view, and the student matches the frozen
expert point-wise (opacity and color at the expert's fine sample
points) plus histogram-wise (proposal opacities along the ray). A
photometric finetune against real images follows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .field import (
    FieldModel,
    color_at,
    color_backward,
    copy_field,
    density_at,
    density_backward,
    importance_samples,
    midpoint_edges,
    proposal_forward,
    render_image,
)
from .geometry import CameraPose, azimuth, camera_rays, normalize
from .histograms import hist_loss_batch
from .metrics import psnr
from .scene import Dataset
from .training import (
    TrainConfig,
    adam_step,
    eval_steps,
    init_adam,
    lr_at,
    train_field,
    tv_value_grad,
)

AZIMUTH_METHODS = ("azimuth", "percentile")


@dataclass(frozen=True)
class DistillConfig:
    """Conquer-stage settings: loss mix, ray mix, and the shared schedule."""

    distill_iterations: int = 30000
    finetune_iterations: int = 30000
    w_color: float = 0.4
    w_alpha: float = 0.3
    w_hist: float = 0.3
    virtual_fraction: float = 0.5
    seed: int = 0
    batch_rays: int = 1024
    lr0: float = 0.01
    warmup: int = 512
    lambda_tv: float = 1e-4
    lambda_prop: float = 1.0
    warm_start: bool = False
    finetune_lr0: float | None = None
    finetune_warmup: int | None = None

    def __post_init__(self):
        if self.distill_iterations < 0 or self.finetune_iterations < 0:
            raise ValueError("iteration counts must be nonnegative")
        if min(self.w_color, self.w_alpha, self.w_hist) < 0.0:
            raise ValueError("distill loss weights must be nonnegative")
        if not 0.0 <= self.virtual_fraction <= 1.0:
            raise ValueError(
                f"virtual_fraction must lie in [0, 1], got {self.virtual_fraction}")
        if self.batch_rays < 1:
            raise ValueError("batch_rays must be >= 1")
        if self.lr0 <= 0.0:
            raise ValueError("lr0 must be positive")
        if self.warmup < 0:
            raise ValueError("warmup must be nonnegative")
        if self.lambda_tv < 0.0 or self.lambda_prop < 0.0:
            raise ValueError("regularizer weights must be nonnegative")
        if self.finetune_lr0 is not None and self.finetune_lr0 <= 0.0:
            raise ValueError("finetune_lr0 must be positive")
        if self.finetune_warmup is not None and self.finetune_warmup < 0:
            raise ValueError("finetune_warmup must be nonnegative")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    def schedule(self, iterations: int) -> TrainConfig:
        """The trainer schedule reused verbatim for this stage."""
        return TrainConfig(iterations=iterations, lr0=self.lr0,
                           warmup=min(self.warmup, max(iterations - 1, 0)),
                           batch_rays=self.batch_rays, seed=self.seed,
                           lambda_tv=self.lambda_tv,
                           lambda_prop=self.lambda_prop)

    def finetune_schedule(self, iterations: int) -> TrainConfig:
        """schedule() with the finetune overrides applied when set.

        The step size that suits training from transparency shreds a
        warm-started field before the photometric signal can steer it,
        so the finetune stage usually wants a smaller one.
        """
        lr0 = self.lr0 if self.finetune_lr0 is None else self.finetune_lr0
        warmup = self.warmup if self.finetune_warmup is None \
            else self.finetune_warmup
        return TrainConfig(iterations=iterations, lr0=lr0,
                           warmup=min(warmup, max(iterations - 1, 0)),
                           batch_rays=self.batch_rays, seed=self.seed,
                           lambda_tv=self.lambda_tv,
                           lambda_prop=self.lambda_prop)


def distill_config_from_dict(d: dict) -> DistillConfig:
    known = set(DistillConfig.__dataclass_fields__)
    unknown = set(d) - known
    if unknown:
        raise ValueError(f"unknown DistillConfig fields: {sorted(unknown)}")
    return DistillConfig(**d)


def desk_distill_config(distill_iterations: int = 5000,
                        finetune_iterations: int = 5000,
                        seed: int = 0, **overrides) -> DistillConfig:
    """Desk-scale counterpart of training.desk_config (same rationale).

    Distillation starts from transparency and wants the aggressive 0.2
    step size; the finetune stage starts from the distilled field and
    needs a gentler one (at 0.2 a warm start finishes several dB below a
    from-scratch run of the same length, at 0.1 several dB above it).
    """
    base = dict(distill_iterations=distill_iterations,
                finetune_iterations=finetune_iterations, seed=seed,
                lr0=0.2, warmup=distill_iterations // 8,
                lambda_tv=0.0, lambda_prop=1.0,
                finetune_lr0=0.1, finetune_warmup=100)
    base.update(overrides)
    return DistillConfig(**base)


# --- expert registry --------------------------------------------------------


@dataclass
class ExpertRegistry:
    """Frozen experts with the partition data that routes rays to them.

    Every training view must be covered; a view claimed by several
    partitions belongs to the lowest-index one. Azimuth-derived methods
    measure virtual-camera proximity along the azimuth circle, graph
    methods measure it in euclidean space.
    """

    models: list[FieldModel]
    groups: list[list[int]]
    method: str
    poses: list[CameraPose]
    checkpoints: list[str] | None = None

    def __post_init__(self):
        if not self.models:
            raise ValueError("registry needs at least one expert")
        if len(self.models) != len(self.groups):
            raise ValueError("one partition per expert required")
        n_views = len(self.poses)
        owner = np.full(n_views, -1, dtype=int)
        for pid in range(len(self.groups) - 1, -1, -1):
            members = np.asarray(self.groups[pid], dtype=int)
            if members.size == 0:
                raise ValueError(f"partition {pid} is empty")
            if members.min() < 0 or members.max() >= n_views:
                raise ValueError(f"partition {pid} references unknown views")
            owner[members] = pid
        if np.any(owner < 0):
            missing = np.flatnonzero(owner < 0).tolist()
            raise ValueError(f"views not covered by any partition: {missing}")
        ref = self.models[0].config
        for m in self.models[1:]:
            if m.config != ref:
                raise ValueError("experts must share one sampling config")
        self.view_to_expert = owner
        self.centers = np.array([p.center for p in self.poses])
        self.azimuths = np.array([azimuth(p.center) for p in self.poses])
        self.pivot = np.array([0.0, 0.0, 0.0])
        self._dir_bank = None

    def __len__(self) -> int:
        return len(self.models)

    def dir_bank(self) -> np.ndarray:
        """Per-view unit pixel directions, (n_views, H*W, 3), built lazily."""
        if self._dir_bank is None:
            self._dir_bank = np.stack(
                [camera_rays(p)[1] for p in self.poses])
        return self._dir_bank


def indicator(registry: ExpertRegistry, view: int | None = None,
              center=None) -> int:
    """Expert index owning a ray: by source view, or for a virtual
    camera by its nearest training camera."""
    if view is not None:
        if not 0 <= view < len(registry.view_to_expert):
            raise ValueError(f"view {view} is not in any partition")
        return int(registry.view_to_expert[view])
    if center is None:
        raise ValueError("need a view index or a camera center")
    center = np.asarray(center, dtype=float)
    if registry.method in AZIMUTH_METHODS:
        az = math.atan2(center[1], center[0]) % (2.0 * math.pi)
        gap = np.abs(registry.azimuths - az)
        dist = np.minimum(gap, 2.0 * math.pi - gap)
    else:
        dist = np.linalg.norm(registry.centers - center, axis=1)
    return int(registry.view_to_expert[int(np.argmin(dist))])


# --- virtual cameras --------------------------------------------------------


def interp_center(c0, c1, t: float, pivot=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Spherical interpolation of camera centers about a pivot.

    Directions follow the great circle; distances from the pivot
    interpolate linearly. t=0 and t=1 land on the endpoints.
    """
    pivot = np.asarray(pivot, dtype=float)
    r0 = np.asarray(c0, dtype=float) - pivot
    r1 = np.asarray(c1, dtype=float) - pivot
    n0, n1 = np.linalg.norm(r0), np.linalg.norm(r1)
    if n0 == 0.0 or n1 == 0.0:
        raise ValueError("camera center coincides with the pivot")
    u0, u1 = r0 / n0, r1 / n1
    dot = float(np.clip(u0 @ u1, -1.0, 1.0))
    omega = math.acos(dot)
    if math.sin(omega) < 1e-12:
        direction = normalize((1.0 - t) * u0 + t * u1)
    else:
        direction = (math.sin((1.0 - t) * omega) * u0
                     + math.sin(t * omega) * u1) / math.sin(omega)
    radius = (1.0 - t) * n0 + t * n1
    return pivot + radius * direction


def _virtual_rays(registry: ExpertRegistry, anchors: np.ndarray,
                  partners: np.ndarray, ts: np.ndarray,
                  pixels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Origins and directions for one pixel of each interpolated camera."""
    pivot = registry.pivot
    r0 = registry.centers[anchors] - pivot
    r1 = registry.centers[partners] - pivot
    n0 = np.linalg.norm(r0, axis=1)
    n1 = np.linalg.norm(r1, axis=1)
    u0 = r0 / n0[:, None]
    u1 = r1 / n1[:, None]
    dot = np.clip(np.sum(u0 * u1, axis=1), -1.0, 1.0)
    omega = np.arccos(dot)
    sin_o = np.sin(omega)
    safe = sin_o >= 1e-12
    w0 = np.where(safe, np.sin((1.0 - ts) * np.where(safe, omega, 1.0)), 1.0 - ts)
    w1 = np.where(safe, np.sin(ts * np.where(safe, omega, 1.0)), ts)
    direction = (w0[:, None] * u0 + w1[:, None] * u1)
    direction /= np.where(safe, sin_o, np.linalg.norm(direction, axis=1))[:, None]
    centers = pivot + ((1.0 - ts) * n0 + ts * n1)[:, None] * direction

    # look-at rotation toward the pivot, batched; rigs stay off the pole
    # so fwd is never parallel to the world up axis
    fwd = pivot - centers
    fwd /= np.linalg.norm(fwd, axis=1, keepdims=True)
    up = np.array([0.0, 0.0, 1.0])
    side = np.cross(fwd, up)
    side /= np.linalg.norm(side, axis=1, keepdims=True)
    true_up = np.cross(side, fwd)

    ref = registry.poses[0]
    px = pixels % ref.width
    py = pixels // ref.width
    x = (px + 0.5 - 0.5 * ref.width) / ref.focal
    y = -(py + 0.5 - 0.5 * ref.height) / ref.focal
    d_world = x[:, None] * side + y[:, None] * true_up + fwd
    d_world /= np.linalg.norm(d_world, axis=1, keepdims=True)
    return centers, d_world


class DistillBatch(NamedTuple):
    origins: np.ndarray   # (B, 3)
    dirs: np.ndarray      # (B, 3) unit
    expert: np.ndarray    # (B,) int expert index per ray
    virtual: np.ndarray   # (B,) bool
    source_view: np.ndarray  # (B,) anchor training view


def sample_distill_rays(registry: ExpertRegistry, batch_size: int,
                        fraction: float,
                        rng: np.random.Generator) -> DistillBatch:
    """Draw a mixed batch of real-view and interpolated-camera rays.

    Each ray is tagged with its owning expert: real rays inherit their
    view's partition, virtual rays are routed by nearest training
    camera. Virtual cameras interpolate only within one partition.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    n_views = len(registry.poses)
    ref = registry.poses[0]
    n_px = ref.width * ref.height
    virtual = rng.random(batch_size) < fraction
    views = rng.integers(0, n_views, batch_size)
    pixels = rng.integers(0, n_px, batch_size)

    origins = np.empty((batch_size, 3))
    dirs = np.empty((batch_size, 3))
    expert = np.empty(batch_size, dtype=int)

    real = ~virtual
    if np.any(real):
        bank = registry.dir_bank()
        rv = views[real]
        origins[real] = registry.centers[rv]
        dirs[real] = bank[rv, pixels[real]]
        expert[real] = registry.view_to_expert[rv]
    if np.any(virtual):
        anchors = views[virtual]
        partners = np.empty(len(anchors), dtype=int)
        ts = rng.random(len(anchors))
        for i, a in enumerate(anchors):
            group = registry.groups[registry.view_to_expert[a]]
            partners[i] = group[rng.integers(len(group))]
        centers, d = _virtual_rays(registry, anchors, partners, ts,
                                   pixels[virtual])
        origins[virtual] = centers
        dirs[virtual] = d
        expert[virtual] = [indicator(registry, center=c) for c in centers]
    return DistillBatch(origins=origins, dirs=dirs, expert=expert,
                        virtual=virtual, source_view=views)


# --- teacher forward --------------------------------------------------------


class TeacherTargets(NamedTuple):
    """Frozen-expert outputs along a ray batch, in batch ray order."""

    prop_ts: np.ndarray      # (B, n_coarse) proposal sample distances
    prop_alpha: np.ndarray   # (B, n_coarse)
    prop_edges: np.ndarray   # (n_coarse + 1,) shared uniform bins
    prop_delta: float
    points: np.ndarray       # (B, n_fine, 3) fine sample positions
    delta: np.ndarray        # (B, n_fine) fine segment lengths
    alpha: np.ndarray        # (B, n_fine)
    rgb: np.ndarray          # (B, n_fine, 3)


def teacher_forward(registry: ExpertRegistry, batch: DistillBatch,
                    rng: np.random.Generator) -> TeacherTargets:
    """Run each ray through its own expert; no gradients are kept."""
    cfg = registry.models[0].config
    b = len(batch.origins)
    prop_ts = np.empty((b, cfg.n_coarse))
    prop_alpha = np.empty((b, cfg.n_coarse))
    points = np.empty((b, cfg.n_fine, 3))
    delta = np.empty((b, cfg.n_fine))
    alpha = np.empty((b, cfg.n_fine))
    rgb = np.empty((b, cfg.n_fine, 3))
    edges = np.linspace(cfg.near, cfg.far, cfg.n_coarse + 1)
    prop_delta = (cfg.far - cfg.near) / cfg.n_coarse
    for pid, model in enumerate(registry.models):
        sel = batch.expert == pid
        if not np.any(sel):
            continue
        o, d = batch.origins[sel], batch.dirs[sel]
        prop = proposal_forward(model, o, d, rng=rng, stratified=True)
        fine_ts = importance_samples(prop.edges, prop.alpha, cfg.n_fine,
                                     rng=rng, stratified=True)
        fine_edges = midpoint_edges(fine_ts, cfg.near, cfg.far)
        fine_delta = np.diff(fine_edges, axis=1)
        pts = o[:, None, :] + fine_ts[..., None] * d[:, None, :]
        sigma, _ = density_at(model.fine_density, pts)
        prop_ts[sel] = prop.ts
        prop_alpha[sel] = prop.alpha
        points[sel] = pts
        delta[sel] = fine_delta
        alpha[sel] = -np.expm1(-sigma * fine_delta)
        rgb[sel] = color_at(model.fine_color, pts)[0]
    return TeacherTargets(prop_ts=prop_ts, prop_alpha=prop_alpha,
                          prop_edges=edges, prop_delta=prop_delta,
                          points=points, delta=delta, alpha=alpha, rgb=rgb)


# --- point-wise and histogram losses ----------------------------------------


def distill_alpha(student: FieldModel, targets: TeacherTargets,
                  grads: dict[str, np.ndarray] | None = None,
                  scale: float = 1.0) -> float:
    """Mean squared error between student and teacher opacity at the
    teacher's fine sample points (teacher segment lengths)."""
    sigma, cache = density_at(student.fine_density, targets.points)
    alpha = -np.expm1(-sigma * targets.delta)
    diff = alpha - targets.alpha
    loss = float(np.mean(diff * diff))
    if grads is not None:
        d_alpha = 2.0 * diff / diff.size
        d_sigma = scale * d_alpha * targets.delta * (1.0 - alpha)
        density_backward(cache, d_sigma, grads["fine_density"])
    return loss


def distill_color(student: FieldModel, targets: TeacherTargets,
                  grads: dict[str, np.ndarray] | None = None,
                  scale: float = 1.0) -> float:
    """Mean squared error between student and teacher color at the
    teacher's fine sample points."""
    rgb, cache = color_at(student.fine_color, targets.points)
    diff = rgb - targets.rgb
    loss = float(np.mean(diff * diff))
    if grads is not None:
        d_rgb = scale * 2.0 * diff / diff.size
        color_backward(cache, d_rgb, grads["fine_color"])
    return loss


def distill_hist(student: FieldModel, batch: DistillBatch,
                 targets: TeacherTargets,
                 grads: dict[str, np.ndarray] | None = None,
                 scale: float = 1.0) -> float:
    """Histogram consistency between the student's proposal opacities
    and the teacher's, at the teacher's proposal sample distances.

    Gradient flows only into the student's proposal grid.
    """
    pts = batch.origins[:, None, :] \
        + targets.prop_ts[..., None] * batch.dirs[:, None, :]
    sigma, cache = density_at(student.proposal, pts)
    s_alpha = -np.expm1(-sigma * targets.prop_delta)
    t_edges = np.broadcast_to(targets.prop_edges,
                              (len(s_alpha), len(targets.prop_edges)))
    loss, d_s_alpha = hist_loss_batch(targets.prop_edges, s_alpha,
                                      t_edges, targets.prop_alpha)
    if grads is not None and np.any(d_s_alpha):
        d_sigma = scale * d_s_alpha * targets.prop_delta * (1.0 - s_alpha)
        density_backward(cache, d_sigma, grads["proposal"])
    return loss


def total_distill_loss(components: dict[str, float],
                       config: DistillConfig) -> float:
    """Weighted mix of the conquer terms plus the native regularizer."""
    weights = {"color": config.w_color, "alpha": config.w_alpha,
               "hist": config.w_hist, "orig": 1.0}
    total = 0.0
    for name, value in components.items():
        if not math.isfinite(value):
            raise ValueError(f"distill loss term {name!r} is not finite")
        total += weights[name] * value
    return total


# --- distill and finetune loops ---------------------------------------------


def _smoothness(student: FieldModel, grads, lambda_tv: float) -> float:
    """During distillation the native regularizer keeps only grid
    smoothness: the histogram self-term would double-count the explicit
    proposal alignment against the teachers."""
    if lambda_tv <= 0.0:
        return 0.0
    total = 0.0
    for key, raw in student.params().items():
        val, g = tv_value_grad(raw)
        total += lambda_tv * val
        if grads is not None:
            grads[key] += lambda_tv * g
    return total


def distill(registry: ExpertRegistry, student: FieldModel,
            config: DistillConfig, log_probes: bool = True) -> list[dict]:
    """Optimize the student against frozen experts; returns the eval log.

    Log entries report the student's render fidelity to the routed
    teacher on a few probe training views (no ground truth involved).
    """
    scfg = student.config
    tcfg = registry.models[0].config
    if (scfg.n_coarse, scfg.near, scfg.far) != \
            (tcfg.n_coarse, tcfg.near, tcfg.far):
        raise ValueError("student and experts must share the proposal "
                         "binning (n_coarse, near, far)")
    steps = config.distill_iterations
    if steps == 0:
        return []
    schedule = config.schedule(steps)
    rng = np.random.default_rng(config.seed)
    params = student.params()
    state = init_adam(params)
    checkpoints = set(eval_steps(steps))
    log: list[dict] = []
    probe_views = []
    probe_refs = []
    if log_probes:
        stride = max(1, len(registry.poses) // 3)
        probe_views = list(range(len(registry.poses)))[::stride][:3]
        probe_refs = [render_image(
            registry.models[indicator(registry, view=v)],
            registry.poses[v], (1.0, 1.0, 1.0)) for v in probe_views]
    for step in range(steps):
        batch = sample_distill_rays(registry, config.batch_rays,
                                    config.virtual_fraction, rng)
        targets = teacher_forward(registry, batch, rng)
        grads = student.zero_grads()
        components = {
            "color": distill_color(student, targets, grads, config.w_color),
            "alpha": distill_alpha(student, targets, grads, config.w_alpha),
            "hist": distill_hist(student, batch, targets, grads,
                                 config.w_hist),
            "orig": _smoothness(student, grads, config.lambda_tv),
        }
        total_distill_loss(components, config)
        adam_step(params, grads, state, lr_at(step, schedule))
        if step + 1 in checkpoints and probe_views:
            vals = [psnr(render_image(student, registry.poses[v],
                                      (1.0, 1.0, 1.0)), ref)
                    for v, ref in zip(probe_views, probe_refs)]
            log.append({"step": step + 1, "teacher_psnr": float(np.mean(vals))})
    return log


def finetune(student: FieldModel, dataset: Dataset, config: DistillConfig,
             indices: list[int] | None = None) -> list[dict]:
    """Photometric training of the distilled student on real images.

    A zero-iteration config is an identity (the checkpoint passes
    through untouched)."""
    if config.finetune_iterations == 0:
        return []
    if indices is None:
        indices = list(range(len(dataset.views["train"])))
    tcfg = config.finetune_schedule(config.finetune_iterations)
    return train_field(student, dataset, indices, tcfg)


def init_student(registry: ExpertRegistry, config: DistillConfig,
                 fresh: FieldModel) -> FieldModel:
    """Student initialization: transparent by default, or a copy of the
    largest-partition expert when the config asks for a warm start."""
    if not config.warm_start:
        return fresh
    sizes = [len(g) for g in registry.groups]
    return copy_field(registry.models[int(np.argmax(sizes))])
