"""Analytic test scenes, a ground-truth volume renderer, and dataset generation."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .geometry import (
    GOLDEN_ANGLE,
    CameraPose,
    ViewSet,
    as_vec3,
    camera_rays,
    fibonacci_hemisphere,
    fps_select,
    load_cameras,
    look_at_camera,
    save_cameras,
)

ORACLE_SAMPLES = 1024
VIS_SAMPLES = 256
VIS_THRESHOLD = 0.5


def _as_rgb(c) -> np.ndarray:
    out = np.asarray(c, dtype=float)
    if out.shape != (3,):
        raise ValueError("color must be an RGB triple")
    if out.min() < 0.0 or out.max() > 1.0:
        raise ValueError("color channels must lie in [0, 1]")
    return out


@dataclass(frozen=True)
class TwoTone:
    """Split a primitive's color by the half-space of a plane through its centroid."""

    normal: np.ndarray
    color_a: np.ndarray
    color_b: np.ndarray

    def __post_init__(self):
        n = as_vec3(self.normal)
        object.__setattr__(self, "normal", n / np.linalg.norm(n))
        object.__setattr__(self, "color_a", _as_rgb(self.color_a))
        object.__setattr__(self, "color_b", _as_rgb(self.color_b))


@dataclass(frozen=True)
class Sphere:
    center: np.ndarray
    radius: float
    density: float
    color: np.ndarray = (0.5, 0.5, 0.5)
    two_tone: TwoTone | None = None

    def __post_init__(self):
        object.__setattr__(self, "center", as_vec3(self.center))
        object.__setattr__(self, "color", _as_rgb(self.color))
        if self.radius <= 0:
            raise ValueError("sphere radius must be positive")
        if self.density < 0:
            raise ValueError("density must be nonnegative")

    @property
    def centroid(self) -> np.ndarray:
        return self.center

    def contains(self, pts: np.ndarray) -> np.ndarray:
        d2 = np.sum((pts - self.center) ** 2, axis=-1)
        return d2 <= self.radius * self.radius

    def surface_area(self) -> float:
        return 4.0 * math.pi * self.radius ** 2

    def sample_surface(self, n: int, rng: np.random.Generator) -> np.ndarray:
        v = rng.normal(size=(n, 3))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        return self.center + self.radius * v

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.center - self.radius, self.center + self.radius


@dataclass(frozen=True)
class AxisBox:
    lo: np.ndarray
    hi: np.ndarray
    density: float
    color: np.ndarray = (0.5, 0.5, 0.5)
    two_tone: TwoTone | None = None

    def __post_init__(self):
        object.__setattr__(self, "lo", as_vec3(self.lo))
        object.__setattr__(self, "hi", as_vec3(self.hi))
        object.__setattr__(self, "color", _as_rgb(self.color))
        if not np.all(self.hi > self.lo):
            raise ValueError("box needs hi > lo on every axis")
        if self.density < 0:
            raise ValueError("density must be nonnegative")

    @property
    def centroid(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    def contains(self, pts: np.ndarray) -> np.ndarray:
        return np.all((pts >= self.lo) & (pts <= self.hi), axis=-1)

    def surface_area(self) -> float:
        a, b, c = self.hi - self.lo
        return 2.0 * (a * b + b * c + c * a)

    def sample_surface(self, n: int, rng: np.random.Generator) -> np.ndarray:
        ext = self.hi - self.lo
        # Face order: -x, +x, -y, +y, -z, +z.
        areas = np.array([ext[1] * ext[2], ext[1] * ext[2],
                          ext[0] * ext[2], ext[0] * ext[2],
                          ext[0] * ext[1], ext[0] * ext[1]])
        faces = rng.choice(6, size=n, p=areas / areas.sum())
        u = rng.random((n, 3))
        pts = self.lo + u * ext
        axis = faces // 2
        side = faces % 2
        rows = np.arange(n)
        pts[rows, axis] = np.where(side == 0, self.lo[axis], self.hi[axis])
        return pts

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.lo.copy(), self.hi.copy()


@dataclass(frozen=True)
class Scene:
    """A list of analytic primitives inside a bounding box.

    Overlaps resolve by maximum density; the winning primitive also supplies
    the color (first-listed wins density ties).
    """

    primitives: tuple
    bbox_lo: np.ndarray
    bbox_hi: np.ndarray
    background: np.ndarray = (1.0, 1.0, 1.0)
    name: str = "scene"

    def __post_init__(self):
        object.__setattr__(self, "primitives", tuple(self.primitives))
        object.__setattr__(self, "bbox_lo", as_vec3(self.bbox_lo))
        object.__setattr__(self, "bbox_hi", as_vec3(self.bbox_hi))
        object.__setattr__(self, "background", _as_rgb(self.background))
        if not np.all(self.bbox_hi > self.bbox_lo):
            raise ValueError("bounding box needs hi > lo on every axis")
        for i, prim in enumerate(self.primitives):
            lo, hi = prim.bounds()
            if np.any(lo < self.bbox_lo - 1e-12) or np.any(hi > self.bbox_hi + 1e-12):
                raise ValueError(f"primitive {i} extends outside the bounding box")

    @property
    def bbox_center(self) -> np.ndarray:
        return 0.5 * (self.bbox_lo + self.bbox_hi)

    def radiance(self, pts) -> tuple[np.ndarray, np.ndarray]:
        """Density and color at each query point; (0, black) outside everything."""
        pts = np.asarray(pts, dtype=float)
        flat = pts.reshape(-1, 3)
        sigma = np.zeros(len(flat))
        color = np.zeros((len(flat), 3))
        for prim in self.primitives:
            inside = prim.contains(flat)
            win = inside & (prim.density > sigma)
            if not np.any(win):
                continue
            sigma[win] = prim.density
            if prim.two_tone is None:
                color[win] = prim.color
            else:
                tt = prim.two_tone
                side = (flat[win] - prim.centroid) @ tt.normal >= 0.0
                color[win] = np.where(side[:, None], tt.color_a, tt.color_b)
        return sigma.reshape(pts.shape[:-1]), color.reshape(pts.shape)


def oracle_radiance(scene: Scene, point) -> tuple[float, np.ndarray]:
    sigma, color = scene.radiance(np.asarray(point, dtype=float)[None, :])
    return float(sigma[0]), color[0]


def near_far(scene: Scene, pose: CameraPose) -> tuple[float, float]:
    """Conservative ray interval covering the scene box from this camera."""
    half_diag = 0.5 * float(np.linalg.norm(scene.bbox_hi - scene.bbox_lo))
    d = float(np.linalg.norm(pose.center - scene.bbox_center))
    return max(d - half_diag, 1e-3), d + half_diag


def render_rays(scene: Scene, origins: np.ndarray, directions: np.ndarray,
                near: float, far: float, samples_per_ray: int,
                return_weight_sum: bool = False):
    """Emission-absorption quadrature with uniform midpoint samples.

    Returns (R, 3) colors composited over the scene background; optionally
    also the per-ray sum of sample weights.
    """
    if samples_per_ray < 64:
        raise ValueError("need at least 64 samples per ray")
    n_rays = len(origins)
    delta = (far - near) / samples_per_ray
    color = np.zeros((n_rays, 3))
    trans = np.ones(n_rays)
    wsum = np.zeros(n_rays)
    block = 128
    for s0 in range(0, samples_per_ray, block):
        s1 = min(s0 + block, samples_per_ray)
        ts = near + (np.arange(s0, s1) + 0.5) * delta
        pts = origins[:, None, :] + ts[None, :, None] * directions[:, None, :]
        sigma, rgb = scene.radiance(pts)
        alpha = 1.0 - np.exp(-sigma * delta)
        keep = np.cumprod(1.0 - alpha, axis=1)
        inner = np.concatenate([np.ones((n_rays, 1)), keep[:, :-1]], axis=1)
        w = trans[:, None] * alpha * inner
        color += np.sum(w[:, :, None] * rgb, axis=1)
        wsum += w.sum(axis=1)
        trans *= keep[:, -1]
    color += trans[:, None] * scene.background
    color = np.clip(color, 0.0, 1.0)
    if return_weight_sum:
        return color, wsum
    return color


def oracle_render(scene: Scene, pose: CameraPose,
                  samples_per_ray: int = ORACLE_SAMPLES) -> np.ndarray:
    origins, dirs = camera_rays(pose)
    near, far = near_far(scene, pose)
    colors = render_rays(scene, origins, dirs, near, far, samples_per_ray)
    return colors.reshape(pose.height, pose.width, 3)


def covis_surface_samples(scene: Scene, n: int, seed: int) -> np.ndarray:
    """n points on primitive surfaces, area-weighted across primitives."""
    if n < 1:
        raise ValueError("need at least one sample")
    if not scene.primitives:
        raise ValueError("cannot sample surfaces of an empty scene")
    rng = np.random.default_rng(seed)
    areas = np.array([p.surface_area() for p in scene.primitives])
    which = rng.choice(len(scene.primitives), size=n, p=areas / areas.sum())
    pts = np.empty((n, 3))
    for i, prim in enumerate(scene.primitives):
        mask = which == i
        if np.any(mask):
            pts[mask] = prim.sample_surface(int(mask.sum()), rng)
    return pts


def visible_mask(scene: Scene, pose: CameraPose, points: np.ndarray) -> np.ndarray:
    """True where a world point is observed by the camera.

    Observed means: projects inside the sensor, sits in front of the camera,
    and the transmittance from the camera to just short of the point exceeds
    0.5 under the scene's own densities.
    """
    pts = np.asarray(points, dtype=float)
    rel = (pts - pose.center) @ pose.rotation
    in_front = rel[:, 2] < 0.0
    z = np.where(in_front, -rel[:, 2], 1.0)
    u = pose.focal * rel[:, 0] / z + 0.5 * pose.width
    v = -pose.focal * rel[:, 1] / z + 0.5 * pose.height
    on_sensor = (u >= 0) & (u < pose.width) & (v >= 0) & (v < pose.height)
    cand = in_front & on_sensor
    vis = np.zeros(len(pts), dtype=bool)
    if not np.any(cand):
        return vis
    sub = pts[cand]
    offsets = sub - pose.center
    dist = np.linalg.norm(offsets, axis=1)
    # Stop the occlusion ray just short of the surface point itself.
    reach = dist * (1.0 - 1e-3)
    frac = (np.arange(VIS_SAMPLES) + 0.5) / VIS_SAMPLES
    sample_pts = pose.center + frac[None, :, None] * (offsets * (1.0 - 1e-3))[:, None, :]
    sigma, _ = scene.radiance(sample_pts)
    tau = np.sum(sigma, axis=1) * (reach / VIS_SAMPLES)
    vis[cand] = np.exp(-tau) > VIS_THRESHOLD
    return vis


# --- image files ---------------------------------------------------------


def save_image(path, img: np.ndarray) -> None:
    arr = np.asarray(img, dtype=float)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError("image must be HxWx3")
    u8 = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(u8).save(Path(path))


def load_image(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"image not found: {path}")
    arr = np.asarray(Image.open(path).convert("RGB"), dtype=float) / 255.0
    return arr


# --- datasets ------------------------------------------------------------


@dataclass
class Dataset:
    """A generated dataset: camera manifest, metadata, lazily loaded images."""

    root: Path
    views: dict[str, ViewSet]
    meta: dict
    _cache: dict = field(default_factory=dict, repr=False)

    def image(self, split: str, index: int) -> np.ndarray:
        key = (split, index)
        if key not in self._cache:
            rel = self.views[split].files[index]
            self._cache[key] = load_image(self.root / rel)
        return self._cache[key]

    @property
    def bbox(self) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.meta["bbox"]
        return np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)

    @property
    def background(self) -> np.ndarray:
        return np.asarray(self.meta["background"], dtype=float)


def load_dataset(root) -> Dataset:
    root = Path(root)
    cam_path = root / "cameras.json"
    if not cam_path.exists():
        raise FileNotFoundError(f"no cameras.json under {root}")
    meta_path = root / "meta.json"
    if not meta_path.exists():
        raise FileNotFoundError(f"no meta.json under {root}")
    views = load_cameras(cam_path)
    meta = json.loads(meta_path.read_text())
    return Dataset(root=root, views=views, meta=meta)


def _rotate_z(pts: np.ndarray, angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return pts @ rot.T


def _pick_cameras(scene: Scene, n: int, radius: float, focal: float,
                  resolution: int, seed: int, phase: float) -> list[CameraPose]:
    n_candidates = max(8 * n, 256)
    lattice = fibonacci_hemisphere(n_candidates, radius=radius,
                                   origin=scene.bbox_center)
    centered = lattice - scene.bbox_center
    lattice = scene.bbox_center + _rotate_z(centered, phase)
    idx = fps_select(lattice, n, seed=seed, center=scene.bbox_center)
    return [look_at_camera(lattice[i], scene.bbox_center, focal=focal,
                           width=resolution, height=resolution)
            for i in idx]


def gen_dataset(scene: Scene, n_train: int, n_test: int, radius: float,
                resolution: int, seed: int, out,
                samples_per_ray: int = ORACLE_SAMPLES) -> Dataset:
    """Render a posed train/test dataset to `out` and return it.

    Train and test cameras are farthest-point subsets of two hemisphere
    lattices; the test lattice is rotated by half a golden angle so the two
    splits never share a camera center.
    """
    if n_train < 1 or n_test < 1:
        raise ValueError("need at least one view per split")
    out = Path(out)
    # 40 degree full field of view keeps the scene box filling most of
    # the frame at the default radius, like standard synthetic rigs.
    focal = 0.5 * resolution / math.tan(math.radians(20.0))
    splits = {
        "train": _pick_cameras(scene, n_train, radius, focal, resolution,
                               seed=seed, phase=0.0),
        "test": _pick_cameras(scene, n_test, radius, focal, resolution,
                              seed=seed + 1, phase=0.5 * GOLDEN_ANGLE),
    }
    views: dict[str, ViewSet] = {}
    try:
        for split, poses in splits.items():
            (out / split).mkdir(parents=True, exist_ok=True)
            files = []
            for i, pose in enumerate(poses):
                img = oracle_render(scene, pose, samples_per_ray=samples_per_ray)
                rel = f"{split}/{i:04d}.png"
                save_image(out / rel, img)
                files.append(rel)
            views[split] = ViewSet(poses=poses, files=files, split=split)
        save_cameras(out / "cameras.json", views)
        meta = {
            "scene": scene.name,
            "seed": seed,
            "radius": radius,
            "resolution": resolution,
            "focal": focal,
            "samples_per_ray": samples_per_ray,
            "bbox": [scene.bbox_lo.tolist(), scene.bbox_hi.tolist()],
            "background": scene.background.tolist(),
        }
        (out / "meta.json").write_text(json.dumps(meta, indent=1) + "\n")
    except OSError as exc:
        raise OSError(f"failed writing dataset under {out}: {exc}") from exc
    return Dataset(root=out, views=views, meta=meta)


# --- reference scenes ----------------------------------------------------


def twotone_scene() -> Scene:
    """Reference scene whose appearance differs strongly across azimuths.

    A central sphere flips color across the x=0 plane, and two boxes sit at
    unrelated azimuths, so cameras on opposite sides see different content.
    """
    sphere = Sphere(center=(0.0, 0.0, 0.0), radius=0.45, density=25.0,
                    two_tone=TwoTone(normal=(1.0, 0.0, 0.0),
                                     color_a=(0.85, 0.15, 0.10),
                                     color_b=(0.10, 0.20, 0.85)))
    box_a = AxisBox(lo=(0.25, -0.65, -0.45), hi=(0.60, -0.30, 0.10),
                    density=18.0, color=(0.10, 0.70, 0.20))
    box_b = AxisBox(lo=(-0.65, 0.30, -0.20), hi=(-0.30, 0.62, 0.35),
                    density=18.0, color=(0.90, 0.80, 0.10))
    return Scene(primitives=(sphere, box_a, box_b),
                 bbox_lo=(-0.8, -0.8, -0.8), bbox_hi=(0.8, 0.8, 0.8),
                 background=(1.0, 1.0, 1.0), name="twotone")


SCENES = {"twotone": twotone_scene}


def scene_by_name(name: str) -> Scene:
    if name not in SCENES:
        raise ValueError(f"unknown scene {name!r}; available: {sorted(SCENES)}")
    return SCENES[name]()
