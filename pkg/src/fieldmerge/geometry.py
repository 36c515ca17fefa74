"""Camera geometry: poses, rays, hemisphere rigs, and farthest-point view selection."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

GOLDEN_ANGLE = math.pi * (3.0 - math.sqrt(5.0))

# Hemisphere rigs stay off the pole and off the horizon.
MIN_ELEVATION_DEG = 5.0
MAX_ELEVATION_DEG = 85.0

TWO_PI = 2.0 * math.pi


def as_vec3(v) -> np.ndarray:
    out = np.asarray(v, dtype=float)
    if out.shape != (3,):
        raise ValueError(f"expected a 3-vector, got shape {out.shape}")
    if not np.all(np.isfinite(out)):
        raise ValueError("vector components must be finite")
    return out


def normalize(v: np.ndarray) -> np.ndarray:
    n = float(np.linalg.norm(v))
    if n == 0.0:
        raise ValueError("cannot normalize a zero vector")
    return v / n


@dataclass(frozen=True)
class CameraPose:
    """Camera-to-world rigid transform plus pinhole intrinsics.

    The rotation columns are the camera x/y/z axes expressed in world
    coordinates; the camera looks along its -z axis.
    """

    center: np.ndarray
    rotation: np.ndarray
    focal: float
    width: int
    height: int

    def __post_init__(self):
        object.__setattr__(self, "center", as_vec3(self.center))
        rot = np.asarray(self.rotation, dtype=float)
        if rot.shape != (3, 3):
            raise ValueError("rotation must be a 3x3 matrix")
        if not np.allclose(rot.T @ rot, np.eye(3), atol=1e-9):
            raise ValueError("rotation must be orthonormal")
        if abs(float(np.linalg.det(rot)) - 1.0) > 1e-9:
            raise ValueError("rotation must have determinant +1")
        object.__setattr__(self, "rotation", rot)
        if self.focal <= 0:
            raise ValueError("focal must be positive")
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be at least 1x1")

    @property
    def view_axis(self) -> np.ndarray:
        """World-space viewing direction (camera -z axis)."""
        return -self.rotation[:, 2]

    def camera_to_world(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.center
        return m


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray
    near: float = 0.0
    far: float = math.inf

    def __post_init__(self):
        object.__setattr__(self, "origin", as_vec3(self.origin))
        d = np.asarray(self.direction, dtype=float)
        if abs(float(np.linalg.norm(d)) - 1.0) > 1e-9:
            raise ValueError("ray direction must be a unit vector")
        object.__setattr__(self, "direction", d)
        if not (0.0 <= self.near < self.far):
            raise ValueError(f"need 0 <= near < far, got [{self.near}, {self.far}]")

    def at(self, t: float) -> np.ndarray:
        return self.origin + t * self.direction


def azimuth(center) -> float:
    """Planar polar angle of (x, y) about the vertical axis, in [0, 2*pi).

    Convention: atan2(y, x) wrapped to [0, 2*pi). Undefined (raises) for
    centers on the vertical axis.
    """
    c = as_vec3(center)
    if c[0] == 0.0 and c[1] == 0.0:
        raise ValueError("azimuth undefined for a center on the vertical axis")
    return math.atan2(c[1], c[0]) % TWO_PI


def fibonacci_hemisphere(n: int, radius: float, origin=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Deterministic Fibonacci lattice of n points on an upper hemisphere.

    Points are area-uniform over the elevation band [5 deg, 85 deg] around
    `origin` at distance `radius`. Returns an (n, 3) array.
    """
    if n < 1:
        raise ValueError("need at least one point")
    if radius <= 0:
        raise ValueError("radius must be positive")
    o = as_vec3(origin)
    i = np.arange(n)
    s_lo = math.sin(math.radians(MIN_ELEVATION_DEG))
    s_hi = math.sin(math.radians(MAX_ELEVATION_DEG))
    # sin(elevation) uniform over the band gives area-uniform points on it.
    s = s_lo + (s_hi - s_lo) * (i + 0.5) / n
    elev = np.arcsin(s)
    az = (i * GOLDEN_ANGLE) % TWO_PI
    cos_e = np.cos(elev)
    pts = np.stack([cos_e * np.cos(az), cos_e * np.sin(az), s], axis=1)
    return o + radius * pts


def fps_select(candidates, k: int, seed: int = 0, metric: str = "great-circle",
               center=None) -> list[int]:
    """Greedy farthest-point subset of size k, as candidate indices.

    The first index is drawn from `seed`; each following pick maximizes the
    minimum distance to everything already selected (ties resolve to the
    lowest index). `great-circle` measures angles about `center`
    (default: the world origin); `euclidean` measures straight-line distance.
    """
    pts = np.asarray(candidates, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError("candidates must be an (N, 3) array")
    n = len(pts)
    if n == 0:
        raise ValueError("candidates must be non-empty")
    if not (1 <= k <= n):
        raise ValueError(f"k must be in [1, {n}], got {k}")

    if metric == "great-circle":
        ref = np.zeros(3) if center is None else as_vec3(center)
        rel = pts - ref
        norms = np.linalg.norm(rel, axis=1)
        if np.any(norms == 0):
            raise ValueError("great-circle metric needs candidates distinct from center")
        units = rel / norms[:, None]

        def dist_to(idx: int) -> np.ndarray:
            return np.arccos(np.clip(units @ units[idx], -1.0, 1.0))
    elif metric == "euclidean":

        def dist_to(idx: int) -> np.ndarray:
            return np.linalg.norm(pts - pts[idx], axis=1)
    else:
        raise ValueError(f"unknown metric {metric!r}")

    rng = np.random.default_rng(seed)
    start = int(rng.integers(n))
    selected = [start]
    min_dist = dist_to(start)
    min_dist[start] = -np.inf
    for _ in range(k - 1):
        nxt = int(np.argmax(min_dist))
        selected.append(nxt)
        min_dist = np.minimum(min_dist, dist_to(nxt))
        min_dist[nxt] = -np.inf
    return selected


def look_at_pose(center, target, up=(0.0, 0.0, 1.0)) -> np.ndarray:
    """Orthonormal camera-to-world rotation whose -z axis points at target."""
    c = as_vec3(center)
    t = as_vec3(target)
    if np.array_equal(c, t):
        raise ValueError("center and target coincide")
    fwd = normalize(t - c)
    side = np.cross(fwd, as_vec3(up))
    side_norm = float(np.linalg.norm(side))
    if side_norm < 1e-12:
        raise ValueError("up vector is parallel to the viewing direction")
    side = side / side_norm
    true_up = np.cross(side, fwd)
    return np.stack([side, true_up, -fwd], axis=1)


def look_at_camera(center, target, focal: float, width: int, height: int,
                   up=(0.0, 0.0, 1.0)) -> CameraPose:
    rot = look_at_pose(center, target, up)
    return CameraPose(center=as_vec3(center), rotation=rot, focal=focal,
                      width=width, height=height)


def pixel_ray(pose: CameraPose, px: int, py: int, near: float = 0.0,
              far: float = math.inf) -> Ray:
    """Ray through the center of pixel (px, py) under the pinhole model."""
    if not (0 <= px < pose.width) or not (0 <= py < pose.height):
        raise ValueError(
            f"pixel ({px}, {py}) outside a {pose.width}x{pose.height} image")
    d_cam = np.array([
        (px + 0.5 - 0.5 * pose.width) / pose.focal,
        -(py + 0.5 - 0.5 * pose.height) / pose.focal,
        -1.0,
    ])
    d_world = pose.rotation @ d_cam
    return Ray(origin=pose.center, direction=normalize(d_world), near=near, far=far)


def camera_rays(pose: CameraPose) -> tuple[np.ndarray, np.ndarray]:
    """Origins and unit directions for every pixel, row-major.

    Returns (origins, directions), both (H*W, 3).
    """
    px, py = np.meshgrid(np.arange(pose.width), np.arange(pose.height))
    x = (px.ravel() + 0.5 - 0.5 * pose.width) / pose.focal
    y = -(py.ravel() + 0.5 - 0.5 * pose.height) / pose.focal
    d_cam = np.stack([x, y, -np.ones_like(x)], axis=1)
    d_world = d_cam @ pose.rotation.T
    d_world /= np.linalg.norm(d_world, axis=1, keepdims=True)
    origins = np.broadcast_to(pose.center, d_world.shape).copy()
    return origins, d_world


@dataclass
class ViewSet:
    """An ordered list of posed views sharing one image resolution."""

    poses: list[CameraPose]
    files: list[str]
    split: str

    def __post_init__(self):
        if len(self.poses) != len(self.files):
            raise ValueError("poses and files must align")
        sizes = {(p.width, p.height) for p in self.poses}
        if len(sizes) > 1:
            raise ValueError(f"views mix image resolutions: {sorted(sizes)}")

    def __len__(self) -> int:
        return len(self.poses)

    def centers(self) -> np.ndarray:
        return np.array([p.center for p in self.poses])

    def azimuths(self) -> np.ndarray:
        return np.array([azimuth(p.center) for p in self.poses])

    def subset(self, indices) -> "ViewSet":
        return ViewSet(poses=[self.poses[i] for i in indices],
                       files=[self.files[i] for i in indices],
                       split=self.split)


def save_cameras(path, views: dict[str, ViewSet]) -> None:
    """Write a cameras.json manifest: one record per view, all splits."""
    records = []
    for split in sorted(views):
        vs = views[split]
        for pose, fname in zip(vs.poses, vs.files):
            records.append({
                "transform": [round(float(x), 17) for x in pose.camera_to_world().ravel()],
                "focal": float(pose.focal),
                "width": int(pose.width),
                "height": int(pose.height),
                "split": split,
                "file": fname,
            })
    Path(path).write_text(json.dumps(records, indent=1) + "\n")


def load_cameras(path) -> dict[str, ViewSet]:
    """Read a cameras.json manifest back into per-split ViewSets."""
    records = json.loads(Path(path).read_text())
    if not isinstance(records, list):
        raise ValueError(f"{path}: manifest must be a JSON list of view records")
    by_split: dict[str, tuple[list, list]] = {}
    for i, rec in enumerate(records):
        try:
            m = np.array(rec["transform"], dtype=float).reshape(4, 4)
            pose = CameraPose(center=m[:3, 3], rotation=m[:3, :3],
                              focal=rec["focal"], width=rec["width"],
                              height=rec["height"])
            split = rec["split"]
            fname = rec["file"]
        except (KeyError, ValueError) as exc:
            raise ValueError(f"{path}: bad view record {i}: {exc}") from exc
        poses, files = by_split.setdefault(split, ([], []))
        poses.append(pose)
        files.append(fname)
    return {split: ViewSet(poses=p, files=f, split=split)
            for split, (p, f) in by_split.items()}
