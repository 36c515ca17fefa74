"""Trilinear voxel radiance fields: sampling, rendering, hand-derived gradients.

A field pairs a coarse proposal density grid (used only to place samples)
with fine density and color grids (used to render). All parameters are raw
lattice values; densities pass through softplus and colors through a sigmoid
after interpolation. Gradients are computed analytically, treating sample
positions as constants of the forward pass.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy.ndimage import map_coordinates
from scipy.special import expit

from .geometry import Ray, as_vec3
from .histograms import SampleHistogram, weights_from_alpha

CHECKPOINT_MAGIC = b"VOXFLD01"
CHECKPOINT_VERSION = 1
UNIFORM_FLOOR = 0.1


def softplus(v):
    return np.logaddexp(0.0, v)


def softplus_inv(y: float) -> float:
    if y <= 0:
        raise ValueError("softplus is positive; cannot invert a nonpositive value")
    return y + np.log1p(-np.exp(-y))


# --- grids ---------------------------------------------------------------


def _check_grid(raw: np.ndarray, channels: int | None):
    want_ndim = 3 if channels is None else 4
    if raw.ndim != want_ndim:
        raise ValueError(f"grid must be {want_ndim}-D, got {raw.ndim}-D")
    res = raw.shape[0]
    if raw.shape[:3] != (res, res, res) or res < 2:
        raise ValueError("grid must be cubic with resolution >= 2")
    if channels is not None and raw.shape[3] != channels:
        raise ValueError(f"grid needs {channels} channels per vertex")
    if not np.all(np.isfinite(raw)):
        raise ValueError("grid parameters must be finite")


@dataclass
class DensityGrid:
    """Cubic lattice of raw scalars; softplus(interpolated raw) is the density."""

    raw: np.ndarray
    bbox_lo: np.ndarray
    bbox_hi: np.ndarray

    def __post_init__(self):
        self.raw = np.asarray(self.raw, dtype=float)
        self.bbox_lo = as_vec3(self.bbox_lo)
        self.bbox_hi = as_vec3(self.bbox_hi)
        _check_grid(self.raw, channels=None)
        if not np.all(self.bbox_hi > self.bbox_lo):
            raise ValueError("grid box needs hi > lo")

    @property
    def resolution(self) -> int:
        return self.raw.shape[0]


@dataclass
class ColorGrid:
    """Cubic lattice of raw RGB triples; sigmoid(interpolated raw) is the color."""

    raw: np.ndarray
    bbox_lo: np.ndarray
    bbox_hi: np.ndarray

    def __post_init__(self):
        self.raw = np.asarray(self.raw, dtype=float)
        self.bbox_lo = as_vec3(self.bbox_lo)
        self.bbox_hi = as_vec3(self.bbox_hi)
        _check_grid(self.raw, channels=3)
        if not np.all(self.bbox_hi > self.bbox_lo):
            raise ValueError("grid box needs hi > lo")

    @property
    def resolution(self) -> int:
        return self.raw.shape[0]


class InterpCache(NamedTuple):
    u: np.ndarray       # (N, 3) clamped lattice-space coordinates
    inside: np.ndarray  # (N,) bounding-box mask
    value: np.ndarray   # interpolated raw, (N,) or (N, C)
    lead: tuple         # leading shape of the original points


def trilinear_forward(raw: np.ndarray, lo: np.ndarray, hi: np.ndarray,
                      pts: np.ndarray) -> InterpCache:
    """Interpolate raw lattice values at points (coordinates clamped into the box)."""
    pts = np.asarray(pts, dtype=float)
    lead = pts.shape[:-1]
    flat_pts = pts.reshape(-1, 3)
    res = raw.shape[0]
    inside = np.all((flat_pts >= lo) & (flat_pts <= hi), axis=1)
    u = (flat_pts - lo) / (hi - lo) * (res - 1)
    u = np.clip(u, 0.0, res - 1.0)
    coords = u.T
    if raw.ndim == 4:
        value = np.stack([map_coordinates(raw[..., ch], coords, order=1,
                                          mode="nearest")
                          for ch in range(raw.shape[3])], axis=1)
    else:
        value = map_coordinates(raw, coords, order=1, mode="nearest")
    return InterpCache(u=u, inside=inside, value=value, lead=lead)


def _corner_system(u: np.ndarray, res: int) -> tuple[np.ndarray, np.ndarray]:
    """Flattened corner indices (N, 8) and trilinear weights (N, 8)."""
    i0 = np.minimum(u.astype(np.int64), res - 2)
    frac = u - i0
    # corner order: dx major, then dy, then dz (000, 001, 010, ..., 111)
    wx = np.stack([1.0 - frac[:, 0], frac[:, 0]], axis=1)
    wy = np.stack([1.0 - frac[:, 1], frac[:, 1]], axis=1)
    wz = np.stack([1.0 - frac[:, 2], frac[:, 2]], axis=1)
    weights = (wx[:, :, None, None] * wy[:, None, :, None]
               * wz[:, None, None, :]).reshape(-1, 8)
    base = (i0[:, 0] * res + i0[:, 1]) * res + i0[:, 2]
    offsets = np.array([(dx * res + dy) * res + dz
                        for dx in (0, 1) for dy in (0, 1) for dz in (0, 1)])
    return base[:, None] + offsets[None, :], weights


def trilinear_backward(cache: InterpCache, d_value: np.ndarray,
                       grad: np.ndarray, system=None) -> None:
    """Scatter loss gradients at interpolated values back onto grad's lattice.

    One bincount per output channel keeps the accumulation order fixed,
    so repeated runs are bit-identical. Callers scattering several
    gradients at the same points may pass a precomputed corner system.
    """
    res = grad.shape[0]
    n = len(cache.u)
    flat, weights = _corner_system(cache.u, res) if system is None else system
    idx = flat.ravel()
    if grad.ndim == 4:
        dv = d_value.reshape(n, -1)
        for ch in range(grad.shape[3]):
            contrib = weights * dv[:, ch:ch + 1]
            grad[..., ch] += np.bincount(idx, weights=contrib.ravel(),
                                         minlength=res ** 3).reshape(res, res, res)
    else:
        contrib = weights * d_value.reshape(n, 1)
        grad += np.bincount(idx, weights=contrib.ravel(),
                            minlength=res ** 3).reshape(res, res, res)


def density_at(grid: DensityGrid, pts) -> tuple[np.ndarray, InterpCache]:
    """Density at each point; exactly zero outside the bounding box."""
    cache = trilinear_forward(grid.raw, grid.bbox_lo, grid.bbox_hi, pts)
    sigma = np.where(cache.inside, softplus(cache.value), 0.0)
    return sigma.reshape(cache.lead), cache


def density_backward(cache: InterpCache, d_sigma: np.ndarray,
                     grad: np.ndarray, system=None) -> None:
    dv = d_sigma.reshape(-1) * expit(cache.value) * cache.inside
    trilinear_backward(cache, dv, grad, system=system)


def color_at(grid: ColorGrid, pts) -> tuple[np.ndarray, InterpCache]:
    cache = trilinear_forward(grid.raw, grid.bbox_lo, grid.bbox_hi, pts)
    return expit(cache.value).reshape(cache.lead + (3,)), cache


def color_backward(cache: InterpCache, d_rgb: np.ndarray,
                   grad: np.ndarray, system=None) -> None:
    c = expit(cache.value)
    dv = d_rgb.reshape(-1, 3) * c * (1.0 - c)
    trilinear_backward(cache, dv, grad, system=system)


# --- field model ---------------------------------------------------------


@dataclass(frozen=True)
class SamplingConfig:
    n_coarse: int = 64
    n_fine: int = 32
    near: float = 1.0
    far: float = 4.0

    def __post_init__(self):
        if self.n_coarse < 2 or self.n_fine < 2:
            raise ValueError("need at least 2 coarse and 2 fine samples")
        if not 0.0 <= self.near < self.far:
            raise ValueError("need 0 <= near < far")


@dataclass
class FieldModel:
    proposal: DensityGrid
    fine_density: DensityGrid
    fine_color: ColorGrid
    config: SamplingConfig

    def __post_init__(self):
        fine_min = min(self.fine_density.resolution, self.fine_color.resolution)
        if self.proposal.resolution > fine_min:
            raise ValueError("proposal grid must not out-resolve the fine grids")
        for g in (self.fine_density, self.fine_color):
            if not (np.allclose(g.bbox_lo, self.proposal.bbox_lo)
                    and np.allclose(g.bbox_hi, self.proposal.bbox_hi)):
                raise ValueError("all grids must share one bounding box")

    @property
    def bbox_lo(self) -> np.ndarray:
        return self.proposal.bbox_lo

    @property
    def bbox_hi(self) -> np.ndarray:
        return self.proposal.bbox_hi

    def params(self) -> dict[str, np.ndarray]:
        return {"proposal": self.proposal.raw,
                "fine_density": self.fine_density.raw,
                "fine_color": self.fine_color.raw}

    def zero_grads(self) -> dict[str, np.ndarray]:
        return {name: np.zeros_like(p) for name, p in self.params().items()}


def init_field(bbox_lo, bbox_hi, *, prop_res: int = 32, fine_res: int = 128,
               n_coarse: int = 64, n_fine: int = 32, near: float = 1.0,
               far: float = 4.0, init_sigma: float = 0.1) -> FieldModel:
    """Near-transparent mid-gray field over the given box."""
    lo, hi = as_vec3(bbox_lo), as_vec3(bbox_hi)
    raw0 = softplus_inv(init_sigma)
    return FieldModel(
        proposal=DensityGrid(np.full((prop_res,) * 3, raw0), lo, hi),
        fine_density=DensityGrid(np.full((fine_res,) * 3, raw0), lo, hi),
        fine_color=ColorGrid(np.zeros((fine_res,) * 3 + (3,)), lo, hi),
        config=SamplingConfig(n_coarse=n_coarse, n_fine=n_fine,
                              near=near, far=far))


def copy_field(field: FieldModel) -> FieldModel:
    return FieldModel(
        proposal=replace(field.proposal, raw=field.proposal.raw.copy()),
        fine_density=replace(field.fine_density, raw=field.fine_density.raw.copy()),
        fine_color=replace(field.fine_color, raw=field.fine_color.raw.copy()),
        config=field.config)


def params_equal(a: FieldModel, b: FieldModel) -> bool:
    pa, pb = a.params(), b.params()
    return all(np.array_equal(pa[k], pb[k]) for k in pa)


def query(field: FieldModel, x) -> tuple[float, np.ndarray]:
    """Fine density and color at one world point."""
    pt = as_vec3(x)[None, :]
    sigma, _ = density_at(field.fine_density, pt)
    rgb, _ = color_at(field.fine_color, pt)
    return float(sigma[0]), rgb[0]


# --- rendering mathematics ------------------------------------------------


def alpha_from_sigma(sigma, delta):
    sigma = np.asarray(sigma, dtype=float)
    delta = np.asarray(delta, dtype=float)
    if np.any(sigma < 0):
        raise ValueError("density must be nonnegative")
    if np.any(delta <= 0):
        raise ValueError("segment lengths must be positive")
    return -np.expm1(-sigma * delta)


def composite(alphas, colors, background) -> tuple[np.ndarray, np.ndarray]:
    """Front-to-back compositing over a background.

    alphas (..., n), colors (..., n, 3) -> (color (..., 3), weights (..., n)).
    """
    alphas = np.asarray(alphas, dtype=float)
    colors = np.asarray(colors, dtype=float)
    bg = as_vec3(background)
    if alphas.min() < 0 or alphas.max() > 1:
        raise ValueError("alphas must lie in [0, 1]")
    w = weights_from_alpha(alphas)
    out = np.sum(w[..., None] * colors, axis=-2)
    out += (1.0 - w.sum(axis=-1))[..., None] * bg
    return out, w


def composite_backward(alphas, colors, background, d_color):
    """Gradients of compositing: d_color (..., 3) -> (d_alphas, d_colors).

    Uses the recursion C_i = a_i c_i + (1 - a_i) C_{i+1} with C_n = background,
    which avoids dividing by (1 - a_i).
    """
    alphas = np.asarray(alphas, dtype=float)
    colors = np.asarray(colors, dtype=float)
    bg = as_vec3(background)
    n = alphas.shape[-1]
    w = weights_from_alpha(alphas)
    d_colors = w[..., None] * d_color[..., None, :]
    # Transmittance up to each sample (exclusive product).
    keep = np.cumprod(1.0 - alphas, axis=-1)
    trans = np.concatenate(
        [np.ones(alphas.shape[:-1] + (1,)), keep[..., :-1]], axis=-1)
    d_alphas = np.empty_like(alphas)
    rest = np.broadcast_to(bg, colors.shape[:-2] + (3,)).copy()
    for i in range(n - 1, -1, -1):
        diff = colors[..., i, :] - rest
        d_alphas[..., i] = trans[..., i] * np.sum(diff * d_color, axis=-1)
        rest = alphas[..., i, None] * colors[..., i, :] \
            + (1.0 - alphas[..., i, None]) * rest
    return d_alphas, d_colors


# --- two-stage sampling ---------------------------------------------------


class PropForward(NamedTuple):
    edges: np.ndarray   # (n_coarse + 1,) shared uniform bin edges
    ts: np.ndarray      # (R, n_coarse) one sample per bin
    sigma: np.ndarray   # (R, n_coarse)
    alpha: np.ndarray   # (R, n_coarse)
    delta: float
    cache: InterpCache


def proposal_forward(field: FieldModel, origins: np.ndarray, dirs: np.ndarray,
                     rng: np.random.Generator | None = None,
                     stratified: bool = True) -> PropForward:
    cfg = field.config
    n_rays = len(origins)
    edges = np.linspace(cfg.near, cfg.far, cfg.n_coarse + 1)
    delta = (cfg.far - cfg.near) / cfg.n_coarse
    if stratified:
        if rng is None:
            raise ValueError("stratified sampling needs a generator")
        jitter = rng.random((n_rays, cfg.n_coarse))
    else:
        jitter = np.full((n_rays, cfg.n_coarse), 0.5)
    ts = edges[:-1] + jitter * delta
    pts = origins[:, None, :] + ts[..., None] * dirs[:, None, :]
    sigma, cache = density_at(field.proposal, pts)
    alpha = -np.expm1(-sigma * delta)
    return PropForward(edges=edges, ts=ts, sigma=sigma, alpha=alpha,
                       delta=delta, cache=cache)


def importance_samples(edges: np.ndarray, prop_alpha: np.ndarray, n_fine: int,
                       rng: np.random.Generator | None = None,
                       stratified: bool = True,
                       floor: float = UNIFORM_FLOOR) -> np.ndarray:
    """Inverse-transform draws from proposal weights mixed with uniform mass.

    Stratified draws in [0, 1) make the returned distances strictly
    increasing along each ray.
    """
    n_rays, n_bins = prop_alpha.shape
    w = weights_from_alpha(prop_alpha)
    wsum = w.sum(axis=1, keepdims=True)
    base = np.where(wsum > 0, w / np.where(wsum > 0, wsum, 1.0), 1.0 / n_bins)
    pdf = (1.0 - floor) * base + floor / n_bins
    pdf /= pdf.sum(axis=1, keepdims=True)
    cdf = np.concatenate([np.zeros((n_rays, 1)), np.cumsum(pdf, axis=1)], axis=1)
    cdf[:, -1] = 1.0
    if stratified:
        if rng is None:
            raise ValueError("stratified sampling needs a generator")
        u = (np.arange(n_fine) + rng.random((n_rays, n_fine))) / n_fine
    else:
        u = np.broadcast_to((np.arange(n_fine) + 0.5) / n_fine,
                            (n_rays, n_fine)).copy()
    idx = np.sum(u[:, :, None] >= cdf[:, None, :], axis=2) - 1
    idx = np.clip(idx, 0, n_bins - 1)
    cdf_lo = np.take_along_axis(cdf, idx, axis=1)
    p = np.take_along_axis(pdf, idx, axis=1)
    frac = (u - cdf_lo) / p
    lo = edges[idx]
    return lo + frac * (edges[idx + 1] - edges[idx])


def midpoint_edges(ts: np.ndarray, near: float, far: float) -> np.ndarray:
    """Histogram edges around sorted sample distances: near/midpoints/far."""
    n_rays = len(ts)
    mids = 0.5 * (ts[:, 1:] + ts[:, :-1])
    return np.concatenate([np.full((n_rays, 1), near), mids,
                           np.full((n_rays, 1), far)], axis=1)


# --- full render pass -----------------------------------------------------


@dataclass
class RenderBatch:
    """Forward pass over a ray batch with everything backward needs."""

    color: np.ndarray        # (R, 3)
    prop_edges: np.ndarray   # (n_coarse + 1,)
    prop_alpha: np.ndarray   # (R, n_coarse)
    fine_ts: np.ndarray      # (R, n_fine)
    fine_points: np.ndarray  # (R, n_fine, 3)
    fine_edges: np.ndarray   # (R, n_fine + 1)
    fine_delta: np.ndarray   # (R, n_fine)
    fine_alpha: np.ndarray   # (R, n_fine)
    fine_rgb: np.ndarray     # (R, n_fine, 3)
    weights: np.ndarray      # (R, n_fine)
    background: np.ndarray
    prop_cache: InterpCache
    density_cache: InterpCache
    rgb_cache: InterpCache


def render_batch(field: FieldModel, origins: np.ndarray, dirs: np.ndarray,
                 background, rng: np.random.Generator | None = None,
                 stratified: bool = True) -> RenderBatch:
    cfg = field.config
    prop = proposal_forward(field, origins, dirs, rng=rng, stratified=stratified)
    fine_ts = importance_samples(prop.edges, prop.alpha, cfg.n_fine,
                                 rng=rng, stratified=stratified)
    fine_edges = midpoint_edges(fine_ts, cfg.near, cfg.far)
    fine_delta = np.diff(fine_edges, axis=1)
    pts = origins[:, None, :] + fine_ts[..., None] * dirs[:, None, :]
    sigma, density_cache = density_at(field.fine_density, pts)
    alpha = -np.expm1(-sigma * fine_delta)
    rgb, rgb_cache = color_at(field.fine_color, pts)
    color, weights = composite(alpha, rgb, background)
    return RenderBatch(color=color, prop_edges=prop.edges, prop_alpha=prop.alpha,
                       fine_ts=fine_ts, fine_points=pts, fine_edges=fine_edges,
                       fine_delta=fine_delta, fine_alpha=alpha, fine_rgb=rgb,
                       weights=weights, background=as_vec3(background),
                       prop_cache=prop.cache, density_cache=density_cache,
                       rgb_cache=rgb_cache)


def render_backward(field: FieldModel, batch: RenderBatch,
                    grads: dict[str, np.ndarray],
                    d_color: np.ndarray | None = None,
                    d_fine_alpha: np.ndarray | None = None,
                    d_fine_rgb: np.ndarray | None = None,
                    d_prop_alpha: np.ndarray | None = None) -> None:
    """Accumulate parameter gradients for any mix of upstream loss terms."""
    n_rays, n_fine = batch.fine_alpha.shape
    da = np.zeros((n_rays, n_fine))
    dc = np.zeros((n_rays, n_fine, 3))
    if d_color is not None:
        da_c, dc_c = composite_backward(batch.fine_alpha, batch.fine_rgb,
                                        batch.background, d_color)
        da += da_c
        dc += dc_c
    if d_fine_alpha is not None:
        da += d_fine_alpha
    if d_fine_rgb is not None:
        dc += d_fine_rgb
    # density and color were sampled at the same points; when the grids
    # share a resolution the corner system can be computed once
    shared = None
    if (np.any(da) and np.any(dc)
            and field.fine_density.raw.shape[0] == field.fine_color.raw.shape[0]):
        shared = _corner_system(batch.density_cache.u,
                                field.fine_density.raw.shape[0])
    if np.any(da):
        d_sigma = da * batch.fine_delta * (1.0 - batch.fine_alpha)
        density_backward(batch.density_cache, d_sigma, grads["fine_density"],
                         system=shared)
    if np.any(dc):
        color_backward(batch.rgb_cache, dc, grads["fine_color"], system=shared)
    if d_prop_alpha is not None and np.any(d_prop_alpha):
        cfg = field.config
        delta = (cfg.far - cfg.near) / cfg.n_coarse
        d_sigma_p = d_prop_alpha * delta * (1.0 - batch.prop_alpha)
        density_backward(batch.prop_cache, d_sigma_p, grads["proposal"])


# --- single-ray views of the same machinery --------------------------------


@dataclass(frozen=True)
class RenderOutput:
    color: np.ndarray
    fine_hist: SampleHistogram
    prop_hist: SampleHistogram
    points: np.ndarray
    point_alpha: np.ndarray
    point_rgb: np.ndarray


def proposal_sample(field: FieldModel, ray: Ray, seed: int = 0,
                    stratified: bool = True):
    """Fine sample points for one ray plus the proposal histogram behind them."""
    rng = np.random.default_rng(seed)
    origins = ray.origin[None, :]
    dirs = ray.direction[None, :]
    prop = proposal_forward(field, origins, dirs, rng=rng, stratified=stratified)
    ts = importance_samples(prop.edges, prop.alpha, field.config.n_fine,
                            rng=rng, stratified=stratified)
    pts = origins[:, None, :] + ts[..., None] * dirs[:, None, :]
    hist = SampleHistogram(edges=prop.edges, alpha=prop.alpha[0])
    return pts[0], hist


def render_ray(field: FieldModel, ray: Ray, background, seed: int = 0,
               stratified: bool = True) -> RenderOutput:
    rng = np.random.default_rng(seed)
    batch = render_batch(field, ray.origin[None, :], ray.direction[None, :],
                         background, rng=rng, stratified=stratified)
    return RenderOutput(
        color=batch.color[0],
        fine_hist=SampleHistogram(edges=batch.fine_edges[0],
                                  alpha=batch.fine_alpha[0]),
        prop_hist=SampleHistogram(edges=batch.prop_edges,
                                  alpha=batch.prop_alpha[0]),
        points=batch.fine_points[0],
        point_alpha=batch.fine_alpha[0],
        point_rgb=batch.fine_rgb[0])


def render_image(field: FieldModel, pose, background,
                 chunk: int = 4096) -> np.ndarray:
    """Deterministic full-frame render (midpoint samples, no jitter)."""
    from .geometry import camera_rays

    origins, dirs = camera_rays(pose)
    rows = []
    for i in range(0, len(origins), chunk):
        batch = render_batch(field, origins[i:i + chunk], dirs[i:i + chunk],
                             background, stratified=False)
        rows.append(batch.color)
    img = np.concatenate(rows, axis=0).reshape(pose.height, pose.width, 3)
    return np.clip(img, 0.0, 1.0)


# --- checkpoints -----------------------------------------------------------

_HEADER = struct.Struct("<8sI3I6d2I2d")


def save_field(path, field: FieldModel) -> None:
    """Single-file checkpoint: fixed header + little-endian f32 C-order arrays."""
    cfg = field.config
    header = _HEADER.pack(
        CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
        field.proposal.resolution, field.fine_density.resolution,
        field.fine_color.resolution,
        *field.bbox_lo.tolist(), *field.bbox_hi.tolist(),
        cfg.n_coarse, cfg.n_fine, cfg.near, cfg.far)
    blobs = [field.proposal.raw, field.fine_density.raw, field.fine_color.raw]
    with open(path, "wb") as fh:
        fh.write(header)
        for arr in blobs:
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_field(path) -> FieldModel:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ValueError(f"{path}: truncated checkpoint header")
    fields = _HEADER.unpack_from(data)
    magic, version = fields[0], fields[1]
    if magic != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a field checkpoint (bad magic)")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    prop_res, dens_res, col_res = fields[2:5]
    lo = np.array(fields[5:8])
    hi = np.array(fields[8:11])
    n_coarse, n_fine = fields[11:13]
    near, far = fields[13:15]
    sizes = [prop_res ** 3, dens_res ** 3, col_res ** 3 * 3]
    want = _HEADER.size + 4 * sum(sizes)
    if len(data) != want:
        raise ValueError(f"{path}: expected {want} bytes, found {len(data)}")
    offset = _HEADER.size
    arrays = []
    for size in sizes:
        arrays.append(np.frombuffer(data, dtype="<f4", count=size,
                                    offset=offset).astype(float))
        offset += 4 * size
    return FieldModel(
        proposal=DensityGrid(arrays[0].reshape(prop_res, prop_res, prop_res),
                             lo, hi),
        fine_density=DensityGrid(arrays[1].reshape(dens_res, dens_res, dens_res),
                                 lo, hi),
        fine_color=ColorGrid(arrays[2].reshape(col_res, col_res, col_res, 3),
                             lo, hi),
        config=SamplingConfig(n_coarse=n_coarse, n_fine=n_fine,
                              near=near, far=far))
