"""Image-quality metrics and checkpoint evaluation.

PSNR, SSIM, and MS-SSIM on float images in [0, 1], plus `evaluate`,
which renders every view of a dataset split through a field model and
aggregates per-image scores into a mean report.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.signal import convolve2d

from .field import FieldModel, render_image
from .scene import Dataset

PSNR_CAP = 99.0
WINDOW_SIZE = 11
WINDOW_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
# Standard five-scale MS-SSIM weights; renormalized over however many
# dyadic scales the image size actually supports.
MS_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)


def _check_pair(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a = a[:, :, None]
        b = b[:, :, None]
    if a.ndim != 3:
        raise ValueError(f"expected (H, W) or (H, W, C) images, got shape {a.shape}")
    return a, b


def psnr_from_mse(mse: float) -> float:
    """Peak signal-to-noise ratio in dB for unit-range images."""
    if mse < 0.0:
        raise ValueError(f"mse must be nonnegative, got {mse}")
    if mse == 0.0:
        return PSNR_CAP
    return min(-10.0 * math.log10(mse), PSNR_CAP)


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    a, b = _check_pair(a, b)
    return psnr_from_mse(float(np.mean((a - b) ** 2)))


def _gaussian_window() -> np.ndarray:
    offsets = np.arange(WINDOW_SIZE, dtype=np.float64) - (WINDOW_SIZE - 1) / 2.0
    g = np.exp(-(offsets ** 2) / (2.0 * WINDOW_SIGMA ** 2))
    g /= g.sum()
    return np.outer(g, g)


_WINDOW = _gaussian_window()


def _ssim_cs_maps(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-window SSIM and contrast-structure maps for one channel.

    Valid-mode windowing only: no padding, so every window is fully
    supported by real pixels.
    """
    mu_x = convolve2d(x, _WINDOW, mode="valid")
    mu_y = convolve2d(y, _WINDOW, mode="valid")
    var_x = convolve2d(x * x, _WINDOW, mode="valid") - mu_x * mu_x
    var_y = convolve2d(y * y, _WINDOW, mode="valid") - mu_y * mu_y
    cov = convolve2d(x * y, _WINDOW, mode="valid") - mu_x * mu_y
    lum = (2.0 * mu_x * mu_y + SSIM_C1) / (mu_x * mu_x + mu_y * mu_y + SSIM_C1)
    cs = (2.0 * cov + SSIM_C2) / (var_x + var_y + SSIM_C2)
    return lum * cs, cs


def _ssim_cs(a: np.ndarray, b: np.ndarray) -> tuple[float, float]:
    if min(a.shape[0], a.shape[1]) < WINDOW_SIZE:
        raise ValueError(
            f"image {a.shape[0]}x{a.shape[1]} is smaller than the "
            f"{WINDOW_SIZE}x{WINDOW_SIZE} window"
        )
    ssim_vals = []
    cs_vals = []
    for ch in range(a.shape[2]):
        ssim_map, cs_map = _ssim_cs_maps(a[:, :, ch], b[:, :, ch])
        ssim_vals.append(float(np.mean(ssim_map)))
        cs_vals.append(float(np.mean(cs_map)))
    return float(np.mean(ssim_vals)), float(np.mean(cs_vals))


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean local SSIM, 11x11 Gaussian window, averaged over channels."""
    a, b = _check_pair(a, b)
    return _ssim_cs(a, b)[0]


def _avg_pool2(img: np.ndarray) -> np.ndarray:
    h = (img.shape[0] // 2) * 2
    w = (img.shape[1] // 2) * 2
    img = img[:h, :w]
    return img.reshape(h // 2, 2, w // 2, 2, img.shape[2]).mean(axis=(1, 3))


def usable_scales(height: int, width: int) -> int:
    """Dyadic scales (capped at 5) keeping the coarsest level >= window."""
    n = 0
    side = min(height, width)
    while side >= WINDOW_SIZE and n < len(MS_WEIGHTS):
        n += 1
        side //= 2
    return n


def ms_ssim(a: np.ndarray, b: np.ndarray, scales: int | None = None) -> float:
    """Multi-scale SSIM with 2x average pooling between scales.

    Contrast-structure terms at all but the coarsest scale, full SSIM at
    the coarsest, combined as a weighted geometric mean. With a single
    scale this is exactly `ssim`.
    """
    a, b = _check_pair(a, b)
    max_scales = usable_scales(a.shape[0], a.shape[1])
    if max_scales < 1:
        raise ValueError(
            f"image {a.shape[0]}x{a.shape[1]} too small for even one "
            f"{WINDOW_SIZE}x{WINDOW_SIZE} scale"
        )
    if scales is None:
        scales = max_scales
    if not 1 <= scales <= max_scales:
        raise ValueError(f"scales must be in [1, {max_scales}], got {scales}")
    weights = np.asarray(MS_WEIGHTS[:scales], dtype=np.float64)
    weights /= weights.sum()
    terms = np.empty(scales)
    for level in range(scales):
        ssim_val, cs_val = _ssim_cs(a, b)
        terms[level] = ssim_val if level == scales - 1 else cs_val
        if level < scales - 1:
            a = _avg_pool2(a)
            b = _avg_pool2(b)
    # Fractional powers of negative terms are undefined; clamp like the
    # reference implementation does.
    terms = np.maximum(terms, 0.0)
    return float(np.prod(terms ** weights))


@dataclass(frozen=True)
class Metrics:
    """Mean image-quality scores with a per-image breakdown."""

    psnr: float
    ssim: float
    ms_ssim: float
    per_image: tuple[dict, ...] = dc_field(default_factory=tuple)

    def __post_init__(self):
        for name in ("psnr", "ssim", "ms_ssim"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} is not finite: {getattr(self, name)}")

    def to_dict(self) -> dict:
        return {
            "psnr": self.psnr,
            "ssim": self.ssim,
            "ms_ssim": self.ms_ssim,
            "per_image": list(self.per_image),
        }


def evaluate_images(pairs: list[tuple[np.ndarray, np.ndarray]],
                    names: list[str] | None = None) -> Metrics:
    """Score (prediction, ground truth) pairs and average over images."""
    if not pairs:
        raise ValueError("no image pairs to evaluate")
    if names is None:
        names = [str(i) for i in range(len(pairs))]
    per_image = []
    for name, (pred, gt) in zip(names, pairs):
        per_image.append({
            "image": name,
            "psnr": psnr(pred, gt),
            "ssim": ssim(pred, gt),
            "ms_ssim": ms_ssim(pred, gt),
        })
    return Metrics(
        psnr=float(np.mean([m["psnr"] for m in per_image])),
        ssim=float(np.mean([m["ssim"] for m in per_image])),
        ms_ssim=float(np.mean([m["ms_ssim"] for m in per_image])),
        per_image=tuple(per_image),
    )


def evaluate(model: FieldModel, dataset: Dataset, split: str = "test",
             indices: list[int] | None = None) -> Metrics:
    """Render each view of a split deterministically and score it.

    Stratified jitter is disabled during rendering, so two evaluations
    of one checkpoint are bit-identical.
    """
    if split not in dataset.views:
        raise ValueError(f"no views in split {split!r}")
    views = dataset.views[split]
    if indices is None:
        indices = list(range(len(views)))
    pairs = []
    names = []
    for i in indices:
        gt = dataset.image(split, i)
        pred = render_image(model, views.poses[i], background=dataset.background)
        pairs.append((pred, gt))
        names.append(views.files[i])
    return evaluate_images(pairs, names)
