"""Per-ray opacity histograms and the overlap-consistency loss between them.

A histogram pairs strictly increasing ray distances (bin edges) with one
opacity value per bin. The loss below penalizes a reference histogram bin
whose opacity exceeds the total opacity the other histogram places on every
bin touching it; it is zero exactly when the bound holds everywhere, in
particular for any histogram against itself.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

HIST_EPS = 1e-7


@dataclass(frozen=True)
class SampleHistogram:
    edges: np.ndarray
    alpha: np.ndarray

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=float)
        alpha = np.asarray(self.alpha, dtype=float)
        if edges.ndim != 1 or len(edges) < 2:
            raise ValueError("edges must be a 1-D array of at least 2 values")
        if np.any(np.diff(edges) <= 0):
            raise ValueError("edges must be strictly increasing")
        if alpha.shape != (len(edges) - 1,):
            raise ValueError("need exactly one alpha per bin")
        if alpha.min() < 0.0 or alpha.max() > 1.0:
            raise ValueError("alpha values must lie in [0, 1]")
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "alpha", alpha)

    @property
    def n_bins(self) -> int:
        return len(self.alpha)


def bound(hist: SampleHistogram, interval) -> float:
    """Total opacity of all bins meeting [a, b], touching endpoints included."""
    a, b = float(interval[0]), float(interval[1])
    if not a < b:
        raise ValueError(f"interval must satisfy a < b, got [{a}, {b}]")
    lo, hi = hist.edges[:-1], hist.edges[1:]
    overlap = (lo <= b) & (hi >= a)
    return float(hist.alpha[overlap].sum())


def _touch_ranges(s_edges: np.ndarray, n_src_bins: int,
                  t_edges: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Inclusive source-bin index range [L, H] touching each target bin.

    Source bins are contiguous, so the touching set of an interval is a
    run; searchsorted finds its ends. Per-ray source edges are handled
    by shifting every ray into its own disjoint value block so a single
    global searchsorted still works.
    """
    n_rays, n_t = t_edges.shape[0], t_edges.shape[1] - 1
    if s_edges.ndim == 1:
        hi_idx = np.searchsorted(s_edges, t_edges[:, 1:], side="right") - 1
        lo_idx = np.searchsorted(s_edges, t_edges[:, :-1], side="left") - 1
    else:
        span = (max(float(s_edges.max()), float(t_edges.max()))
                - min(float(s_edges.min()), float(t_edges.min())) + 1.0)
        off = np.arange(n_rays)[:, None] * span
        row = np.arange(n_rays)[:, None] * s_edges.shape[1]
        flat = (s_edges + off).ravel()
        hi_idx = (np.searchsorted(flat, (t_edges[:, 1:] + off).ravel(),
                                  side="right").reshape(n_rays, n_t) - 1 - row)
        lo_idx = (np.searchsorted(flat, (t_edges[:, :-1] + off).ravel(),
                                  side="left").reshape(n_rays, n_t) - 1 - row)
    hi_idx = np.minimum(hi_idx, n_src_bins - 1)
    lo_idx = np.maximum(lo_idx, 0)
    # hi < lo marks target bins outside the source support entirely
    return lo_idx, hi_idx, hi_idx >= lo_idx


def _range_sums(s_alpha: np.ndarray, lo_idx: np.ndarray, hi_idx: np.ndarray,
                valid: np.ndarray) -> np.ndarray:
    """Sum s_alpha[r, lo..hi] per target bin.

    reduceat adds each segment left to right, so a sum over nonnegative
    opacities can never drop below any single included term; the
    self-consistency identity (loss of a histogram against itself being
    exactly zero) relies on that.
    """
    n_rays, ms = s_alpha.shape
    row = np.arange(n_rays)[:, None] * ms
    pad = n_rays * ms
    starts = np.minimum(row + lo_idx, pad)
    ends = np.minimum(row + hi_idx + 1, pad)
    flat = np.append(s_alpha.ravel(), 0.0)
    pairs = np.stack([starts, ends], axis=-1).reshape(-1)
    sums = np.add.reduceat(flat, pairs)[::2].reshape(lo_idx.shape)
    return np.where(valid, sums, 0.0)


def bound_batch(s_edges: np.ndarray, s_alpha: np.ndarray,
                t_edges: np.ndarray) -> np.ndarray:
    """Per-bin bounds of target intervals against source histograms.

    s_edges: (R, Ms+1) or (Ms+1,) shared; s_alpha: (R, Ms);
    t_edges: (R, Mt+1). Returns (R, Mt).
    """
    s_alpha = np.asarray(s_alpha, dtype=float)
    s_edges = np.asarray(s_edges, dtype=float)
    t_edges = np.asarray(t_edges, dtype=float)
    lo_idx, hi_idx, valid = _touch_ranges(s_edges, s_alpha.shape[1], t_edges)
    return _range_sums(s_alpha, lo_idx, hi_idx, valid)


def hist_loss_batch(s_edges, s_alpha, t_edges, t_alpha,
                    eps: float = HIST_EPS) -> tuple[float, np.ndarray]:
    """Mean over rays of the one-sided consistency loss, plus its gradient.

    The loss treats the target (t_*) opacities as constants; the returned
    gradient is with respect to the source (s_*) opacities only.
    """
    s_alpha = np.asarray(s_alpha, dtype=float)
    t_alpha = np.asarray(t_alpha, dtype=float)
    t_edges = np.asarray(t_edges, dtype=float)
    s_edges = np.asarray(s_edges, dtype=float)
    n_rays, ms = s_alpha.shape
    lo_idx, hi_idx, valid = _touch_ranges(s_edges, ms, t_edges)
    bounds = _range_sums(s_alpha, lo_idx, hi_idx, valid)
    gap = t_alpha - bounds
    inv = 1.0 / (t_alpha + eps)
    loss = float(np.sum(inv * np.maximum(gap, 0.0))) / n_rays
    # each active target bin pushes -inv uniformly onto its touching run;
    # accumulate run endpoints, then prefix-sum across source bins
    coef = np.where(valid & (gap > 0.0), inv, 0.0)
    row = np.arange(n_rays)[:, None] * (ms + 1)
    acc = (np.bincount((row + lo_idx).ravel(), weights=coef.ravel(),
                       minlength=n_rays * (ms + 1))
           - np.bincount((row + hi_idx + 1).ravel(), weights=coef.ravel(),
                         minlength=n_rays * (ms + 1)))
    d_alpha = -np.cumsum(acc.reshape(n_rays, ms + 1), axis=1)[:, :ms] / n_rays
    return loss, d_alpha


def hist_loss(source: SampleHistogram, target: SampleHistogram,
              eps: float = HIST_EPS) -> float:
    """Single-ray consistency loss of a source histogram against a target."""
    loss, _ = hist_loss_batch(source.edges, source.alpha[None, :],
                              target.edges[None, :], target.alpha[None, :],
                              eps=eps)
    return loss


def hist_loss_grad(source: SampleHistogram, target: SampleHistogram,
                   eps: float = HIST_EPS) -> tuple[float, np.ndarray]:
    loss, grad = hist_loss_batch(source.edges, source.alpha[None, :],
                                 target.edges[None, :], target.alpha[None, :],
                                 eps=eps)
    return loss, grad[0]


def weights_from_alpha(alpha: np.ndarray) -> np.ndarray:
    """Front-to-back compositing weights w_i = a_i * prod_{j<i}(1 - a_j)."""
    alpha = np.asarray(alpha, dtype=float)
    keep = np.cumprod(1.0 - alpha, axis=-1)
    inner = np.concatenate(
        [np.ones(alpha.shape[:-1] + (1,)), keep[..., :-1]], axis=-1)
    return alpha * inner
