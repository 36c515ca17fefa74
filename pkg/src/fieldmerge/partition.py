"""View partitioning: azimuth sectors, percentile splits, and graph communities.

The graph path builds a co-visibility adjacency (from triangulated points or
from the scene oracle), sweeps Louvain over a resolution ladder, and falls
back to spectral clustering and then percentile splitting whenever the
requested number of balanced groups does not come out.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import CameraPose, azimuth
from .scene import Scene, covis_surface_samples, visible_mask

GAMMA_LADDER = np.geomspace(0.5, 4.0, 12)
TWO_PI = 2.0 * math.pi


@dataclass
class PartitionSet:
    """K view-index groups covering all views, tagged with their origin."""

    groups: list[list[int]]
    n_views: int
    method: str
    azimuths: np.ndarray | None = None
    gamma: float | None = None
    seed: int | None = None
    overlap_deg: float = 0.0

    def __post_init__(self):
        self.groups = [sorted(int(i) for i in g) for g in self.groups]
        if not self.groups:
            raise ValueError("need at least one group")
        seen: set[int] = set()
        total = 0
        for gi, group in enumerate(self.groups):
            if not group:
                raise ValueError(f"group {gi} is empty")
            if min(group) < 0 or max(group) >= self.n_views:
                raise ValueError(f"group {gi} has out-of-range view indices")
            if len(set(group)) != len(group):
                raise ValueError(f"group {gi} repeats a view index")
            seen.update(group)
            total += len(group)
        if seen != set(range(self.n_views)):
            missing = sorted(set(range(self.n_views)) - seen)
            raise ValueError(f"views not covered by any group: {missing[:8]}")
        if self.overlap_deg == 0.0 and total != self.n_views:
            raise ValueError("groups overlap but no overlap was requested")

    @property
    def k(self) -> int:
        return len(self.groups)

    def sizes(self) -> list[int]:
        return [len(g) for g in self.groups]

    def group_of(self, view: int) -> int:
        """Lowest-index group containing the view (the overlap tie-break)."""
        for gi, group in enumerate(self.groups):
            if view in group:
                return gi
        raise ValueError(f"view {view} is not in any group")

    def labels(self) -> np.ndarray:
        """Per-view group index; requires disjoint groups."""
        out = np.full(self.n_views, -1, dtype=int)
        for gi, group in enumerate(self.groups):
            for v in group:
                if out[v] != -1:
                    raise ValueError("labels undefined for overlapping groups")
                out[v] = gi
        return out


def save_partitions(path, pset: PartitionSet) -> None:
    doc = {
        "method": pset.method,
        "k": pset.k,
        "n_views": pset.n_views,
        "partitions": pset.groups,
        "gamma": pset.gamma,
        "seed": pset.seed,
        "overlap_deg": pset.overlap_deg,
        "azimuths": None if pset.azimuths is None else
                    [float(a) for a in pset.azimuths],
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def load_partitions(path) -> PartitionSet:
    doc = json.loads(Path(path).read_text())
    try:
        az = doc.get("azimuths")
        return PartitionSet(
            groups=doc["partitions"], n_views=doc["n_views"],
            method=doc["method"], gamma=doc.get("gamma"),
            seed=doc.get("seed"), overlap_deg=doc.get("overlap_deg", 0.0),
            azimuths=None if az is None else np.asarray(az, dtype=float))
    except KeyError as exc:
        raise ValueError(f"{path}: partition manifest missing {exc}") from exc


# --- pose-based partitions -------------------------------------------------


def azimuth_partition(poses: list[CameraPose], k: int,
                      overlap_deg: float = 0.0) -> PartitionSet:
    """Half-open azimuth sectors of width 2*pi/K, optionally widened.

    With overlap, each sector grows by overlap_deg/2 on both ends (modulo a
    full turn) and a view may land in two sectors.
    """
    if k < 2:
        raise ValueError("need at least 2 partitions")
    if overlap_deg < 0:
        raise ValueError("overlap must be nonnegative")
    az = np.array([azimuth(p.center) for p in poses])
    width = TWO_PI / k
    margin = math.radians(overlap_deg) / 2.0
    groups: list[list[int]] = []
    for ell in range(k):
        start = ell * width - margin
        span = width + 2.0 * margin
        rel = (az - start) % TWO_PI
        members = np.nonzero(rel < span)[0]
        if len(members) == 0:
            raise ValueError(f"azimuth sector {ell} has no views; "
                             f"use the percentile method instead")
        groups.append(members.tolist())
    return PartitionSet(groups=groups, n_views=len(poses), method="azimuth",
                        azimuths=az, overlap_deg=overlap_deg)


def percentile_partition(poses: list[CameraPose], k: int) -> PartitionSet:
    """Order statistics of azimuth: K contiguous runs whose sizes differ by <= 1."""
    if k < 2:
        raise ValueError("need at least 2 partitions")
    if len(poses) < k:
        raise ValueError(f"cannot split {len(poses)} views into {k} groups")
    az = np.array([azimuth(p.center) for p in poses])
    order = np.argsort(az, kind="stable")
    groups = [chunk.tolist() for chunk in np.array_split(order, k)]
    return PartitionSet(groups=groups, n_views=len(poses),
                        method="percentile", azimuths=az)


# --- co-visibility adjacency -----------------------------------------------


def covis_from_sfm(points, n_views: int | None = None) -> np.ndarray:
    """Adjacency counts of 3D points co-observed by view pairs.

    `points` is a sequence of (xyz, observing view indices) records.
    """
    records = []
    top = -1
    for rec_idx, rec in enumerate(points):
        try:
            xyz, views = rec
            np.asarray(xyz, dtype=float).reshape(3)
            idx = sorted({int(v) for v in views})
        except (TypeError, ValueError) as exc:
            raise ValueError(f"bad point record {rec_idx}: {exc}") from exc
        if idx and idx[0] < 0:
            raise ValueError(f"bad point record {rec_idx}: negative view index")
        records.append(idx)
        if idx:
            top = max(top, idx[-1])
    if n_views is None:
        n_views = top + 1
    elif top >= n_views:
        raise ValueError(f"view index {top} out of range for {n_views} views")
    adj = np.zeros((n_views, n_views), dtype=int)
    for idx in records:
        for a_pos, a in enumerate(idx):
            for b in idx[a_pos + 1:]:
                adj[a, b] += 1
                adj[b, a] += 1
    return adj


def covis_from_oracle(scene: Scene, poses: list[CameraPose], n_samples: int,
                      seed: int) -> np.ndarray:
    """Oracle surrogate for triangulated points: count co-visible surface samples."""
    pts = covis_surface_samples(scene, n_samples, seed)
    vis = np.stack([visible_mask(scene, pose, pts) for pose in poses])
    adj = vis.astype(int) @ vis.astype(int).T
    np.fill_diagonal(adj, 0)
    return adj


def _check_adjacency(adj: np.ndarray) -> np.ndarray:
    adj = np.asarray(adj, dtype=float)
    if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
        raise ValueError("adjacency must be square")
    if not np.array_equal(adj, adj.T):
        raise ValueError("adjacency must be symmetric")
    if np.any(np.diag(adj) != 0):
        raise ValueError("adjacency diagonal must be zero")
    if adj.min() < 0:
        raise ValueError("adjacency weights must be nonnegative")
    return adj


def save_adjacency(path, adj: np.ndarray) -> None:
    adj = _check_adjacency(adj)
    n = len(adj)
    lines = [str(n)]
    lines += [" ".join(str(int(x)) for x in row) for row in adj]
    Path(path).write_text("\n".join(lines) + "\n")


def load_adjacency(path) -> np.ndarray:
    lines = Path(path).read_text().split("\n")
    try:
        n = int(lines[0])
        rows = [[int(tok) for tok in lines[1 + i].split()] for i in range(n)]
    except (ValueError, IndexError) as exc:
        raise ValueError(f"{path}: malformed adjacency file: {exc}") from exc
    adj = np.array(rows, dtype=int)
    if adj.shape != (n, n):
        raise ValueError(f"{path}: expected {n}x{n} entries")
    return _check_adjacency(adj).astype(int)


def load_sfm_points(path) -> list[tuple[np.ndarray, list[int]]]:
    """One record per line: x y z k v_1 ... v_k."""
    out = []
    for line_no, line in enumerate(Path(path).read_text().split("\n"), start=1):
        if not line.strip():
            continue
        toks = line.split()
        try:
            xyz = np.array([float(t) for t in toks[:3]])
            count = int(toks[3])
            views = [int(t) for t in toks[4:]]
        except (ValueError, IndexError) as exc:
            raise ValueError(f"{path}:{line_no}: malformed point record: {exc}") \
                from exc
        if len(views) != count:
            raise ValueError(f"{path}:{line_no}: expected {count} view indices, "
                             f"found {len(views)}")
        out.append((xyz, views))
    return out


# --- modularity and Louvain -------------------------------------------------


@dataclass(frozen=True)
class CommunityConfig:
    gamma: float = 1.0
    seed: int = 0
    max_sweeps: int = 100
    balance: float = 2.0

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError("resolution must be positive")
        if self.balance < 1:
            raise ValueError("balance threshold must be >= 1")


def modularity(adj: np.ndarray, partition, gamma: float = 1.0) -> float:
    """Q = (1/2m) sum_ij [A_ij - gamma k_i k_j / 2m] over same-community pairs."""
    adj = _check_adjacency(adj)
    n = len(adj)
    two_m = adj.sum()
    if two_m == 0:
        raise ValueError("modularity undefined on an empty graph")
    if isinstance(partition, PartitionSet):
        labels = partition.labels()
    else:
        labels = np.asarray(partition, dtype=int)
        if labels.shape != (n,):
            raise ValueError("labels must assign every node")
    deg = adj.sum(axis=1)
    q = 0.0
    for c in np.unique(labels):
        members = labels == c
        q += adj[np.ix_(members, members)].sum() / two_m
        q -= gamma * (deg[members].sum() / two_m) ** 2
    return float(q)


def _local_moves(adj: np.ndarray, gamma: float, rng: np.random.Generator,
                 max_sweeps: int) -> np.ndarray:
    """One Louvain level: greedy single-node moves by positive modularity gain.

    Gain of inserting isolated node i into community C:
    k_{i,C}/m - gamma * Sigma_tot(C) * k_i / (2 m^2), with Sigma_tot taken
    without i. A node moves only when some community strictly beats
    re-inserting it where it was.
    """
    n = len(adj)
    labels = np.arange(n)
    deg = adj.sum(axis=1)
    two_m = adj.sum()
    sigma_tot = deg.astype(float).copy()
    for _ in range(max_sweeps):
        moved = False
        for i in rng.permutation(n):
            c_old = labels[i]
            sigma_tot[c_old] -= deg[i]
            k_ic = np.bincount(labels, weights=adj[i], minlength=n)
            # Aggregated levels carry self-loops; those travel with the node
            # and must not bias it toward its current community.
            k_ic[c_old] -= adj[i, i]
            gain = 2.0 * k_ic / two_m \
                - gamma * sigma_tot * deg[i] * 2.0 / (two_m ** 2)
            candidates = np.unique(labels)
            best = c_old
            best_gain = gain[c_old]
            for c in candidates:
                if gain[c] > best_gain + 1e-15:
                    best, best_gain = c, gain[c]
            labels[i] = best
            sigma_tot[best] += deg[i]
            if best != c_old:
                moved = True
        if not moved:
            break
    return labels


def louvain(adj: np.ndarray, config: CommunityConfig) -> PartitionSet:
    """Two-phase community detection, deterministic for a fixed seed."""
    adj = _check_adjacency(adj)
    if adj.sum() == 0:
        raise ValueError("graph has no positive edge")
    rng = np.random.default_rng(config.seed)
    n = len(adj)
    node_to_comm = np.arange(n)
    level_adj = adj.astype(float)
    while True:
        labels = _local_moves(level_adj, config.gamma, rng, config.max_sweeps)
        _, compact = np.unique(labels, return_inverse=True)
        n_comms = compact.max() + 1
        node_to_comm = compact[node_to_comm]
        if n_comms == len(level_adj):
            break
        onehot = np.eye(n_comms)[compact]
        level_adj = onehot.T @ level_adj @ onehot
    groups = [np.nonzero(node_to_comm == c)[0].tolist()
              for c in range(node_to_comm.max() + 1)]
    return PartitionSet(groups=groups, n_views=n, method="louvain",
                        gamma=config.gamma, seed=config.seed)


# --- spectral clustering ----------------------------------------------------


def jacobi_eigh(mat: np.ndarray, tol: float = 1e-12,
                max_sweeps: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns (eigenvalues ascending, column eigenvectors).
    """
    a = np.array(mat, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("matrix must be square")
    if not np.allclose(a, a.T, atol=1e-12):
        raise ValueError("matrix must be symmetric")
    n = len(a)
    vecs = np.eye(n)
    scale = max(np.linalg.norm(a), 1e-300)
    for _ in range(max_sweeps):
        off = math.sqrt(2.0 * np.sum(np.triu(a, 1) ** 2))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = math.copysign(1.0, theta) / (abs(theta)
                                                 + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                rot_p = c * a[p] - s * a[q]
                rot_q = s * a[p] + c * a[q]
                a[p], a[q] = rot_p, rot_q
                rot_p = c * a[:, p] - s * a[:, q]
                rot_q = s * a[:, p] + c * a[:, q]
                a[:, p], a[:, q] = rot_p, rot_q
                rot_p = c * vecs[:, p] - s * vecs[:, q]
                rot_q = s * vecs[:, p] + c * vecs[:, q]
                vecs[:, p], vecs[:, q] = rot_p, rot_q
    vals = np.diag(a).copy()
    order = np.argsort(vals, kind="stable")
    return vals[order], vecs[:, order]


def _kmeans_pp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centers = [x[rng.integers(len(x))]]
    for _ in range(k - 1):
        d2 = np.min([np.sum((x - c) ** 2, axis=1) for c in centers], axis=0)
        total = d2.sum()
        if total == 0:
            centers.append(x[rng.integers(len(x))])
            continue
        centers.append(x[rng.choice(len(x), p=d2 / total)])
    return np.stack(centers)


def kmeans(x: np.ndarray, k: int, seed: int, restarts: int = 10,
           iters: int = 100) -> np.ndarray:
    """Plain Lloyd iteration with seeded k-means++ starts; best inertia wins."""
    rng = np.random.default_rng(seed)
    best_labels = None
    best_inertia = np.inf
    for _ in range(restarts):
        centers = _kmeans_pp_init(x, k, rng)
        labels = np.full(len(x), -1, dtype=int)
        for _round in range(iters):
            d2 = np.sum((x[:, None, :] - centers[None, :, :]) ** 2, axis=2)
            new_labels = np.argmin(d2, axis=1)
            for c in range(k):
                if not np.any(new_labels == c):
                    # Revive an empty cluster at the worst-fit point.
                    new_labels[np.argmax(np.min(d2, axis=1))] = c
            if np.array_equal(new_labels, labels):
                break
            labels = new_labels
            for c in range(k):
                centers[c] = x[labels == c].mean(axis=0)
        inertia = float(np.sum((x - centers[labels]) ** 2))
        if inertia < best_inertia - 1e-12:
            best_inertia = inertia
            best_labels = labels.copy()
    return best_labels


def spectral_cluster(adj: np.ndarray, k: int, seed: int) -> PartitionSet:
    """Normalized adjacency embedding (top-k eigenvectors, unit rows) + k-means."""
    adj = _check_adjacency(adj)
    if k < 2:
        raise ValueError("need at least 2 clusters")
    deg = adj.sum(axis=1)
    isolated = np.nonzero(deg == 0)[0]
    if len(isolated):
        raise ValueError(f"graph has isolated nodes: {isolated.tolist()[:8]}")
    inv_sqrt = 1.0 / np.sqrt(deg)
    norm = adj * inv_sqrt[:, None] * inv_sqrt[None, :]
    vals, vecs = jacobi_eigh(norm)
    embed = vecs[:, -k:]
    lengths = np.linalg.norm(embed, axis=1, keepdims=True)
    embed = embed / np.where(lengths > 0, lengths, 1.0)
    labels = kmeans(embed, k, seed=seed)
    groups = [np.nonzero(labels == c)[0].tolist() for c in range(k)]
    groups = [g for g in groups if g]
    return PartitionSet(groups=groups, n_views=len(adj), method="spectral",
                        seed=seed)


# --- the full real-world policy ---------------------------------------------


def _balanced(pset: PartitionSet, k: int, balance: float) -> bool:
    sizes = pset.sizes()
    return pset.k == k and max(sizes) <= balance * min(sizes)


def partition_realworld(adj: np.ndarray, poses: list[CameraPose], k: int,
                        config: CommunityConfig | None = None) -> PartitionSet:
    """Louvain over a resolution ladder, then spectral, then percentile."""
    if k < 2:
        raise ValueError("need at least 2 partitions")
    config = config or CommunityConfig()
    for gamma in GAMMA_LADDER:
        pset = louvain(adj, CommunityConfig(gamma=float(gamma),
                                            seed=config.seed,
                                            max_sweeps=config.max_sweeps,
                                            balance=config.balance))
        if _balanced(pset, k, config.balance):
            return pset
    pset = spectral_cluster(adj, k, seed=config.seed)
    if _balanced(pset, k, config.balance):
        return pset
    return percentile_partition(poses, k)
