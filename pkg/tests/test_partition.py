import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import (
    brute_force_best_q,
    modularity_oracle,
    partitions_rgs,
    planted_weighted_graph,
    two_block_graph,
)

from fieldmerge.geometry import fibonacci_hemisphere, fps_select, look_at_camera
from fieldmerge.partition import (
    CommunityConfig,
    PartitionSet,
    azimuth_partition,
    covis_from_oracle,
    covis_from_sfm,
    jacobi_eigh,
    kmeans,
    load_adjacency,
    load_partitions,
    load_sfm_points,
    louvain,
    modularity,
    partition_realworld,
    percentile_partition,
    save_adjacency,
    save_partitions,
    spectral_cluster,
)
from fieldmerge.scene import Scene, Sphere, twotone_scene


def poses_at_azimuths(azimuths_deg, radius=2.4, z=0.8):
    poses = []
    for a in azimuths_deg:
        rad = math.radians(a)
        center = (radius * math.cos(rad), radius * math.sin(rad), z)
        poses.append(look_at_camera(center, (0, 0, 0), focal=10.0,
                                    width=8, height=8))
    return poses


class TestAzimuthPartition:
    def test_eight_views_four_sectors(self):
        poses = poses_at_azimuths([i * 45.0 for i in range(8)])
        pset = azimuth_partition(poses, 4)
        assert pset.groups == [[0, 1], [2, 3], [4, 5], [6, 7]]
        assert pset.method == "azimuth"

    def test_boundary_view_goes_to_lower_sector(self):
        poses = poses_at_azimuths([0.0, 50.0, 130.0, 200.0, 300.0])
        pset = azimuth_partition(poses, 4)
        assert 0 in pset.groups[0]
        assert all(0 not in g for g in pset.groups[1:])

    def test_fps_rig_sizes_are_balanced(self):
        centers = fibonacci_hemisphere(1440, radius=2.4)
        idx = fps_select(centers, 180, seed=0)
        poses = [look_at_camera(centers[i], (0, 0, 0), focal=10.0,
                                width=8, height=8) for i in idx]
        pset = azimuth_partition(poses, 4)
        assert all(40 <= s <= 50 for s in pset.sizes())

    def test_overlap_widens_sectors(self):
        poses = poses_at_azimuths([10.0, 80.0, 100.0, 170.0, 190.0, 260.0,
                                   280.0, 350.0])
        pset = azimuth_partition(poses, 4, overlap_deg=60.0)
        # 10 degrees is inside sector 0 and inside sector 3 widened to
        # [240, 30) across the wrap.
        assert 0 in pset.groups[0]
        assert 0 in pset.groups[3]
        total = sum(pset.sizes())
        assert total > len(poses)

    def test_no_overlap_is_a_true_partition(self):
        poses = poses_at_azimuths(np.linspace(1, 359, 24))
        pset = azimuth_partition(poses, 4)
        assert sum(pset.sizes()) == 24
        assert sorted(i for g in pset.groups for i in g) == list(range(24))

    def test_k_below_two_rejected(self):
        poses = poses_at_azimuths([0, 90, 180, 270])
        with pytest.raises(ValueError):
            azimuth_partition(poses, 1)

    def test_empty_sector_rejected(self):
        poses = poses_at_azimuths([1.0, 2.0, 3.0, 4.0])
        with pytest.raises(ValueError):
            azimuth_partition(poses, 4)


class TestPercentilePartition:
    def test_eight_views_quartiles(self):
        poses = poses_at_azimuths([310, 40, 95, 120, 15, 200, 250, 355])
        pset = percentile_partition(poses, 4)
        assert pset.sizes() == [2, 2, 2, 2]
        assert pset.method == "percentile"

    def test_ten_views_four_groups(self):
        poses = poses_at_azimuths(np.linspace(3, 357, 10))
        pset = percentile_partition(poses, 4)
        assert sorted(pset.sizes(), reverse=True) == [3, 3, 2, 2]

    def test_duplicate_azimuths_break_ties_by_index(self):
        poses = poses_at_azimuths([90.0] * 4)
        pset = percentile_partition(poses, 2)
        assert pset.groups == [[0, 1], [2, 3]]

    @given(n=st.integers(4, 60), k=st.integers(2, 8), seed=st.integers(0, 999))
    @settings(max_examples=100, deadline=None)
    def test_sizes_never_differ_by_more_than_one(self, n, k, seed):
        if n < k:
            return
        rng = np.random.default_rng(seed)
        poses = poses_at_azimuths(rng.uniform(0, 360, size=n))
        sizes = percentile_partition(poses, k).sizes()
        assert max(sizes) - min(sizes) <= 1
        assert sum(sizes) == n


class TestCovisibility:
    def test_single_point_three_views(self):
        adj = covis_from_sfm([((0, 0, 0), [0, 1, 2])])
        want = np.array([[0, 1, 1], [1, 0, 1], [1, 1, 0]])
        assert np.array_equal(adj, want)

    def test_no_shared_points(self):
        adj = covis_from_sfm([((0, 0, 0), [0]), ((1, 1, 1), [1])])
        assert np.array_equal(adj, np.zeros((2, 2), dtype=int))

    def test_repeated_pairs_accumulate(self):
        adj = covis_from_sfm([((0, 0, 0), [0, 1]), ((1, 0, 0), [0, 1])])
        assert adj[0, 1] == 2 and adj[1, 0] == 2

    def test_malformed_record_reports_index(self):
        with pytest.raises(ValueError, match="record 1"):
            covis_from_sfm([((0, 0, 0), [0]), ("garbage",)])

    def test_oracle_identical_poses(self):
        scene = twotone_scene()
        pose = look_at_camera((2.4, 0, 1.0), (0, 0, 0), focal=28.0,
                              width=32, height=32)
        adj = covis_from_oracle(scene, [pose, pose], n_samples=400, seed=0)
        assert adj[0, 1] == adj[1, 0]
        assert adj[0, 0] == 0
        from fieldmerge.scene import covis_surface_samples, visible_mask
        pts = covis_surface_samples(scene, 400, seed=0)
        assert adj[0, 1] == visible_mask(scene, pose, pts).sum()

    def test_opposite_cameras_around_opaque_sphere(self):
        scene = Scene(primitives=(Sphere((0, 0, 0), 0.5, 60.0),),
                      bbox_lo=(-1, -1, -1), bbox_hi=(1, 1, 1))
        a = look_at_camera((2.0, 0, 0.2), (0, 0, 0), focal=28.0,
                           width=32, height=32)
        b = look_at_camera((-2.0, 0, 0.2), (0, 0, 0), focal=28.0,
                           width=32, height=32)
        n = 500
        adj = covis_from_oracle(scene, [a, b], n_samples=n, seed=1)
        assert adj[0, 1] < 0.02 * n

    def test_oracle_deterministic(self):
        scene = twotone_scene()
        poses = poses_at_azimuths([0, 120, 240], radius=2.4, z=1.0)
        a = covis_from_oracle(scene, poses, n_samples=200, seed=7)
        b = covis_from_oracle(scene, poses, n_samples=200, seed=7)
        assert np.array_equal(a, b)

    def test_adjacency_file_roundtrip(self, tmp_path):
        rng = np.random.default_rng(2)
        u = np.triu(rng.integers(0, 9, size=(6, 6)), 1)
        adj = u + u.T
        path = tmp_path / "adj.txt"
        save_adjacency(path, adj)
        assert path.read_text().splitlines()[0] == "6"
        assert np.array_equal(load_adjacency(path), adj)

    def test_adjacency_file_validation(self, tmp_path):
        path = tmp_path / "adj.txt"
        path.write_text("2\n0 1\n2 0\n")
        with pytest.raises(ValueError):
            load_adjacency(path)
        path.write_text("3\n0 1\n1 0\n")
        with pytest.raises(ValueError):
            load_adjacency(path)

    def test_sfm_points_file(self, tmp_path):
        path = tmp_path / "pts.txt"
        path.write_text("0.5 0 0.25 3 0 1 2\n-1 2 0 2 1 3\n")
        pts = load_sfm_points(path)
        assert len(pts) == 2
        assert pts[0][1] == [0, 1, 2]
        adj = covis_from_sfm(pts)
        assert adj[1, 3] == 1 and adj[0, 1] == 1
        path.write_text("0 0 0 3 0 1\n")
        with pytest.raises(ValueError, match=":1"):
            load_sfm_points(path)


class TestModularity:
    def test_single_community_is_zero(self):
        adj = two_block_graph(block=3, inside=2, cross=1)
        q = modularity(adj, np.zeros(6, dtype=int), gamma=1.0)
        assert q == pytest.approx(0.0, abs=1e-12)

    def test_two_triangles(self):
        adj = np.zeros((6, 6), dtype=int)
        for a, b in [(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5)]:
            adj[a, b] = adj[b, a] = 1
        q = modularity(adj, np.array([0, 0, 0, 1, 1, 1]), gamma=1.0)
        assert q == pytest.approx(0.5)

    def test_matches_independent_oracle(self):
        rng = np.random.default_rng(4)
        for _ in range(10):
            adj = planted_weighted_graph(rng)
            labels = rng.integers(0, 3, size=8)
            got = modularity(adj, labels, gamma=1.3)
            want = modularity_oracle(adj, labels, gamma=1.3)
            assert got == pytest.approx(want, abs=1e-12)

    def test_brute_force_maximum_is_reachable(self):
        adj = planted_weighted_graph(np.random.default_rng(9))
        best = max(modularity(adj, np.asarray(labels))
                   for labels in partitions_rgs(8))
        assert best == pytest.approx(brute_force_best_q(adj), abs=1e-12)

    def test_scale_invariance(self):
        rng = np.random.default_rng(5)
        adj = planted_weighted_graph(rng)
        labels = rng.integers(0, 2, size=8)
        a = modularity(adj, labels)
        b = modularity(adj * 7, labels)
        assert a == pytest.approx(b, abs=1e-9)

    def test_empty_graph_rejected(self):
        with pytest.raises(ValueError):
            modularity(np.zeros((4, 4)), np.zeros(4, dtype=int))


class TestLouvain:
    def test_two_cliques_with_bridge(self):
        adj = np.zeros((8, 8), dtype=int)
        for grp in (range(4), range(4, 8)):
            for a in grp:
                for b in grp:
                    if a != b:
                        adj[a, b] = 1
        adj[3, 4] = adj[4, 3] = 1
        pset = louvain(adj, CommunityConfig(gamma=1.0, seed=0))
        assert sorted(map(tuple, pset.groups)) == [(0, 1, 2, 3), (4, 5, 6, 7)]

    def test_complete_graph_is_one_community(self):
        adj = np.ones((6, 6), dtype=int)
        np.fill_diagonal(adj, 0)
        pset = louvain(adj, CommunityConfig(gamma=1.0, seed=3))
        assert pset.k == 1

    def test_fifty_planted_graphs_near_optimal(self):
        rng = np.random.default_rng(0)
        for g in range(50):
            adj = planted_weighted_graph(rng)
            pset = louvain(adj, CommunityConfig(gamma=1.0, seed=g))
            achieved = modularity(adj, pset, gamma=1.0)
            optimum = brute_force_best_q(adj)
            assert achieved >= 0.95 * optimum - 1e-12, \
                f"graph {g}: {achieved:.4f} < 0.95 * {optimum:.4f}"

    def test_never_below_singleton_start(self):
        rng = np.random.default_rng(1)
        for g in range(20):
            u = np.triu(rng.integers(0, 6, size=(9, 9)), 1)
            adj = u + u.T
            if adj.sum() == 0:
                continue
            pset = louvain(adj, CommunityConfig(gamma=1.2, seed=g))
            q = modularity(adj, pset, gamma=1.2)
            q0 = modularity(adj, np.arange(9), gamma=1.2)
            assert q >= q0 - 1e-12

    def test_deterministic(self):
        adj = planted_weighted_graph(np.random.default_rng(8))
        a = louvain(adj, CommunityConfig(seed=5))
        b = louvain(adj, CommunityConfig(seed=5))
        assert a.groups == b.groups

    def test_empty_graph_rejected(self):
        with pytest.raises(ValueError):
            louvain(np.zeros((3, 3), dtype=int), CommunityConfig())


class TestSpectral:
    def test_jacobi_matches_reference_eigensolver(self):
        rng = np.random.default_rng(6)
        for n in (3, 8, 20):
            m = rng.normal(size=(n, n))
            sym = (m + m.T) / 2
            vals, vecs = jacobi_eigh(sym)
            ref = np.linalg.eigvalsh(sym)
            assert np.allclose(vals, ref, atol=1e-9)
            assert np.allclose(sym @ vecs, vecs * vals, atol=1e-9)
            assert np.allclose(vecs.T @ vecs, np.eye(n), atol=1e-9)

    def test_planted_two_blocks_recovered(self):
        adj = two_block_graph(block=8, inside=10, cross=1)
        pset = spectral_cluster(adj, 2, seed=0)
        got = {tuple(g) for g in pset.groups}
        assert got == {tuple(range(8)), tuple(range(8, 16))}

    def test_disconnected_components_recovered(self):
        blocks = [np.ones((4, 4)), np.ones((3, 3)), np.ones((5, 5))]
        n = 12
        adj = np.zeros((n, n), dtype=int)
        starts = [0, 4, 7]
        for s, b in zip(starts, blocks):
            k = len(b)
            adj[s:s + k, s:s + k] = 1
        np.fill_diagonal(adj, 0)
        pset = spectral_cluster(adj, 3, seed=1)
        got = {tuple(g) for g in pset.groups}
        assert got == {(0, 1, 2, 3), (4, 5, 6), (7, 8, 9, 10, 11)}

    def test_deterministic(self):
        adj = two_block_graph(block=5, inside=6, cross=2)
        a = spectral_cluster(adj, 2, seed=4)
        b = spectral_cluster(adj, 2, seed=4)
        assert a.groups == b.groups

    def test_isolated_node_named_in_error(self):
        adj = np.zeros((4, 4), dtype=int)
        adj[0, 1] = adj[1, 0] = 3
        with pytest.raises(ValueError, match="[23]"):
            spectral_cluster(adj, 2, seed=0)

    def test_kmeans_groups_obvious_clusters(self):
        rng = np.random.default_rng(2)
        x = np.concatenate([rng.normal(0, 0.05, size=(20, 2)),
                            rng.normal(5, 0.05, size=(30, 2))])
        labels = kmeans(x, 2, seed=0)
        assert len(set(labels[:20])) == 1
        assert len(set(labels[20:])) == 1
        assert labels[0] != labels[-1]


class TestPartitionRealworld:
    def make_poses(self, n):
        return poses_at_azimuths(np.linspace(0, 359, n))

    def test_clean_clusters_accepted_from_louvain(self):
        rng = np.random.default_rng(3)
        n, k = 40, 4
        labels = np.repeat(np.arange(k), n // k)
        adj = np.zeros((n, n), dtype=int)
        for i in range(n):
            for j in range(i + 1, n):
                if labels[i] == labels[j]:
                    adj[i, j] = adj[j, i] = int(rng.integers(5, 15))
                elif rng.random() < 0.05:
                    adj[i, j] = adj[j, i] = 1
        pset = partition_realworld(adj, self.make_poses(n), k)
        assert pset.method == "louvain"
        assert pset.k == k
        got = {tuple(g) for g in pset.groups}
        want = {tuple(np.nonzero(labels == c)[0]) for c in range(k)}
        assert got == want

    def test_adversarial_adjacency_falls_back_to_percentile(self):
        # A heavy clique with a few weakly attached satellites has no
        # balanced 4-community structure at any resolution, and its
        # spectral embedding collapses the clique onto one centroid.
        n = 12
        adj = np.zeros((n, n), dtype=float)
        adj[:9, :9] = 10.0
        np.fill_diagonal(adj, 0.0)
        for sat in range(9, 12):
            adj[0, sat] = adj[sat, 0] = 1.0
        pset = partition_realworld(adj, self.make_poses(n), 4)
        assert pset.method == "percentile"
        assert pset.k == 4
        assert sorted(pset.sizes()) == [3, 3, 3, 3]

    def test_k_one_rejected(self):
        adj = two_block_graph(block=4)
        with pytest.raises(ValueError):
            partition_realworld(adj, self.make_poses(8), 1)


class TestPartitionSetPlumbing:
    def test_validation(self):
        with pytest.raises(ValueError):
            PartitionSet(groups=[[0, 1], []], n_views=2, method="x")
        with pytest.raises(ValueError):
            PartitionSet(groups=[[0], [1]], n_views=3, method="x")
        with pytest.raises(ValueError):
            PartitionSet(groups=[[0, 1], [1, 2]], n_views=3, method="x")
        pset = PartitionSet(groups=[[0, 1], [1, 2]], n_views=3, method="x",
                            overlap_deg=30.0)
        assert pset.group_of(1) == 0

    def test_labels_requires_disjoint(self):
        pset = PartitionSet(groups=[[0, 1], [1, 2]], n_views=3, method="x",
                            overlap_deg=30.0)
        with pytest.raises(ValueError):
            pset.labels()

    def test_manifest_roundtrip(self, tmp_path):
        poses = poses_at_azimuths(np.linspace(0, 350, 12))
        pset = azimuth_partition(poses, 3)
        path = tmp_path / "parts.json"
        save_partitions(path, pset)
        back = load_partitions(path)
        assert back.groups == pset.groups
        assert back.method == "azimuth"
        assert back.n_views == 12
        assert np.allclose(back.azimuths, pset.azimuths)

    def test_manifest_rejects_missing_fields(self, tmp_path):
        path = tmp_path / "parts.json"
        path.write_text('{"method": "x"}')
        with pytest.raises(ValueError):
            load_partitions(path)
