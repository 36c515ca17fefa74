"""Shared test oracles: set-partition enumeration and graph fixtures."""

import numpy as np


def partitions_rgs(n):
    """All set partitions of range(n) as restricted-growth label strings."""
    a = [0] * n
    b = [0] * n
    while True:
        yield tuple(a)
        i = n - 1
        while i > 0 and a[i] == b[i] + 1:
            i -= 1
        if i == 0:
            return
        a[i] += 1
        for j in range(i + 1, n):
            a[j] = 0
        for j in range(1, n):
            b[j] = max(b[j - 1], a[j - 1])


def modularity_oracle(adj, labels, gamma=1.0):
    """Direct double-sum evaluation, independent of the package's version."""
    adj = np.asarray(adj, dtype=float)
    labels = np.asarray(labels)
    two_m = adj.sum()
    deg = adj.sum(axis=1)
    q = 0.0
    n = len(adj)
    for i in range(n):
        for j in range(n):
            if labels[i] == labels[j]:
                q += adj[i, j] - gamma * deg[i] * deg[j] / two_m
    return q / two_m


def brute_force_best_q(adj, gamma=1.0):
    """Exhaustive modularity maximum over every set partition."""
    adj = np.asarray(adj, dtype=float)
    two_m = adj.sum()
    deg = adj.sum(axis=1)
    best = -np.inf
    for labels in partitions_rgs(len(adj)):
        labels = np.asarray(labels)
        q = 0.0
        for c in np.unique(labels):
            members = labels == c
            q += adj[np.ix_(members, members)].sum() / two_m
            q -= gamma * (deg[members].sum() / two_m) ** 2
        best = max(best, q)
    return best


def planted_weighted_graph(rng, n=8):
    """Two random-size communities, heavy inside, sparse light bridges."""
    cut = int(rng.integers(3, n - 2))
    labels = np.array([0] * cut + [1] * (n - cut))
    w = np.zeros((n, n), dtype=int)
    for i in range(n):
        for j in range(i + 1, n):
            if labels[i] == labels[j]:
                w[i, j] = rng.integers(3, 8) * (rng.random() < 0.9)
            else:
                w[i, j] = rng.integers(1, 3) * (rng.random() < 0.3)
    adj = w + w.T
    if adj.sum() == 0:
        adj[0, 1] = adj[1, 0] = 1
    return adj


def two_block_graph(block=8, inside=10, cross=1):
    n = 2 * block
    adj = np.full((n, n), cross, dtype=int)
    adj[:block, :block] = inside
    adj[block:, block:] = inside
    np.fill_diagonal(adj, 0)
    return adj
