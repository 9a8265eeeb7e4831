"""HDBSCAN* density clustering for small point sets.

Mutual-reachability distances feed a single-linkage (minimum spanning tree)
hierarchy, which is condensed with ``min_cluster_size`` and cut by the
excess-of-mass stability criterion.  Written for banks of a few hundred
points, where the dense O(n^2) distance matrix is cheap.
"""

from __future__ import annotations

import numpy as np
from scipy.cluster.hierarchy import linkage
from scipy.spatial.distance import pdist, squareform
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.utils.validation import check_array

NOISE = -1


def _lambda(dist: float) -> float:
    return np.inf if dist <= 0.0 else 1.0 / dist


def _condense(Z: np.ndarray, n: int, min_cluster_size: int):
    """Condensed tree as arrays (parent, child, lambda, size).

    Points keep ids ``0..n-1``; clusters get ids from ``n`` upward with the
    root at ``n``.  Parents always have smaller ids than their child clusters.
    """
    left = Z[:, 0].astype(np.int64).tolist()
    right = Z[:, 1].astype(np.int64).tolist()
    dist = Z[:, 2].tolist()
    size = [1] * n + Z[:, 3].astype(np.int64).tolist()

    # every subtree's points are contiguous in dendrogram leaf order
    start = [0] * (2 * n - 1)
    for row in range(n - 2, -1, -1):
        s0 = start[row + n]
        start[left[row]] = s0
        start[right[row]] = s0 + size[left[row]]
    order = [0] * n
    for p in range(n):
        order[start[p]] = p

    parents, children, lambdas, sizes = [], [], [], []
    next_label = n + 1
    stack = [(2 * n - 2, n)]
    while stack:
        node, label = stack.pop()
        if node < n:
            continue
        row = node - n
        lam = _lambda(dist[row])
        a, b = left[row], right[row]
        big_a, big_b = size[a] >= min_cluster_size, size[b] >= min_cluster_size
        if big_a and big_b:
            for child in (a, b):
                parents.append(label)
                children.append(next_label)
                lambdas.append(lam)
                sizes.append(size[child])
                stack.append((child, next_label))
                next_label += 1
        else:
            for child, big in ((a, big_a), (b, big_b)):
                if big:
                    stack.append((child, label))
                else:
                    pts = order[start[child]:start[child] + size[child]]
                    children.extend(pts)
                    parents.extend([label] * len(pts))
                    lambdas.extend([lam] * len(pts))
                    sizes.extend([1] * len(pts))
    return (np.array(parents, dtype=np.int64), np.array(children, dtype=np.int64),
            np.array(lambdas, dtype=float), np.array(sizes, dtype=np.int64))


def _stability(parents, children, lambdas, sizes, n):
    n_clusters = int(max(parents.max(), children.max())) - n + 1 if len(parents) else 1
    birth = np.zeros(n_clusters)
    is_cluster = children >= n
    birth[children[is_cluster] - n] = lambdas[is_cluster]
    b = birth[parents - n]
    with np.errstate(invalid="ignore"):
        contrib = (lambdas - b) * sizes
    # inf - inf: a cluster born and dissolved at zero distance adds nothing
    contrib[np.isinf(lambdas) & np.isinf(b)] = 0.0
    stab = np.zeros(n_clusters)
    np.add.at(stab, parents - n, contrib)
    return stab, birth


def hdbscan_labels(X, min_cluster_size: int = 5, min_samples: int | None = None,
                   allow_single_cluster: bool = True, outlier_factor: float = 3.0) -> np.ndarray:
    """Cluster labels for the rows of ``X`` (``NOISE`` = -1).

    When the whole data set is selected as one cluster, points whose exit
    distance exceeds ``outlier_factor`` times the median exit distance are
    labelled noise.
    """
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    if n < 2:
        raise ValueError("bank too small")
    if min_cluster_size < 2:
        raise ValueError("min_cluster_size must be at least 2")
    k = min(min_samples or min_cluster_size, n)
    D = squareform(pdist(X))
    # k-th nearest neighbour, counting the point itself
    core = np.partition(D, k - 1, axis=1)[:, k - 1]
    mr = np.maximum(D, np.maximum(core[:, None], core[None, :]))
    Z = linkage(squareform(mr, checks=False), method="single")
    parents, children, lambdas, sizes = _condense(Z, n, min_cluster_size)
    stab, _ = _stability(parents, children, lambdas, sizes, n)
    n_clusters = len(stab)

    is_cluster = children >= n
    edge_parent = (parents[is_cluster] - n).tolist()
    edge_child = (children[is_cluster] - n).tolist()
    child_clusters = [[] for _ in range(n_clusters)]
    parent_of = [-1] * n_clusters
    for p, c in zip(edge_parent, edge_child):
        child_clusters[p].append(c)
        parent_of[c] = p
    stab_list = stab.tolist()

    selected = [False] * n_clusters
    subtree = list(stab_list)
    for c in range(n_clusters - 1, -1, -1):
        kids = child_clusters[c]
        child_sum = sum(subtree[k] for k in kids)
        if c == 0 and not allow_single_cluster:
            break
        if c == 0 and not kids:
            selected[0] = allow_single_cluster
            break
        if not kids or stab_list[c] >= child_sum:
            selected[c] = True
            subtree[c] = stab_list[c]
            todo = list(kids)
            while todo:
                k = todo.pop()
                selected[k] = False
                todo.extend(child_clusters[k])
        else:
            subtree[c] = child_sum

    cluster_label = {}
    for c in range(n_clusters):
        if selected[c]:
            cluster_label[c] = len(cluster_label)

    exit_lambda = np.empty(n)
    point_parent = np.empty(n, dtype=np.int64)
    is_point = children < n
    point_parent[children[is_point]] = parents[is_point] - n
    exit_lambda[children[is_point]] = lambdas[is_point]
    owner = np.full(n_clusters, NOISE, dtype=np.int64)
    for c in range(n_clusters):
        a = c
        while a >= 0 and not selected[a]:
            a = parent_of[a]
        if a >= 0:
            owner[c] = cluster_label[a]
    labels = owner[point_parent]

    if selected[0]:
        with np.errstate(divide="ignore"):
            exit_dist = np.where(np.isinf(exit_lambda), 0.0, 1.0 / exit_lambda)
        cutoff = outlier_factor * np.median(exit_dist)
        labels[exit_dist > cutoff] = NOISE
    return labels


class HDBSCAN(ClusterMixin, BaseEstimator):
    """Density-based hierarchical clustering with an sklearn-style interface.

    Parameters
    ----------
    min_cluster_size : int
        Smallest group that counts as a cluster; also the core-distance ``k``
        unless ``min_samples`` is given.
    min_samples : int, optional
    allow_single_cluster : bool
        Let the root of the hierarchy be selected, so a single dense blob (or
        a set of identical points) forms one cluster.
    outlier_factor : float
        Noise cut-off used only when the root is selected.

    Attributes
    ----------
    labels_ : ndarray of int, ``-1`` marks noise
    """

    def __init__(self, min_cluster_size=5, min_samples=None, allow_single_cluster=True,
                 outlier_factor=3.0):
        self.min_cluster_size = min_cluster_size
        self.min_samples = min_samples
        self.allow_single_cluster = allow_single_cluster
        self.outlier_factor = outlier_factor

    def fit(self, X, y=None):
        X = check_array(X, dtype=float, ensure_min_samples=2)
        self.labels_ = hdbscan_labels(X, self.min_cluster_size, self.min_samples,
                                      self.allow_single_cluster, self.outlier_factor)
        self.n_features_in_ = X.shape[1]
        return self
