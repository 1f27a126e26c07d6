"""K-means over node embeddings and the cluster-to-class aligning step."""
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import ConfigurationError, DegenerateSplitError, DimensionError, M3SError

__all__ = [
    "ClusterModel",
    "AlignmentMap",
    "kmeans",
    "kmeans_plusplus",
    "class_centroids",
    "cluster_centroids",
    "align",
    "pseudo_labels",
    "naive_pseudo_labels",
    "deepcluster_pseudo_labels",
    "max_min_ratio",
    "KMeans",
]


@dataclass
class ClusterModel:
    centroids: np.ndarray
    assignments: np.ndarray
    k: int
    inertia: float
    n_iter: int = 0
    inertia_history: list = None


@dataclass
class AlignmentMap:
    cluster_to_class: dict
    class_centroids: np.ndarray
    cluster_centroids: np.ndarray


def _sq_dists(X, C):
    """Squared Euclidean distances between the rows of X and C."""
    d = (X * X).sum(axis=1)[:, None] - 2.0 * (X @ C.T) + (C * C).sum(axis=1)[None, :]
    np.maximum(d, 0.0, out=d)
    return d


def _inertia(X, C, labels):
    diff = X - C[labels]
    return float(np.einsum("ij,ij->", diff, diff) / X.shape[0])


def kmeans_plusplus(X, k, rng):
    """Seed ``k`` centroids by D^2 sampling."""
    n = X.shape[0]
    centers = np.empty((k, X.shape[1]))
    first = int(rng.integers(n))
    centers[0] = X[first]
    chosen = np.zeros(n, dtype=bool)
    chosen[first] = True
    closest = ((X - centers[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        total = closest.sum()
        if total > 0:
            idx = int(rng.choice(n, p=closest / total))
        else:
            # every point coincides with a centroid; take an unused one
            idx = int(rng.choice(np.flatnonzero(~chosen)))
        chosen[idx] = True
        centers[i] = X[idx]
        np.minimum(closest, ((X - centers[i]) ** 2).sum(axis=1), out=closest)
    return centers


def kmeans(points, k, seed=0, max_iter=300):
    """Lloyd's algorithm with k-means++ seeding.

    Stops once assignments no longer change or after ``max_iter`` rounds.
    A cluster left empty by an update is reseeded with the point lying
    farthest from its current centroid. The stored ``inertia`` is the mean
    squared distance of each point to its assigned centroid.
    """
    X = np.asarray(points, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ConfigurationError("k-means needs a non-empty 2-D point matrix")
    n = X.shape[0]
    if not 1 <= k <= n:
        raise ConfigurationError(f"k={k} must lie in [1, {n}]")
    rng = np.random.default_rng(seed)
    C = kmeans_plusplus(X, k, rng)
    labels = np.argmin(_sq_dists(X, C), axis=1)
    history = [_inertia(X, C, labels)]
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        counts = np.bincount(labels, minlength=k)
        sums = np.zeros_like(C)
        np.add.at(sums, labels, X)
        C = np.where(counts[:, None] > 0, sums / np.maximum(counts, 1)[:, None], C)
        for j in np.flatnonzero(counts == 0):
            far = int(np.argmax(((X - C[labels]) ** 2).sum(axis=1)))
            C[j] = X[far]
            labels[far] = j
        new_labels = np.argmin(_sq_dists(X, C), axis=1)
        history.append(_inertia(X, C, new_labels))
        # slack covers rounding in the expanded distance formula
        assert history[-1] <= history[-2] * (1 + 1e-9) + 1e-12, "k-means inertia increased"
        if np.array_equal(new_labels, labels):
            labels = new_labels
            break
        labels = new_labels
    return ClusterModel(
        centroids=C,
        assignments=labels,
        k=int(k),
        inertia=_inertia(X, C, labels),
        n_iter=n_iter,
        inertia_history=history,
    )


def class_centroids(embeddings, split, n_classes):
    """Mean embedding of the labeled nodes of each class (virtual labels included)."""
    E = np.asarray(embeddings, dtype=np.float64)
    idx = split.labeled
    y = split.assigned_labels[idx]
    counts = np.bincount(y, minlength=n_classes)
    if np.any(counts == 0):
        missing = np.flatnonzero(counts == 0).tolist()
        raise DegenerateSplitError(f"classes {missing} have no labeled node")
    sums = np.zeros((n_classes, E.shape[1]))
    np.add.at(sums, y, E[idx])
    return sums / counts[:, None]


def cluster_centroids(embeddings, cluster_model, unlabeled):
    """Per-cluster mean over unlabeled members only.

    Returns ``(v, present)``; rows of ``v`` for clusters without unlabeled
    members are NaN and flagged ``False`` in ``present``.
    """
    E = np.asarray(embeddings, dtype=np.float64)
    unlabeled = np.asarray(unlabeled, dtype=np.int64)
    k = cluster_model.k
    assign = cluster_model.assignments[unlabeled]
    counts = np.bincount(assign, minlength=k)
    sums = np.zeros((k, E.shape[1]))
    np.add.at(sums, assign, E[unlabeled])
    present = counts > 0
    v = np.full((k, E.shape[1]), np.nan)
    v[present] = sums[present] / counts[present, None]
    return v, present


def align(v, mu, present=None):
    """Map each present cluster to the class with the nearest centroid.

    Distances are squared Euclidean; on ties the lowest class index wins.
    """
    v = np.atleast_2d(np.asarray(v, dtype=np.float64))
    mu = np.atleast_2d(np.asarray(mu, dtype=np.float64))
    if v.shape[1] != mu.shape[1]:
        raise DimensionError(f"cluster centroids have dim {v.shape[1]}, class centroids {mu.shape[1]}")
    if present is None:
        present = ~np.isnan(v).any(axis=1)
    mapping = {}
    for l in np.flatnonzero(present):
        d = ((v[l] - mu) ** 2).sum(axis=1)
        mapping[int(l)] = int(np.argmin(d))
    return AlignmentMap(mapping, mu, v)


def pseudo_labels(cluster_model, alignment, unlabeled):
    """Give each unlabeled node the aligned class of its cluster."""
    out = {}
    table = alignment.cluster_to_class
    for node in np.asarray(unlabeled, dtype=np.int64):
        cluster = int(cluster_model.assignments[node])
        if cluster not in table:
            raise M3SError(f"cluster {cluster} holds unlabeled node {node} but has no alignment")
        out[int(node)] = table[cluster]
    return out


def naive_pseudo_labels(embeddings, mu, unlabeled):
    """Nearest class centroid for every unlabeled node, one node at a time."""
    E = np.asarray(embeddings, dtype=np.float64)
    return {
        int(i): int(np.argmin(((E[i] - mu) ** 2).sum(axis=1)))
        for i in np.asarray(unlabeled, dtype=np.int64)
    }


def deepcluster_pseudo_labels(embeddings, split, n_classes, k, seed=0, cluster_on="all", max_iter=300):
    """Cluster the embeddings, align clusters to classes, label unlabeled nodes.

    ``cluster_on="all"`` runs k-means over every node; ``"unlabeled"`` over
    the unlabeled nodes only. ``k`` is capped at the number of points.
    Returns ``(pseudo, cluster_model)``.
    """
    E = np.asarray(embeddings, dtype=np.float64)
    n = E.shape[0]
    U = split.unlabeled
    if cluster_on not in ("all", "unlabeled"):
        raise ConfigurationError("cluster_on must be 'all' or 'unlabeled'")
    if len(U) == 0:
        return {}, None
    if cluster_on == "all":
        cm = kmeans(E, min(k, n), seed=seed, max_iter=max_iter)
    elif cluster_on == "unlabeled":
        sub = kmeans(E[U], min(k, len(U)), seed=seed, max_iter=max_iter)
        assign = np.full(n, -1, dtype=np.int64)
        assign[U] = sub.assignments
        cm = ClusterModel(sub.centroids, assign, sub.k, sub.inertia, sub.n_iter, sub.inertia_history)
    mu = class_centroids(E, split, n_classes)
    v, present = cluster_centroids(E, cm, U)
    return pseudo_labels(cm, align(v, mu, present), U), cm


def max_min_ratio(pseudo, n_classes):
    """Largest minus smallest class share among pseudo-labeled nodes."""
    if not pseudo:
        raise ConfigurationError("max-min ratio of an empty labeling")
    counts = np.bincount(np.fromiter(pseudo.values(), dtype=np.int64), minlength=n_classes)
    return float((counts.max() - counts.min()) / len(pseudo))


class KMeans(ClusterMixin, BaseEstimator):
    """Estimator wrapper around :func:`kmeans`."""

    def __init__(self, n_clusters=8, max_iter=300, random_state=0):
        self.n_clusters = n_clusters
        self.max_iter = max_iter
        self.random_state = random_state

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        model = kmeans(X, self.n_clusters, seed=self.random_state, max_iter=self.max_iter)
        self.cluster_centers_ = model.centroids
        self.labels_ = model.assignments
        self.inertia_ = model.inertia
        self.n_iter_ = model.n_iter
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "cluster_centers_")
        X = check_array(X, dtype=np.float64)
        return np.argmin(_sq_dists(X, self.cluster_centers_), axis=1)
