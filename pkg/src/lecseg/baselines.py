"""Reference segmenters: equal splits, K-Means, time-infused K-Means (CTE-lite)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.utils.validation import check_array

from .datamodel.synth import philox_rng
from .datamodel.types import Segmentation
from .exceptions import ValidationError


@dataclass
class KMeansConfig:
    k: int
    n_restarts: int = 10
    max_iters: int = 100
    tol: float = 1e-6
    rng_seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise ValidationError("k must be >= 1")
        if self.n_restarts < 1:
            raise ValidationError("n_restarts must be >= 1")


@dataclass
class CteConfig:
    kmeans: KMeansConfig
    time_weight: float = 1.0

    def __post_init__(self):
        if self.time_weight < 0:
            raise ValidationError("time_weight must be >= 0")


def naive_equal_splits(n_clips, clip_times, K, total_duration_s=None) -> Segmentation:
    """Cut ``[0, T]`` into ``K`` equal intervals and label clips by midpoint.

    ``clip_times`` is a sequence of ``(start_s, end_s)``. ``T`` defaults to
    the last clip end.
    """
    if not 1 <= K <= n_clips:
        raise ValidationError(f"K must be in [1, {n_clips}], got {K}")
    times = np.asarray(clip_times, dtype=np.float64).reshape(n_clips, 2)
    T = float(total_duration_s) if total_duration_s is not None else float(times[-1, 1])
    mids = times.mean(axis=1)
    labels = np.minimum((mids * K / T).astype(np.int64), K - 1)
    if np.unique(labels).size < K:
        # some interval holds no clip midpoint: fall back to equal clip counts
        labels = np.repeat(np.arange(K), [len(c) for c in np.array_split(np.arange(n_clips), K)])
    return Segmentation(labels)


def _sq_dists(X, C):
    d = (X * X).sum(1)[:, None] - 2.0 * X @ C.T + (C * C).sum(1)[None, :]
    return np.maximum(d, 0.0)


def _kmeanspp(X, k, rng):
    n = X.shape[0]
    centers = [X[int(rng.integers(n))]]
    d2 = _sq_dists(X, centers[0][None])[:, 0]
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = int(rng.integers(n))
        else:
            idx = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        centers.append(X[idx])
        d2 = np.minimum(d2, _sq_dists(X, X[idx][None])[:, 0])
    return np.array(centers)


def _lloyd(X, centers, max_iters, tol):
    prev = np.inf
    for _ in range(max_iters):
        d = _sq_dists(X, centers)
        # argmin returns the first minimum, i.e. the lowest centroid index on ties
        labels = d.argmin(axis=1)
        inertia = d[np.arange(X.shape[0]), labels].sum()
        for j in range(centers.shape[0]):
            members = labels == j
            if members.any():
                centers[j] = X[members].mean(axis=0)
            else:
                # re-seed an empty cluster at the point farthest from its centroid
                far = int(np.argmax(d[np.arange(X.shape[0]), labels]))
                centers[j] = X[far]
        if np.isfinite(prev) and prev - inertia <= tol * prev:
            break
        prev = inertia
    d = _sq_dists(X, centers)
    labels = d.argmin(axis=1)
    return labels, float(d[np.arange(X.shape[0]), labels].sum()), centers


def kmeans(X, cfg: KMeansConfig):
    """Best-of-restarts K-Means with k-means++ seeding.

    Returns ``(labels, inertia, per_restart_inertias)``.
    """
    X = np.asarray(X, dtype=np.float64)
    if cfg.k > X.shape[0]:
        raise ValidationError(f"k={cfg.k} exceeds number of points {X.shape[0]}")
    best = None
    inertias = []
    for r in range(cfg.n_restarts):
        rng = philox_rng(cfg.rng_seed, r)
        labels, inertia, _ = _lloyd(X, _kmeanspp(X, cfg.k, rng), cfg.max_iters, cfg.tol)
        inertias.append(inertia)
        if best is None or inertia < best[1]:
            best = (labels, inertia)
    return best[0], best[1], inertias


def kmeans_segment(points, cfg: KMeansConfig) -> Segmentation:
    """K-Means labels over clips in temporal order; contiguity is not enforced."""
    labels, _, _ = kmeans(points, cfg)
    return Segmentation(labels)


def time_infused(points, taus, T, time_weight) -> np.ndarray:
    """Rows ``[phi / |phi|, w_t * tau / T]``."""
    phi = np.asarray(points, dtype=np.float64)
    norms = np.linalg.norm(phi, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ValidationError("zero-norm feature vector")
    tau = np.asarray(taus, dtype=np.float64)[:, None]
    return np.hstack([phi / norms, time_weight * tau / T])


def cte_segment(points, taus, T, cfg: CteConfig) -> Segmentation:
    return kmeans_segment(time_infused(points, taus, T, cfg.time_weight), cfg.kmeans)


class NaiveSegmenter(ClusterMixin, BaseEstimator):
    """Equal-duration split into ``n_segments`` parts.

    ``fit`` takes the clip ``(start_s, end_s)`` pairs as ``X``; features are not used.
    """

    def __init__(self, n_segments=2, total_duration=None):
        self.n_segments = n_segments
        self.total_duration = total_duration

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != 2:
            raise ValidationError("X must hold (start_s, end_s) rows")
        self.labels_ = naive_equal_splits(X.shape[0], X, self.n_segments, self.total_duration).labels
        return self


class KMeansSegmenter(ClusterMixin, BaseEstimator):
    def __init__(self, n_clusters=2, n_init=10, max_iter=100, tol=1e-6, random_state=0):
        self.n_clusters = n_clusters
        self.n_init = n_init
        self.max_iter = max_iter
        self.tol = tol
        self.random_state = random_state

    def _cfg(self):
        return KMeansConfig(self.n_clusters, self.n_init, self.max_iter, self.tol, int(self.random_state or 0))

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        labels, self.inertia_, _ = kmeans(X, self._cfg())
        self.labels_ = Segmentation(labels).labels
        return self


class CTESegmenter(KMeansSegmenter):
    """K-Means on normalized features with an appended relative-time column."""

    def __init__(self, n_clusters=2, time_weight=1.0, n_init=10, max_iter=100, tol=1e-6, random_state=0):
        super().__init__(n_clusters, n_init, max_iter, tol, random_state)
        self.time_weight = time_weight

    def fit(self, X, y=None, timestamps=None, total_duration=None):
        X = check_array(X, dtype=np.float64)
        n = X.shape[0]
        tau = np.arange(n) + 0.5 if timestamps is None else np.asarray(timestamps, dtype=np.float64)
        T = float(total_duration) if total_duration is not None else float(tau.max() + 0.5)
        return super().fit(time_infused(X, tau, T, self.time_weight))

    def fit_predict(self, X, y=None, timestamps=None, total_duration=None):
        return self.fit(X, timestamps=timestamps, total_duration=total_duration).labels_
