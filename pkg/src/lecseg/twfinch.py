"""Temporally-weighted first-neighbour clustering (TW-FINCH).

The distance between clips ``m`` and ``n`` multiplies cosine dissimilarity
by the normalized temporal gap raised to ``alpha``::

    E(m, n) = (1 - cos(phi_m, phi_n)) * (|tau_m - tau_n| / T) ** alpha

Linking every clip to its nearest neighbour under ``E`` and taking connected
components gives the first partition. Clusters are then collapsed to their
member means and the procedure recurses, yielding a hierarchy of ever
coarser partitions. An exact number of segments is reached by greedy
pairwise merging, and ``alpha`` is raised step by step until the segments
are temporally contiguous.

The functional API expects points sorted by timestamp; :class:`TWFinch`
accepts any order.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .datamodel.types import Segmentation
from .exceptions import ValidationError

AUTO_K_CHOICES = ("second_last", "third_last")


@dataclass
class ClipPoint:
    phi: np.ndarray
    tau: float
    weight: int = 1

    def __post_init__(self):
        self.phi = np.asarray(self.phi, dtype=np.float64)
        if not np.all(np.isfinite(self.phi)) or not np.any(self.phi):
            raise ValidationError("phi must be finite with nonzero norm")
        if self.weight < 1:
            raise ValidationError("weight must be >= 1")


@dataclass
class TwfinchConfig:
    alpha_init: float = 1.0
    alpha_step: float = 0.1
    alpha_max: float = 5.0
    require_contiguous: bool = True
    shared_neighbor: bool = False

    def __post_init__(self):
        if not self.alpha_step > 0:
            raise ValidationError("alpha_step must be > 0")
        if self.alpha_max < self.alpha_init:
            raise ValidationError("alpha_max must be >= alpha_init")

    def alphas(self):
        """The escalation grid ``alpha_init, alpha_init + step, ... <= alpha_max``."""
        i = 0
        while True:
            a = self.alpha_init + i * self.alpha_step
            if a > self.alpha_max + 1e-9:
                return
            yield round(a, 12)
            i += 1


@dataclass
class PartitionHierarchy:
    """Partitions from finest (level 0) to coarsest.

    Merging continues until one cluster remains, so for more than one point
    the last level is the single-cluster partition.
    """

    levels: list = field(default_factory=list)

    @property
    def counts(self) -> list[int]:
        return [lvl.k for lvl in self.levels]

    def __len__(self):
        return len(self.levels)

    def select(self, which: str) -> tuple[Segmentation, bool]:
        """Return the requested level and whether a fallback was needed.

        A hierarchy too shallow for the request falls back to its finest
        level, the one closest to the requested position.
        """
        if which not in AUTO_K_CHOICES:
            raise ValidationError(f"which must be one of {AUTO_K_CHOICES}")
        depth = 2 if which == "second_last" else 3
        if len(self.levels) >= depth:
            return self.levels[-depth], False
        return self.levels[0], True


def _check_points(phi, tau, T):
    phi = np.asarray(phi, dtype=np.float64)
    tau = np.asarray(tau, dtype=np.float64)
    if phi.ndim != 2 or tau.ndim != 1 or phi.shape[0] != tau.size:
        raise ValidationError("phi must be (n, d) and tau (n,)")
    if phi.shape[0] == 0:
        raise ValidationError("need at least one point")
    if not T > 0:
        raise ValidationError("T must be > 0")
    if not np.all(np.isfinite(phi)):
        raise ValidationError("phi has non-finite entries")
    if np.any(np.diff(tau) < 0):
        raise ValidationError("points must be sorted by timestamp")
    norms = np.linalg.norm(phi, axis=1)
    if np.any(norms == 0):
        raise ValidationError("zero-norm feature vector")
    return phi, tau


def pair_distance(m: ClipPoint, n: ClipPoint, T: float, alpha: float) -> float:
    """Distance between two distinct points."""
    if not T > 0:
        raise ValidationError("T must be > 0")
    cos = float(m.phi @ n.phi) / (np.linalg.norm(m.phi) * np.linalg.norm(n.phi))
    e_s = max(0.0, 1.0 - cos)
    e_tau = abs(m.tau - n.tau) / T
    return e_s * e_tau**alpha


def distance_matrix(phi, tau, T, alpha) -> np.ndarray:
    """Full ``E`` matrix; the diagonal holds the convention value 1."""
    norms = np.linalg.norm(phi, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ValidationError("zero-norm feature vector")
    u = phi / norms
    e_s = np.maximum(1.0 - u @ u.T, 0.0)
    e_tau = np.abs(tau[:, None] - tau[None, :]) / T
    E = e_s * e_tau**alpha
    np.fill_diagonal(E, 1.0)
    return E


def first_neighbors(phi, tau, T, alpha) -> np.ndarray:
    """Index of each point's nearest neighbour.

    Ties go to the smaller temporal gap, then to the smaller index.
    """
    E = distance_matrix(phi, tau, T, alpha)
    np.fill_diagonal(E, np.inf)
    gap = np.abs(tau[:, None] - tau[None, :])
    cand = E == E.min(axis=1, keepdims=True)
    gap = np.where(cand, gap, np.inf)
    cand &= gap == gap.min(axis=1, keepdims=True)
    return cand.argmax(axis=1)


def _components(nn: np.ndarray, shared_neighbor: bool) -> np.ndarray:
    n = nn.size
    rows, cols = [np.arange(n)], [nn]
    if shared_neighbor:
        # i ~ j when both share a first neighbour; adds no new components
        # since both already link to it, kept for parity with plain FINCH
        order = np.argsort(nn, kind="stable")
        same = nn[order][1:] == nn[order][:-1]
        rows.append(order[1:][same])
        cols.append(order[:-1][same])
    r, c = np.concatenate(rows), np.concatenate(cols)
    graph = coo_matrix((np.ones(r.size), (r, c)), shape=(n, n))
    _, labels = connected_components(graph, directed=True, connection="weak")
    return labels


def one_nn_partition(phi, tau, T, alpha=1.0, shared_neighbor=False) -> Segmentation:
    phi, tau = _check_points(phi, tau, T)
    if tau.size == 1:
        return Segmentation(np.zeros(1, dtype=np.int64))
    nn = first_neighbors(phi, tau, T, alpha)
    return Segmentation(_components(nn, shared_neighbor))


def collapse(phi, tau, weights, labels):
    """Weighted mean representation, timestamp and total weight per cluster."""
    k = int(labels.max()) + 1
    w = np.bincount(labels, weights=weights, minlength=k)
    phi_c = np.zeros((k, phi.shape[1]))
    np.add.at(phi_c, labels, phi * weights[:, None])
    tau_c = np.bincount(labels, weights=tau * weights, minlength=k)
    return phi_c / w[:, None], tau_c / w, w


def build_hierarchy(phi, tau, T, alpha=1.0, shared_neighbor=False) -> PartitionHierarchy:
    """Recursive first-neighbour partitions, finest first."""
    phi, tau = _check_points(phi, tau, T)
    level = one_nn_partition(phi, tau, T, alpha, shared_neighbor)
    levels = [level]
    labels = level.labels
    weights = np.ones(tau.size)
    while levels[-1].k > 1:
        phi_c, tau_c, _ = collapse(phi, tau, weights, labels)
        nn = first_neighbors(phi_c, tau_c, T, alpha)
        merged = _components(nn, shared_neighbor)
        nxt = Segmentation(merged[labels])
        if nxt.k >= levels[-1].k:
            break
        levels.append(nxt)
        labels = nxt.labels
    return PartitionHierarchy(levels)


def _merge_to_k(phi, tau, T, alpha, labels, K) -> np.ndarray:
    """Greedily merge the closest pair of clusters until ``K`` remain."""
    labels = np.array(labels)
    weights = np.ones(tau.size)
    k = int(labels.max()) + 1
    while k > K:
        phi_c, tau_c, _ = collapse(phi, tau, weights, labels)
        E = distance_matrix(phi_c, tau_c, T, alpha)
        iu, ju = np.triu_indices(k, 1)
        e = E[iu, ju]
        gap = np.abs(tau_c[iu] - tau_c[ju])
        best = np.lexsort((ju, iu, gap, e))[0]
        a, b = iu[best], ju[best]
        labels[labels == b] = a
        labels = Segmentation(labels).labels.copy()
        k -= 1
    return labels


def _exact_k_once(phi, tau, T, K, alpha, shared_neighbor) -> tuple[Segmentation, PartitionHierarchy]:
    hier = build_hierarchy(phi, tau, T, alpha, shared_neighbor)
    start = np.arange(tau.size)
    for lvl in hier.levels:
        if lvl.k >= K:
            start = lvl.labels
    return Segmentation(_merge_to_k(phi, tau, T, alpha, start, K)), hier


def segment_exact_k(phi, tau, T, K, cfg: TwfinchConfig | None = None):
    """Segment into exactly ``K`` clusters.

    Returns ``(segmentation, alpha_used)``. When contiguity is required and
    no ``alpha`` on the escalation grid achieves it, the result at the
    largest grid value is returned with ``contiguous=False`` and a warning.
    """
    cfg = cfg or TwfinchConfig()
    phi, tau = _check_points(phi, tau, T)
    if not 1 <= K <= tau.size:
        raise ValidationError(f"K must be in [1, {tau.size}], got {K}")
    last = None
    for alpha in cfg.alphas():
        seg, _ = _exact_k_once(phi, tau, T, K, alpha, cfg.shared_neighbor)
        if not cfg.require_contiguous or seg.contiguous:
            return seg, alpha
        last = (seg, alpha)
    warnings.warn(
        f"no temporally contiguous {K}-segmentation up to alpha_max={cfg.alpha_max}",
        RuntimeWarning,
        stacklevel=2,
    )
    return last


def auto_k(phi, tau, T, cfg: TwfinchConfig | None = None, which="third_last"):
    """Pick a hierarchy level instead of a fixed ``K``.

    Returns ``(segmentation, alpha_used, fallback)`` where ``fallback`` is
    true when the hierarchy was too shallow for the requested level and its
    finest partition was used instead.
    """
    cfg = cfg or TwfinchConfig()
    phi, tau = _check_points(phi, tau, T)
    last = None
    for alpha in cfg.alphas():
        hier = build_hierarchy(phi, tau, T, alpha, cfg.shared_neighbor)
        seg, fallback = hier.select(which)
        if not cfg.require_contiguous or seg.contiguous:
            return seg, alpha, fallback
        last = (seg, alpha, fallback)
    warnings.warn(
        f"no temporally contiguous {which} partition up to alpha_max={cfg.alpha_max}",
        RuntimeWarning,
        stacklevel=2,
    )
    return last


class TWFinch(ClusterMixin, BaseEstimator):
    """Temporal segmentation estimator.

    Parameters
    ----------
    n_clusters : int or None
        Exact number of segments. ``None`` selects a hierarchy level
        according to ``auto_k``.
    auto_k : {"second_last", "third_last"}
        Hierarchy level used when ``n_clusters`` is None.
    alpha_init, alpha_step, alpha_max : float
        Temporal exponent and its escalation grid.
    require_contiguous : bool
        Escalate ``alpha`` until every segment is one unbroken run.
    shared_neighbor : bool
        Also link points sharing a first neighbour.

    Attributes
    ----------
    labels_ : ndarray of shape (n_samples,)
        Segment ids, numbered in temporal order of first appearance.
    alpha_used_ : float
    contiguous_ : bool
    hierarchy_ : PartitionHierarchy
        Hierarchy at ``alpha_used_``, over points in temporal order.
    auto_k_fallback_ : bool
    """

    def __init__(
        self,
        n_clusters=None,
        auto_k="third_last",
        alpha_init=1.0,
        alpha_step=0.1,
        alpha_max=5.0,
        require_contiguous=True,
        shared_neighbor=False,
    ):
        self.n_clusters = n_clusters
        self.auto_k = auto_k
        self.alpha_init = alpha_init
        self.alpha_step = alpha_step
        self.alpha_max = alpha_max
        self.require_contiguous = require_contiguous
        self.shared_neighbor = shared_neighbor

    def _config(self):
        return TwfinchConfig(
            self.alpha_init, self.alpha_step, self.alpha_max, self.require_contiguous, self.shared_neighbor
        )

    def fit(self, X, y=None, timestamps=None, total_duration=None):
        """Cluster rows of ``X`` observed at ``timestamps`` (default: row index + 0.5)."""
        X = check_array(X, dtype=np.float64)
        n = X.shape[0]
        if timestamps is None:
            tau = np.arange(n) + 0.5
        else:
            tau = np.asarray(timestamps, dtype=np.float64)
            if tau.shape != (n,):
                raise ValidationError("timestamps must have one entry per row")
        T = float(total_duration) if total_duration is not None else float(max(tau.max(), 0) + 0.5)
        if T <= 0 or tau.min() < 0 or tau.max() > T:
            raise ValidationError("timestamps must lie in [0, total_duration]")

        order = np.lexsort((np.arange(n), tau))
        phi, ts = X[order], tau[order]
        cfg = self._config()
        if self.n_clusters is None:
            seg, alpha, fallback = auto_k(phi, ts, T, cfg, self.auto_k)
        else:
            seg, alpha = segment_exact_k(phi, ts, T, int(self.n_clusters), cfg)
            fallback = False

        labels = np.empty(n, dtype=np.int64)
        labels[order] = seg.labels
        self.labels_ = labels
        self.n_clusters_ = seg.k
        self.alpha_used_ = alpha
        self.contiguous_ = seg.contiguous
        self.auto_k_fallback_ = fallback
        self.hierarchy_ = build_hierarchy(phi, ts, T, alpha, self.shared_neighbor)
        return self

    def fit_predict(self, X, y=None, timestamps=None, total_duration=None):
        return self.fit(X, timestamps=timestamps, total_duration=total_duration).labels_

    def segmentation(self) -> Segmentation:
        check_is_fitted(self, "labels_")
        return Segmentation(self.labels_)
