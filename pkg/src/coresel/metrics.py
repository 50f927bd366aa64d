"""Per-cluster characteristics: density, relevance ratio, transferability.

All computations run in float64 and are pure functions of their inputs, so
clusters can be scored concurrently without affecting results.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist, pdist

from .clustering import ClusterModel
from .feature_store import SampleMeta

METRIC_NAMES = ("density", "irs", "transferability", "text_transferability")

BANDWIDTH_SUBSAMPLE = 2048


@dataclass
class ClusterScores:
    """One named metric evaluated for every cluster.

    ``params`` records whatever inputs shaped the values (bandwidth,
    similarity threshold, source feature space).
    """

    metric: str
    values: np.ndarray
    params: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.metric not in METRIC_NAMES:
            raise ValueError(f"unknown metric {self.metric!r} (expected one of {METRIC_NAMES})")
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1:
            raise ValueError("values must be one float per cluster")
        if self.metric == "density" and not (
            (self.values > 0).all() and (self.values <= 1).all()
        ):
            raise ValueError("density values must lie in (0, 1]")
        if self.metric == "irs" and (self.values < 0).any():
            raise ValueError("irs values must be nonnegative")
        if self.metric.endswith("transferability") and (
            (self.values < -1).any() or (self.values > 1).any()
        ):
            raise ValueError("transferability values must lie in [-1, 1]")

    @property
    def k(self) -> int:
        return int(self.values.shape[0])


def median_bandwidth(X: np.ndarray, seed: int) -> float:
    """Median pairwise distance over a seeded subsample of <= 2048 rows.

    Falls back to the smallest nonzero distance when the median is 0, and
    to 1.0 when every pair coincides, so the result is always positive.
    """
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    if n < 2:
        raise ValueError("median_bandwidth needs at least 2 rows")
    if n > BANDWIDTH_SUBSAMPLE:
        rng = np.random.default_rng(seed)
        idx = np.sort(rng.choice(n, size=BANDWIDTH_SUBSAMPLE, replace=False))
        X = X[idx]
    dists = pdist(X, metric="euclidean")
    sigma = float(np.median(dists))
    if sigma > 0:
        return sigma
    nonzero = dists[dists > 0]
    if nonzero.size:
        return float(nonzero.min())
    return 1.0


def cluster_density(members: np.ndarray, sigma: float) -> float:
    """Mean Gaussian-kernel value over ordered pairs of distinct members.

    Singletons score 1: a lone point has no internal spread.
    """
    members = np.asarray(members, dtype=np.float64)
    if members.ndim != 2 or members.shape[0] < 1:
        raise ValueError("cluster_density needs a nonempty 2-D member matrix")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    n = members.shape[0]
    if n == 1:
        return 1.0
    sq = pdist(members, metric="sqeuclidean")
    kernels = np.exp(-sq / (2.0 * sigma * sigma))
    # each unordered pair counts twice among ordered pairs
    return float(2.0 * kernels.sum() / (n * (n - 1)))


def sample_irs(meta: SampleMeta) -> float:
    """Loss ratio with/without the question; higher = question matters more."""
    return meta.loss_with_q / meta.loss_without_q


def cluster_irs(model: ClusterModel, metas: list[SampleMeta], ids: list[str]) -> ClusterScores:
    """Arithmetic mean of per-sample relevance ratios within each cluster.

    ``ids`` aligns rows of the cluster model with metadata entries.
    """
    if len(ids) != model.n:
        raise ValueError(f"{len(ids)} ids for {model.n} clustered rows")
    by_id = {m.id: m for m in metas}
    ratios = np.empty(model.n)
    for row, sid in enumerate(ids):
        meta = by_id.get(sid)
        if meta is None:
            raise ValueError(f"no loss metadata for clustered id {sid!r}")
        ratios[row] = sample_irs(meta)
    values = np.zeros(model.k)
    for c in range(model.k):
        values[c] = ratios[model.assignments == c].mean()
    return ClusterScores(metric="irs", values=values)


def cluster_transferability(
    centroids: np.ndarray,
    tau: float,
    invert: bool = False,
    metric_name: str = "transferability",
) -> ClusterScores:
    """Filtered mean cosine similarity of each centroid to the others.

    Keeps pairs with similarity <= tau (>= tau when ``invert``); clusters
    whose filter matches nothing score 0.
    """
    centroids = np.asarray(centroids, dtype=np.float64)
    if centroids.ndim != 2 or centroids.shape[0] < 1:
        raise ValueError("need a nonempty centroid matrix")
    if not -1.0 <= tau <= 1.0:
        raise ValueError(f"tau must lie in [-1, 1], got {tau}")
    norms = np.linalg.norm(centroids, axis=1)
    if (norms == 0).any():
        bad = int(np.flatnonzero(norms == 0)[0])
        raise ValueError(f"cluster {bad} has a zero-norm centroid")
    unit = centroids / norms[:, None]
    sims = np.clip(unit @ unit.T, -1.0, 1.0)
    mask = sims >= tau if invert else sims <= tau
    counts = mask.sum(axis=1)
    sums = np.where(mask, sims, 0.0).sum(axis=1)
    values = np.divide(sums, counts, out=np.zeros(len(sums)), where=counts > 0)
    return ClusterScores(
        metric=metric_name,
        values=np.clip(values, -1.0, 1.0),
        params={"tau": tau, "invert": invert},
    )


def space_centroids(vectors: np.ndarray, assignments: np.ndarray, k: int) -> np.ndarray:
    """Per-cluster mean rows of an alternate feature space, reusing the
    assignments from the clustering space."""
    vectors = np.asarray(vectors, dtype=np.float64)
    assignments = np.asarray(assignments)
    if vectors.shape[0] != assignments.shape[0]:
        raise ValueError("vectors and assignments disagree on row count")
    out = np.empty((k, vectors.shape[1]))
    for c in range(k):
        rows = vectors[assignments == c]
        if rows.shape[0] == 0:
            raise ValueError(f"cluster {c} has no members")
        out[c] = rows.mean(axis=0)
    return out


def densities(model: ClusterModel, X: np.ndarray, sigma: float) -> ClusterScores:
    """Density of every cluster of the model over rows of X."""
    X = np.asarray(X, dtype=np.float64)
    values = np.empty(model.k)
    for c in range(model.k):
        values[c] = cluster_density(X[model.assignments == c], sigma)
    return ClusterScores(metric="density", values=values, params={"sigma": sigma})


def nearest_distance(X: np.ndarray, anchors: np.ndarray) -> np.ndarray:
    """Distance from each row of X to its closest anchor row."""
    return cdist(np.asarray(X, dtype=np.float64), np.asarray(anchors, dtype=np.float64)).min(
        axis=1
    )
