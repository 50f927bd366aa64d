"""Seeded k-means over the combined feature matrix.

Lloyd iterations with k-means++ initialization. Distance evaluation is
chunked with a fixed chunk size and the per-chunk partial sums are reduced
in chunk order, so centroids are bitwise identical for any worker count.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist

from .feature_store import CombinedFeatures

log = logging.getLogger(__name__)

# Rows per assignment chunk. Fixed (never derived from the worker count) so
# the reduction order, and therefore every partial sum, is identical no
# matter how many threads run.
CHUNK_ROWS = 2048


@dataclass
class ClusterModel:
    """k centroids plus the per-row assignment they induce."""

    k: int
    centroids: np.ndarray
    assignments: np.ndarray
    sizes: np.ndarray = field(init=False)
    inertia: float = 0.0

    def __post_init__(self) -> None:
        self.centroids = np.asarray(self.centroids, dtype=np.float64)
        self.assignments = np.asarray(self.assignments, dtype=np.int64)
        if self.centroids.shape[0] != self.k:
            raise ValueError(f"{self.centroids.shape[0]} centroids for k={self.k}")
        if self.assignments.min(initial=0) < 0 or (
            self.assignments.size and self.assignments.max() >= self.k
        ):
            raise ValueError("assignment index out of range")
        self.sizes = np.bincount(self.assignments, minlength=self.k)
        if (self.sizes == 0).any():
            empty = int(np.flatnonzero(self.sizes == 0)[0])
            raise ValueError(f"cluster {empty} is empty")

    @property
    def n(self) -> int:
        return int(self.assignments.shape[0])

    def members(self, cluster: int) -> np.ndarray:
        """Row indices assigned to the given cluster, ascending."""
        return np.flatnonzero(self.assignments == cluster)

    def to_json(self, path: str | Path) -> None:
        payload = {
            "k": self.k,
            "inertia": self.inertia,
            "centroids": [[float(v) for v in row] for row in self.centroids],
            "assignments": [int(a) for a in self.assignments],
        }
        Path(path).write_text(json.dumps(payload, sort_keys=True), encoding="utf-8")

    @classmethod
    def from_json(cls, path: str | Path) -> "ClusterModel":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(
            k=payload["k"],
            centroids=np.array(payload["centroids"], dtype=np.float64),
            assignments=np.array(payload["assignments"], dtype=np.int64),
            inertia=payload["inertia"],
        )


def _as_matrix(X: CombinedFeatures | np.ndarray) -> np.ndarray:
    if isinstance(X, CombinedFeatures):
        X = X.vectors
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("expected a 2-D matrix")
    if not np.isfinite(X).all():
        raise ValueError("matrix contains non-finite values")
    return X


def _chunk_bounds(n: int) -> list[tuple[int, int]]:
    return [(lo, min(lo + CHUNK_ROWS, n)) for lo in range(0, n, CHUNK_ROWS)]


def _assign_chunk(
    X: np.ndarray, centroids: np.ndarray, lo: int, hi: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, float]:
    d2 = cdist(X[lo:hi], centroids, metric="sqeuclidean")
    labels = np.argmin(d2, axis=1)  # ties fall to the lower index
    best = d2[np.arange(hi - lo), labels]
    k, dim = centroids.shape
    sums = np.zeros((k, dim))
    np.add.at(sums, labels, X[lo:hi])
    counts = np.bincount(labels, minlength=k)
    return labels, best, sums, counts, float(best.sum())


def _assign(
    X: np.ndarray, centroids: np.ndarray, pool: ThreadPoolExecutor | None
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, float]:
    """Labels, per-point squared distances, per-cluster sums/counts, inertia.

    Partial results are merged in chunk order regardless of which worker
    produced them.
    """
    n = X.shape[0]
    bounds = _chunk_bounds(n)
    if pool is None:
        parts = [_assign_chunk(X, centroids, lo, hi) for lo, hi in bounds]
    else:
        futures = [pool.submit(_assign_chunk, X, centroids, lo, hi) for lo, hi in bounds]
        parts = [f.result() for f in futures]

    labels = np.empty(n, dtype=np.int64)
    dists = np.empty(n)
    k, dim = centroids.shape
    sums = np.zeros((k, dim))
    counts = np.zeros(k, dtype=np.int64)
    inertia = 0.0
    for (lo, hi), (lab, best, s, c, part_inertia) in zip(bounds, parts):
        labels[lo:hi] = lab
        dists[lo:hi] = best
        sums += s
        counts += c
        inertia += part_inertia
    return labels, dists, sums, counts, inertia


def _kmeanspp_init(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: D^2-weighted draws from the data rows."""
    n = X.shape[0]
    centroids = np.empty((k, X.shape[1]))
    first = int(rng.integers(n))
    centroids[0] = X[first]
    d2 = cdist(X, centroids[:1], metric="sqeuclidean")[:, 0]
    for c in range(1, k):
        total = d2.sum()
        if total > 0:
            probs = d2 / total
            pick = int(rng.choice(n, p=probs))
        else:
            pick = int(rng.integers(n))
        centroids[c] = X[pick]
        d2 = np.minimum(d2, cdist(X, centroids[c : c + 1], metric="sqeuclidean")[:, 0])
    return centroids


def _repair_empty(
    X: np.ndarray,
    centroids: np.ndarray,
    labels: np.ndarray,
    dists: np.ndarray,
    sums: np.ndarray,
    counts: np.ndarray,
) -> bool:
    """Move each empty cluster's centroid onto the farthest assigned point.

    The stolen point is force-assigned to the repaired cluster so no cluster
    leaves this function empty. Returns True when anything moved.
    """
    moved = False
    while True:
        empties = np.flatnonzero(counts == 0)
        if empties.size == 0:
            return moved
        c = int(empties[0])
        # eligible donors are points whose cluster keeps >= 1 member
        eligible = counts[labels] >= 2
        if not eligible.any():
            raise RuntimeError(f"cannot repair empty cluster {c}: no donor cluster has 2 members")
        masked = np.where(eligible, dists, -np.inf)
        i = int(np.argmax(masked))
        old = int(labels[i])
        sums[old] -= X[i]
        counts[old] -= 1
        labels[i] = c
        dists[i] = 0.0
        centroids[c] = X[i]
        sums[c] = X[i].copy()
        counts[c] = 1
        moved = True


def kmeans_fit(
    X: CombinedFeatures | np.ndarray,
    k: int,
    seed: int,
    max_iter: int = 300,
    tol: float = 1e-4,
    n_workers: int = 1,
    trace: list[float] | None = None,
) -> ClusterModel:
    """Cluster rows of X into k groups; deterministic for fixed inputs.

    Stops when the largest centroid displacement drops to ``tol`` or after
    ``max_iter`` rounds. Empty clusters are repaired by moving their
    centroid onto the point farthest from its own centroid, so the returned
    model never has one. Assignments are identical across worker counts.
    When ``trace`` is given, per-iteration inertia is appended to it.
    """
    X = _as_matrix(X)
    n = X.shape[0]
    if k <= 0:
        raise ValueError(f"k must be positive, got {k}")
    if k > n:
        raise ValueError(f"k={k} exceeds the {n} available rows")
    if max_iter <= 0:
        raise ValueError("max_iter must be positive")
    if tol < 0:
        raise ValueError("tol must be nonnegative")

    rng = np.random.default_rng(seed)
    centroids = _kmeanspp_init(X, k, rng)

    pool = ThreadPoolExecutor(max_workers=n_workers) if n_workers > 1 else None
    try:
        for _round in range(max_iter):
            labels, dists, sums, counts, _ = _assign(X, centroids, pool)
            repaired = _repair_empty(X, centroids, labels, dists, sums, counts)
            if trace is not None:
                trace.append(float(dists.sum()))
            new_centroids = sums / counts[:, None]
            shift = float(np.sqrt(((new_centroids - centroids) ** 2).sum(axis=1)).max())
            if shift <= tol and not repaired:
                # stable: keep the centroids the labels were computed
                # against so every point sits on its nearest one
                break
            centroids = new_centroids
        else:
            log.debug("kmeans reached max_iter=%d without converging", max_iter)
            labels, dists, sums, counts, _ = _assign(X, centroids, pool)
            _repair_empty(X, centroids, labels, dists, sums, counts)
            if trace is not None:
                trace.append(float(dists.sum()))
    finally:
        if pool is not None:
            pool.shutdown()

    return ClusterModel(
        k=k, centroids=centroids, assignments=labels, inertia=float(dists.sum())
    )
