"""Within-cluster selection: greedy kernel-MMD, SVD leverage, PCA energy,
and a seeded uniform baseline.

Every sampler returns row indices into the cluster matrix, deterministic
for fixed inputs. Greedy MMD never materializes the full kernel matrix:
kernel column sums are accumulated in fixed-size row chunks and the
selected-set cross sums are updated incrementally, so each step is O(n*d).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

SAMPLER_KINDS = ("greedy_mmd", "svd", "pca", "random")

KERNEL_CHUNK_ROWS = 1024


@dataclass(frozen=True)
class RankPolicy:
    """How many singular directions a sampler keeps.

    ``fixed`` keeps exactly r (clamped to the matrix rank bound);
    ``energy`` keeps the smallest r whose squared singular values cover the
    requested fraction of the total.
    """

    kind: str
    value: float

    def __post_init__(self) -> None:
        if self.kind == "fixed":
            if int(self.value) < 1:
                raise ValueError("fixed rank must be >= 1")
        elif self.kind == "energy":
            if not 0.0 < self.value <= 1.0:
                raise ValueError("energy fraction must lie in (0, 1]")
        else:
            raise ValueError(f"unknown rank policy {self.kind!r}")

    @classmethod
    def fixed(cls, r: int) -> "RankPolicy":
        return cls(kind="fixed", value=int(r))

    @classmethod
    def energy(cls, theta: float = 0.95) -> "RankPolicy":
        return cls(kind="energy", value=float(theta))

    def effective_rank(self, singular_values: np.ndarray) -> int:
        limit = int(singular_values.shape[0])
        if limit == 0:
            return 0
        if self.kind == "fixed":
            return min(int(self.value), limit)
        energies = singular_values.astype(np.float64) ** 2
        total = float(energies.sum())
        if total <= 0:
            return limit
        cum = np.cumsum(energies)
        target = self.value * total * (1.0 - 1e-12)
        return min(int(np.searchsorted(cum, target)) + 1, limit)


DEFAULT_RANK_POLICY = RankPolicy.energy(0.95)


@dataclass(frozen=True)
class SamplerSpec:
    """Which sampler runs inside each cluster, plus its knobs.

    ``sigma`` and ``seed`` override the pipeline-provided defaults when
    set; ``feature_space`` names an alternate block to sample in (the
    clustering space when None).
    """

    kind: str
    sigma: float | None = None
    rank_policy: RankPolicy = field(default=DEFAULT_RANK_POLICY)
    seed: int | None = None
    feature_space: str | None = None

    def __post_init__(self) -> None:
        if self.kind not in SAMPLER_KINDS:
            raise ValueError(f"unknown sampler {self.kind!r} (expected one of {SAMPLER_KINDS})")
        if self.sigma is not None and not self.sigma > 0:
            raise ValueError("sigma must be positive")


def _as_cluster_matrix(X: np.ndarray, quota: int) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("cluster matrix must be 2-D")
    if quota < 0 or quota > X.shape[0]:
        raise ValueError(f"quota {quota} out of range for {X.shape[0]} members")
    return X


def _kernel_cross(A: np.ndarray, B: np.ndarray, sigma: float) -> np.ndarray:
    return np.exp(-cdist(A, B, metric="sqeuclidean") / (2.0 * sigma * sigma))


def _rank_descending(scores: np.ndarray, quota: int) -> list[int]:
    """Indices of the largest scores, ties toward the lower index.

    Scores are quantized at 1e-12 relative before ranking so rows that tie
    mathematically (duplicated rows, symmetric layouts) are not reordered
    by last-ulp noise from the decomposition.
    """
    scale = float(np.abs(scores).max())
    quantized = np.round(scores / scale, 12) if scale > 0 else scores
    order = np.argsort(-quantized, kind="stable")
    return [int(i) for i in order[:quota]]


def _kernel_col_sums(X: np.ndarray, sigma: float) -> np.ndarray:
    """Column sums of the full kernel matrix, accumulated in row-chunk order."""
    n = X.shape[0]
    sums = np.zeros(n)
    for lo in range(0, n, KERNEL_CHUNK_ROWS):
        hi = min(lo + KERNEL_CHUNK_ROWS, n)
        sums += _kernel_cross(X[lo:hi], X, sigma).sum(axis=0)
    return sums


def mmd_squared(A: np.ndarray, B: np.ndarray, sigma: float) -> float:
    """Biased squared MMD between two point sets under a Gaussian kernel."""
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.ndim != 2 or B.ndim != 2 or A.shape[0] == 0 or B.shape[0] == 0:
        raise ValueError("mmd_squared needs two nonempty 2-D matrices")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    a_aa = float(_kernel_cross(A, A, sigma).mean())
    a_bb = float(_kernel_cross(B, B, sigma).mean())
    a_ab = float(_kernel_cross(A, B, sigma).mean())
    return a_aa + a_bb - 2.0 * a_ab


def greedy_mmd_sample(
    X: np.ndarray,
    quota: int,
    sigma: float,
    return_trace: bool = False,
) -> list[int] | tuple[list[int], list[float]]:
    """Grow the subset one row at a time, each step minimizing the squared
    MMD between the full cluster and the subset.

    Ties fall to the lower row index. With ``return_trace`` the full MMD^2
    value (including the constant full-vs-full term) after each step is
    returned alongside the indices.
    """
    X = _as_cluster_matrix(X, quota)
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    n = X.shape[0]
    if quota == 0:
        return ([], []) if return_trace else []

    col_sums = _kernel_col_sums(X, sigma)
    a_full = float(col_sums.sum()) / (n * n) if return_trace else 0.0

    selected: list[int] = []
    taken = np.zeros(n, dtype=bool)
    cross_sel = np.zeros(n)  # sum of kernel values from each row to the subset
    pair_sum = 0.0  # kernel sum over subset x subset, diagonal included
    sel_col_total = 0.0  # sum of col_sums over the subset
    trace: list[float] = []

    for step in range(quota):
        m = step + 1
        # K(x, x) = 1 for the Gaussian kernel
        a_ss = (pair_sum + 2.0 * cross_sel + 1.0) / (m * m)
        a_cs = (sel_col_total + col_sums) / (n * m)
        objective = np.where(taken, np.inf, a_ss - 2.0 * a_cs)
        pick = int(np.argmin(objective))
        col = _kernel_cross(X, X[pick : pick + 1], sigma)[:, 0]
        pair_sum += 2.0 * float(cross_sel[pick]) + 1.0
        cross_sel += col
        sel_col_total += float(col_sums[pick])
        taken[pick] = True
        selected.append(pick)
        if return_trace:
            trace.append(a_full + pair_sum / (m * m) - 2.0 * sel_col_total / (n * m))

    return (selected, trace) if return_trace else selected


def svd_leverage_sample(
    X: np.ndarray, quota: int, rank_policy: RankPolicy = DEFAULT_RANK_POLICY
) -> list[int]:
    """Rows with the largest squared norms in the top left-singular basis.

    Works on the raw (uncentered) matrix. All-zero matrices fall back to
    the lowest indices.
    """
    X = _as_cluster_matrix(X, quota)
    if quota == 0:
        return []
    if not np.any(X):
        return list(range(quota))
    U, s, _ = np.linalg.svd(X, full_matrices=False)
    r = rank_policy.effective_rank(s)
    leverages = (U[:, :r] ** 2).sum(axis=1)
    return _rank_descending(leverages, quota)


def pca_energy_sample(
    X: np.ndarray, quota: int, rank_policy: RankPolicy = DEFAULT_RANK_POLICY
) -> list[int]:
    """Rows with the largest projection energy onto the top principal
    directions of the centered matrix."""
    X = _as_cluster_matrix(X, quota)
    if quota == 0:
        return []
    centered = X - X.mean(axis=0)
    if not np.any(centered):
        return list(range(quota))
    U, s, _ = np.linalg.svd(centered, full_matrices=False)
    r = rank_policy.effective_rank(s)
    projected = U[:, :r] * s[:r]
    energies = (projected**2).sum(axis=1)
    return _rank_descending(energies, quota)


def random_sample(n: int, quota: int, seed: int) -> list[int]:
    """Uniform draw without replacement from a seeded generator."""
    if quota < 0 or quota > n:
        raise ValueError(f"quota {quota} out of range for {n} members")
    rng = np.random.default_rng(seed)
    return [int(i) for i in rng.choice(n, size=quota, replace=False)]


def sample_cluster(
    spec: SamplerSpec,
    X: np.ndarray,
    quota: int,
    sigma: float | None = None,
    seed: int | None = None,
) -> list[int]:
    """Dispatch to the sampler named by the spec, filling in defaults."""
    if spec.kind == "greedy_mmd":
        bandwidth = spec.sigma if spec.sigma is not None else sigma
        if bandwidth is None:
            raise ValueError("greedy_mmd needs a kernel bandwidth")
        return greedy_mmd_sample(X, quota, bandwidth)
    if spec.kind == "svd":
        return svd_leverage_sample(X, quota, spec.rank_policy)
    if spec.kind == "pca":
        return pca_energy_sample(X, quota, spec.rank_policy)
    draw_seed = spec.seed if spec.seed is not None else seed
    if draw_seed is None:
        raise ValueError("random sampler needs a seed")
    return random_sample(np.asarray(X).shape[0], quota, draw_seed)
