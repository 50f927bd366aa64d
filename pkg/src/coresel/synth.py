"""Synthetic mixtures and brute-force oracles.

Everything here exists to make the numeric modules checkable at desk
scale: the oracles deliberately use independent algorithms (explicit pair
loops, Gram eigendecompositions, exhaustive subset enumeration) so that
agreement with the fast paths is meaningful.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .feature_store import FeatureSpace, SampleMeta
from .metrics import nearest_distance
from .samplers import mmd_squared

ENUMERATION_CAP = 10**6


@dataclass(frozen=True)
class MixtureComponent:
    center: tuple
    spread: float
    count: int
    irs_mean: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "center", tuple(float(v) for v in self.center))
        if not self.spread > 0:
            raise ValueError("spread must be positive")
        if self.count < 1:
            raise ValueError("count must be >= 1")
        if not self.irs_mean > 0:
            raise ValueError("irs_mean must be positive")


@dataclass(frozen=True)
class MixtureSpec:
    components: tuple
    outlier_fraction: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "components", tuple(self.components))
        if not self.components:
            raise ValueError("need at least one component")
        dims = {len(c.center) for c in self.components}
        if len(dims) != 1:
            raise ValueError("component centers disagree on dimension")
        if not 0.0 <= self.outlier_fraction < 0.5:
            raise ValueError("outlier_fraction must lie in [0, 0.5)")

    @property
    def dim(self) -> int:
        return len(self.components[0].center)


def generate_mixture(
    spec: MixtureSpec, name: str = "mixture"
) -> tuple[FeatureSpace, np.ndarray, list[SampleMeta]]:
    """Seeded Gaussian blobs plus box-uniform outliers (label -1).

    Synthetic losses are drawn so each component's mean loss ratio tracks
    its configured irs_mean.
    """
    rng = np.random.default_rng(spec.seed)
    blocks = []
    labels = []
    irs_means = []
    for label, comp in enumerate(spec.components):
        pts = np.asarray(comp.center) + comp.spread * rng.standard_normal(
            (comp.count, spec.dim)
        )
        blocks.append(pts)
        labels.extend([label] * comp.count)
        irs_means.extend([comp.irs_mean] * comp.count)
    base = np.concatenate(blocks, axis=0)

    n_out = int(round(spec.outlier_fraction * base.shape[0]))
    if n_out:
        lo, hi = base.min(axis=0), base.max(axis=0)
        outliers = rng.uniform(lo, hi, size=(n_out, spec.dim))
        base = np.concatenate([base, outliers], axis=0)
        labels.extend([-1] * n_out)
        irs_means.extend([1.0] * n_out)

    n = base.shape[0]
    ids = [f"s{i:06d}" for i in range(n)]
    loss_without = rng.uniform(1.0, 2.0, size=n)
    ratios = np.asarray(irs_means) * np.exp(0.05 * rng.standard_normal(n))
    metas = [
        SampleMeta(id=ids[i], loss_with_q=float(ratios[i] * loss_without[i]),
                   loss_without_q=float(loss_without[i]))
        for i in range(n)
    ]
    space = FeatureSpace(name=name, vectors=base.astype(np.float32), ids=ids)
    return space, np.asarray(labels, dtype=np.int64), metas


def derive_view(
    space: FeatureSpace, out_dim: int, seed: int, name: str, noise: float = 0.0
) -> FeatureSpace:
    """Project a space through a seeded orthonormal map, keeping row order.

    Gives a second feature space that shares the first one's cluster
    structure without being a copy of it.
    """
    if out_dim < 1 or out_dim > space.dim:
        raise ValueError(f"out_dim must lie in [1, {space.dim}]")
    rng = np.random.default_rng(seed)
    basis, _ = np.linalg.qr(rng.standard_normal((space.dim, out_dim)))
    projected = space.vectors.astype(np.float64) @ basis
    if noise > 0:
        projected = projected + noise * rng.standard_normal(projected.shape)
    return FeatureSpace(name=name, vectors=projected.astype(np.float32), ids=list(space.ids))


def kernel_value(a, b, sigma: float) -> float:
    """Gaussian kernel between two vectors, plain Python arithmetic."""
    sq = 0.0
    for x, y in zip(a, b):
        sq += (float(x) - float(y)) ** 2
    return math.exp(-sq / (2.0 * sigma * sigma))


def density_oracle(members: np.ndarray, sigma: float) -> float:
    """Mean kernel over ordered distinct pairs via explicit double loop."""
    n = len(members)
    if n == 1:
        return 1.0
    total = 0.0
    for i in range(n):
        for j in range(n):
            if i != j:
                total += kernel_value(members[i], members[j], sigma)
    return total / (n * (n - 1))


def mean_kernel_loops(A: np.ndarray, B: np.ndarray, sigma: float) -> float:
    total = 0.0
    for a in A:
        for b in B:
            total += kernel_value(a, b, sigma)
    return total / (len(A) * len(B))


def mmd_squared_loops(A: np.ndarray, B: np.ndarray, sigma: float) -> float:
    """Squared MMD via explicit pair loops; checks the vectorized path."""
    return (
        mean_kernel_loops(A, A, sigma)
        + mean_kernel_loops(B, B, sigma)
        - 2.0 * mean_kernel_loops(A, B, sigma)
    )


def greedy_mmd_naive(
    X: np.ndarray, quota: int, sigma: float
) -> tuple[list[int], list[float]]:
    """Greedy selection recomputing every candidate's MMD from scratch.

    Slow reference for the incremental sampler; returns picks and the MMD
    value after each step.
    """
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    if quota < 0 or quota > n:
        raise ValueError(f"quota {quota} out of range for {n} members")
    picks: list[int] = []
    values: list[float] = []
    for _ in range(quota):
        best_idx, best_val = -1, math.inf
        for cand in range(n):
            if cand in picks:
                continue
            subset = X[picks + [cand]]
            val = mmd_squared_loops(X, subset, sigma)
            if val < best_val:
                best_idx, best_val = cand, val
        picks.append(best_idx)
        values.append(best_val)
    return picks, values


def brute_force_mmd_best(
    X: np.ndarray, quota: int, sigma: float
) -> tuple[tuple[int, ...], float]:
    """Exact minimizer over all size-quota subsets by full enumeration."""
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    if quota < 1 or quota > n:
        raise ValueError(f"quota {quota} out of range for {n} members")
    if math.comb(n, quota) > ENUMERATION_CAP:
        raise ValueError(
            f"C({n}, {quota}) = {math.comb(n, quota)} exceeds the enumeration cap {ENUMERATION_CAP}"
        )
    K = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            K[i, j] = kernel_value(X[i], X[j], sigma)
    a_cc = float(K.mean())
    best_subset: tuple[int, ...] = ()
    best_val = math.inf
    for subset in combinations(range(n), quota):
        rows = list(subset)
        a_ss = float(K[np.ix_(rows, rows)].mean())
        a_cs = float(K[:, rows].mean())
        val = a_cc + a_ss - 2.0 * a_cs
        if val < best_val:
            best_subset, best_val = subset, val
    return best_subset, best_val


def leverage_oracle(X: np.ndarray, r: int) -> np.ndarray:
    """Leverage scores from the Gram matrix eigendecomposition.

    Independent of the SVD route: eigenvectors of X X^T are the left
    singular vectors, so top-r row norms must agree.
    """
    X = np.asarray(X, dtype=np.float64)
    n, d = X.shape
    if r < 1 or r > min(n, d):
        raise ValueError(f"r must lie in [1, {min(n, d)}]")
    gram = X @ X.T
    eigvals, eigvecs = np.linalg.eigh(gram)
    top = eigvecs[:, ::-1][:, :r]
    return (top**2).sum(axis=1)


def coverage_metrics(selected: list[int], X: np.ndarray, sigma: float) -> dict:
    """How well the selected rows stand in for the full matrix."""
    X = np.asarray(X, dtype=np.float64)
    if len(selected) == 0:
        raise ValueError("selected must be nonempty")
    chosen = X[np.asarray(selected, dtype=np.int64)]
    return {
        "mmd2": mmd_squared(X, chosen, sigma),
        "mean_nn_dist": float(nearest_distance(X, chosen).mean()),
    }


# fixed five-component geometry shared by the benchmark and the end-to-end
# tests; only the draw seed varies between runs
_BENCH_FRACTIONS = (0.28, 0.24, 0.20, 0.16, 0.12)
_BENCH_SPREADS = (1.1, 0.9, 1.0, 0.8, 1.2)
_BENCH_IRS_MEANS = (0.7, 1.2, 1.0, 0.9, 1.4)
_BENCH_DIM = 12
_BENCH_CENTER_NORM = 10.0
_BENCH_VIEW_DIM = 8


def _bench_centers() -> np.ndarray:
    rng = np.random.default_rng(7)
    raw = rng.standard_normal((len(_BENCH_FRACTIONS), _BENCH_DIM))
    return _BENCH_CENTER_NORM * raw / np.linalg.norm(raw, axis=1, keepdims=True)


def mixture_views(
    seed: int, total: int = 5000
) -> tuple[FeatureSpace, FeatureSpace, np.ndarray, list[SampleMeta]]:
    """Five-blob benchmark inputs: a base space plus a derived second view.

    The geometry is fixed; ``seed`` drives only the random draws, so
    repeated calls with one seed are identical.
    """
    centers = _bench_centers()
    counts = [int(round(f * total)) for f in _BENCH_FRACTIONS]
    counts[0] += total - sum(counts)
    spec = MixtureSpec(
        components=tuple(
            MixtureComponent(
                center=tuple(centers[i]),
                spread=_BENCH_SPREADS[i],
                count=counts[i],
                irs_mean=_BENCH_IRS_MEANS[i],
            )
            for i in range(len(counts))
        ),
        seed=seed,
    )
    base, labels, metas = generate_mixture(spec, name="lmm")
    view = derive_view(base, _BENCH_VIEW_DIM, seed=seed + 104729, name="vte", noise=0.05)
    return base, view, labels, metas


def benchmark_config(spaces_dir, out_dir, seed: int, sampler: str = "svd", k: int = 64):
    """Default selection config over files written by write_mixture_files."""
    from .pipeline import PipelineConfig

    spaces_dir = str(spaces_dir)
    return PipelineConfig(
        spaces=[
            {"name": "lmm", "path": f"{spaces_dir}/lmm.feat"},
            {"name": "vte", "path": f"{spaces_dir}/vte.feat"},
        ],
        meta_path=f"{spaces_dir}/meta.csv",
        out_dir=str(out_dir),
        normalization="per_block_l2",
        k=k,
        seed=seed,
        budget_ratio=0.1,
        quota_strategy="8",
        tau=0.5,
        sampler={"kind": sampler},
        text_space="vte",
    )


def write_mixture_files(directory, seed: int, total: int = 5000) -> None:
    """Materialize mixture_views plus loss metadata for CLI-style runs."""
    import os

    from .feature_store import write_feature_space, write_sample_meta

    base, view, _, metas = mixture_views(seed, total=total)
    directory = str(directory)
    os.makedirs(directory, exist_ok=True)
    write_feature_space(base, f"{directory}/lmm.feat")
    write_feature_space(view, f"{directory}/vte.feat")
    write_sample_meta(metas, f"{directory}/meta.csv")


def _check_density(rng: np.random.Generator) -> tuple[bool, str]:
    from .metrics import cluster_density

    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(2, 51))
        d = int(rng.integers(1, 17))
        members = rng.standard_normal((n, d)) * rng.uniform(0.5, 3.0)
        sigma = float(rng.uniform(0.5, 2.5))
        worst = max(worst, abs(cluster_density(members, sigma) - density_oracle(members, sigma)))
    two = np.array([[0.0], [math.sqrt(2.0)]])
    closed = abs(cluster_density(two, 1.0) - math.exp(-1.0))
    ok = worst <= 1e-10 and closed <= 1e-12
    return ok, f"max oracle gap {worst:.2e}, two-point gap {closed:.2e}"


def _check_irs(rng: np.random.Generator) -> tuple[bool, str]:
    from .metrics import sample_irs

    for i in range(1000):
        with_q = float(rng.uniform(0.0, 5.0))
        without_q = float(rng.uniform(0.1, 5.0))
        meta = SampleMeta(id=f"f{i}", loss_with_q=with_q, loss_without_q=without_q)
        if sample_irs(meta) != with_q / without_q:
            return False, f"ratio mismatch at pair {i}"
    return True, "1000 fuzzed ratios exact"


def _check_transferability(rng: np.random.Generator) -> tuple[bool, str]:
    from .metrics import cluster_transferability

    root = 1.0 / math.sqrt(2.0)
    cents = np.array([[1.0, 0.0], [0.0, 1.0], [root, root]])
    t = cluster_transferability(cents, tau=0.8).values
    expected = (0.0 + root) / 2.0
    gap = abs(t[0] - expected)
    empty = cluster_transferability(np.array([[1.0, 0.0], [0.9, 0.1]]), tau=-0.5).values
    worst = 0.0
    for _ in range(100):
        k = int(rng.integers(2, 9))
        d = int(rng.integers(2, 7))
        c = rng.standard_normal((k, d))
        scales = rng.uniform(0.1, 10.0, size=(k, 1))
        tau = float(rng.uniform(-0.9, 0.9))
        a = cluster_transferability(c, tau).values
        b = cluster_transferability(c * scales, tau).values
        worst = max(worst, float(np.abs(a - b).max()))
    ok = gap <= 1e-9 and np.all(empty == 0.0) and worst <= 1e-9
    return ok, f"closed-form gap {gap:.2e}, rescale gap {worst:.2e}"


def _check_quota(rng: np.random.Generator, rounds: int) -> tuple[bool, str]:
    from .quota import allocate_quotas

    for i in range(rounds):
        k = int(rng.integers(1, 201))
        sizes = rng.integers(1, 500, size=k)
        scores = rng.uniform(0.1, 1.1, size=k)
        budget = int(rng.integers(1, int(sizes.sum()) + 1))
        plan = allocate_quotas(scores, sizes, budget)
        if int(plan.quotas.sum()) != budget or (plan.quotas > sizes).any():
            return False, f"violated on instance {i}"
    worked = [int(q) for q in allocate_quotas(np.array([1.0, 0.2]), np.array([100, 100]), 10).quotas]
    capped = [int(q) for q in allocate_quotas(np.array([8.0, 0.06]), np.array([3, 100]), 10).quotas]
    ok = worked == [8, 2] and capped == [3, 7]
    return ok, f"{rounds} fuzz instances, traces {worked} and {capped}"


def greedy_bound_instance(rng: np.random.Generator) -> tuple[np.ndarray, float]:
    """One instance of the recorded greedy-vs-optimum bound family.

    The bandwidth sits at a quarter of the median pairwise distance so a
    3-row subset always carries an irreducible MMD floor; without the
    floor the optimum approaches zero and any multiplicative bound is
    meaningless.
    """
    from .metrics import median_bandwidth

    X = rng.standard_normal((12, 3)) * rng.uniform(0.5, 2.0)
    return X, 0.25 * median_bandwidth(X, 0)


def _check_greedy(rng: np.random.Generator) -> tuple[bool, str]:
    from .samplers import greedy_mmd_sample

    step_fail = 0
    within = 0
    worst_val_gap = 0.0
    for _ in range(50):
        X, sigma = greedy_bound_instance(rng)
        picks, trace = greedy_mmd_sample(X, 3, sigma, return_trace=True)
        naive_picks, naive_vals = greedy_mmd_naive(X, 3, sigma)
        if picks != naive_picks:
            step_fail += 1
        worst_val_gap = max(
            worst_val_gap, max(abs(a - b) for a, b in zip(trace, naive_vals))
        )
        _, best = brute_force_mmd_best(X, 3, sigma)
        if trace[-1] <= 1.2 * best + 1e-15:
            within += 1
    ok = step_fail == 0 and within >= 45 and worst_val_gap <= 1e-9
    return ok, (
        f"step mismatches {step_fail}, within 1.2x on {within}/50, value gap {worst_val_gap:.2e}"
    )


def _check_svd(rng: np.random.Generator) -> tuple[bool, str]:
    from .samplers import RankPolicy, svd_leverage_sample

    worst_sum = 0.0
    worst_oracle = 0.0
    for _ in range(100):
        n = int(rng.integers(3, 25))
        d = int(rng.integers(2, 9))
        X = rng.standard_normal((n, d))
        r = int(rng.integers(1, min(n, d) + 1))
        U, s, _ = np.linalg.svd(X, full_matrices=False)
        lev = (U[:, :r] ** 2).sum(axis=1)
        worst_sum = max(worst_sum, abs(float(lev.sum()) - r))
        worst_oracle = max(worst_oracle, float(np.abs(lev - leverage_oracle(X, r)).max()))
    picks = svd_leverage_sample(
        np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]]), 2, RankPolicy.fixed(2)
    )
    ok = worst_sum <= 1e-9 and worst_oracle <= 1e-8 and picks == [2, 0]
    return ok, f"sum gap {worst_sum:.2e}, oracle gap {worst_oracle:.2e}, worked case {picks}"


def _check_pca(rng: np.random.Generator) -> tuple[bool, str]:
    from .samplers import RankPolicy, pca_energy_sample

    for i in range(100):
        n = int(rng.integers(4, 30))
        d = int(rng.integers(2, 7))
        X = rng.standard_normal((n, d))
        quota = int(rng.integers(1, n + 1))
        shift = rng.uniform(-50.0, 50.0, size=d)
        if pca_energy_sample(X, quota) != pca_energy_sample(X + shift, quota):
            return False, f"translation changed selection on cluster {i}"
    one_d = np.array([[-2.0], [-1.0], [0.0], [1.0], [3.0]])
    picks = pca_energy_sample(one_d, 2, RankPolicy.fixed(1))
    return picks == [4, 0], f"100 translations held, 1-D case {picks}"


def _check_kmeans(rng: np.random.Generator) -> tuple[bool, str]:
    from .clustering import kmeans_fit

    spec = MixtureSpec(
        components=(
            MixtureComponent(center=(0.0, 0.0), spread=0.5, count=60),
            MixtureComponent(center=(20.0, 0.0), spread=0.5, count=40),
        ),
        seed=5,
    )
    space, labels, _ = generate_mixture(spec)
    trace: list[float] = []
    model = kmeans_fit(space.vectors, 2, seed=3, trace=trace)
    monotone = all(b <= a + 1e-9 for a, b in zip(trace, trace[1:]))
    sets_model = {frozenset(np.flatnonzero(model.assignments == c)) for c in range(2)}
    sets_truth = {frozenset(np.flatnonzero(labels == c)) for c in (0, 1)}
    again = kmeans_fit(space.vectors, 2, seed=3)
    bitwise = np.array_equal(model.assignments, again.assignments) and np.array_equal(
        model.centroids, again.centroids
    )
    X = rng.standard_normal((500, 6))
    workers = [kmeans_fit(X, 8, seed=11, n_workers=w).assignments for w in (1, 2, 4)]
    across = all(np.array_equal(workers[0], w) for w in workers[1:])
    ok = monotone and sets_model == sets_truth and bitwise and across
    return ok, (
        f"monotone={monotone}, blobs recovered={sets_model == sets_truth}, "
        f"bitwise={bitwise}, workers equal={across}"
    )


def _check_end_to_end(fast: bool) -> tuple[bool, str]:
    import tempfile
    from .feature_store import combine_features
    from .metrics import median_bandwidth
    from .pipeline import run_selection, stage_seed

    total = 1500 if fast else 5000
    k = 24 if fast else 64
    seeds = range(5) if fast else range(10)
    need = 4 if fast else 8
    wins = 0
    for seed in seeds:
        with tempfile.TemporaryDirectory() as tmp:
            write_mixture_files(tmp, seed, total=total)
            base, view, _, _ = mixture_views(seed, total=total)
            combined = combine_features([base, view], normalization="per_block_l2")
            sigma = median_bandwidth(combined.vectors, stage_seed(seed, "bandwidth"))
            row_of = {sid: i for i, sid in enumerate(combined.ids)}
            values = {}
            for sampler in ("svd", "random"):
                cfg = benchmark_config(tmp, f"{tmp}/out_{sampler}", seed, sampler=sampler, k=k)
                manifest = run_selection(cfg)
                rows = [row_of[s] for s in manifest.selected_ids]
                values[sampler] = coverage_metrics(rows, combined.vectors, sigma)["mmd2"]
            if values["svd"] <= values["random"]:
                wins += 1
    return wins >= need, f"default sampler beat random on {wins}/{len(seeds)} seeds (need {need})"


def run_bench(fast: bool = False) -> list[tuple[str, bool, str]]:
    """Oracle suite behind the bench subcommand: (name, passed, detail)."""
    rng = np.random.default_rng(20240817)
    checks = [
        ("density vs pair-loop oracle", lambda: _check_density(rng)),
        ("irs ratio fuzz", lambda: _check_irs(rng)),
        ("transferability closed form", lambda: _check_transferability(rng)),
        ("quota sum and caps", lambda: _check_quota(rng, 1000 if fast else 10000)),
        ("greedy mmd vs exhaustive", lambda: _check_greedy(rng)),
        ("svd leverage vs gram oracle", lambda: _check_svd(rng)),
        ("pca translation invariance", lambda: _check_pca(rng)),
        ("kmeans contracts", lambda: _check_kmeans(rng)),
        ("end-to-end vs random baseline", lambda: _check_end_to_end(fast)),
    ]
    results = []
    for name, fn in checks:
        try:
            ok, detail = fn()
        except Exception as e:  # a crashed check is a failed check
            ok, detail = False, f"raised {type(e).__name__}: {e}"
        results.append((name, ok, detail))
    return results
