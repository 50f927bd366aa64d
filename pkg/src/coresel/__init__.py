"""Deterministic cluster-based coreset selection for feature matrices.

The toolkit selects a small, high-value subset of samples from precomputed
feature matrices in three stages: k-means clustering over a combined feature
space, per-cluster quota allocation driven by cluster metrics (density,
instruction relevance score, transferability), and per-cluster sampling
(greedy MMD, SVD leverage, PCA energy, or seeded random).
"""

__version__ = "0.1.0"

from coresel.feature_store import (
    CombinedFeatures,
    FeatureSpace,
    SampleMeta,
    combine_features,
    load_feature_space,
    load_sample_meta,
    write_feature_space,
)
from coresel.clustering import ClusterModel, kmeans_fit
from coresel.metrics import (
    ClusterScores,
    cluster_density,
    cluster_irs,
    cluster_transferability,
    median_bandwidth,
    sample_irs,
)
from coresel.quota import QuotaPlan, QuotaStrategy, allocate_quotas, score_clusters
from coresel.samplers import (
    RankPolicy,
    SamplerSpec,
    greedy_mmd_sample,
    mmd_squared,
    pca_energy_sample,
    random_sample,
    svd_leverage_sample,
)
from coresel.pipeline import PipelineConfig, run_selection, sweep_ratios

__all__ = [
    "__version__",
    "FeatureSpace",
    "SampleMeta",
    "CombinedFeatures",
    "load_feature_space",
    "write_feature_space",
    "combine_features",
    "load_sample_meta",
    "ClusterModel",
    "kmeans_fit",
    "ClusterScores",
    "median_bandwidth",
    "cluster_density",
    "sample_irs",
    "cluster_irs",
    "cluster_transferability",
    "QuotaStrategy",
    "QuotaPlan",
    "score_clusters",
    "allocate_quotas",
    "SamplerSpec",
    "RankPolicy",
    "greedy_mmd_sample",
    "svd_leverage_sample",
    "pca_energy_sample",
    "random_sample",
    "mmd_squared",
    "PipelineConfig",
    "run_selection",
    "sweep_ratios",
]
