"""Turn per-cluster scores into integer budgets that sum exactly.

Weights are size * score so evenly-sized clusters with equal scores split
the budget evenly; largest-remainder rounding keeps the sum exact, and any
quota above a cluster's size is capped with the overflow re-apportioned
over the uncapped clusters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .metrics import METRIC_NAMES, ClusterScores

ORIENTATIONS = ("higher_gets_more", "lower_gets_more")

DEFAULT_EPSILON = 0.1


@dataclass(frozen=True)
class QuotaStrategy:
    """Up to three oriented metrics averaged into one score per cluster."""

    components: tuple[tuple[str, str], ...]
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self) -> None:
        object.__setattr__(self, "components", tuple(tuple(c) for c in self.components))
        if not 1 <= len(self.components) <= 3:
            raise ValueError("a strategy combines 1 to 3 metrics")
        for name, orientation in self.components:
            if name not in METRIC_NAMES:
                raise ValueError(f"unknown metric {name!r} (expected one of {METRIC_NAMES})")
            if orientation not in ORIENTATIONS:
                raise ValueError(f"unknown orientation {orientation!r}")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")

    @property
    def metric_names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.components)

    @classmethod
    def preset(cls, name: str | int, epsilon: float = DEFAULT_EPSILON) -> "QuotaStrategy":
        key = str(name)
        if key not in PRESET_STRATEGIES:
            raise ValueError(
                f"unknown quota strategy preset {key!r} (expected 1..{len(PRESET_STRATEGIES)})"
            )
        return cls(components=PRESET_STRATEGIES[key], epsilon=epsilon)


_DEN = ("density", "lower_gets_more")
_IRS = ("irs", "higher_gets_more")
_TRA = ("transferability", "higher_gets_more")
_TXT = ("text_transferability", "higher_gets_more")

PRESET_STRATEGIES: dict[str, tuple[tuple[str, str], ...]] = {
    "1": (_DEN,),
    "2": (_IRS,),
    "3": (_TRA,),
    "4": (_TXT,),
    "5": (_DEN, _IRS),
    "6": (_TRA, _IRS),
    "7": (_TXT, _IRS),
    "8": (_TRA, _DEN),
    "9": (_TXT, _DEN),
    "10": (_TRA, _DEN, _IRS),
    "11": (_TXT, _DEN, _IRS),
}

DEFAULT_STRATEGY = "8"


@dataclass
class QuotaPlan:
    budget: int
    quotas: np.ndarray
    weights: np.ndarray

    def __post_init__(self) -> None:
        self.quotas = np.asarray(self.quotas, dtype=np.int64)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if int(self.quotas.sum()) != self.budget:
            raise ValueError(f"quotas sum to {int(self.quotas.sum())}, budget is {self.budget}")
        if (self.quotas < 0).any():
            raise ValueError("negative quota")


def score_clusters(raw: list[ClusterScores], strategy: QuotaStrategy) -> np.ndarray:
    """Normalize, orient, and average the strategy's metrics per cluster.

    Each metric is min-max scaled to [0, 1] across clusters (a constant
    metric maps to all 0.5), flipped when lower values should earn more,
    then the components are averaged and the epsilon floor added.
    """
    by_name = {s.metric: s for s in raw}
    k = None
    parts = []
    for name, orientation in strategy.components:
        scores = by_name.get(name)
        if scores is None:
            raise ValueError(f"strategy needs metric {name!r} but it was not computed")
        if k is None:
            k = scores.k
        elif scores.k != k:
            raise ValueError(f"metric {name!r} has {scores.k} values, expected {k}")
        values = scores.values
        lo, hi = float(values.min()), float(values.max())
        if hi > lo:
            scaled = (values - lo) / (hi - lo)
        else:
            scaled = np.full(values.shape, 0.5)
        if orientation == "lower_gets_more":
            scaled = 1.0 - scaled
        parts.append(scaled)
    return np.mean(parts, axis=0) + strategy.epsilon


def _largest_remainder(real: np.ndarray, total: int) -> np.ndarray:
    """Integer apportionment of ``total`` following the real-valued shares.

    Floors first, then hands the leftover units to the largest fractional
    remainders; ties go to the lower index.
    """
    floors = np.floor(real).astype(np.int64)
    leftover = total - int(floors.sum())
    if leftover < 0 or leftover > real.shape[0]:
        raise AssertionError(f"apportionment leftover {leftover} out of range")
    if leftover:
        order = np.argsort(-(real - floors), kind="stable")
        floors[order[:leftover]] += 1
    return floors


def allocate_quotas(
    scores: np.ndarray, sizes: np.ndarray, budget: int
) -> QuotaPlan:
    """Largest-remainder apportionment of ``budget`` over weights size*score,
    capping every quota at its cluster size."""
    scores = np.asarray(scores, dtype=np.float64)
    sizes = np.asarray(sizes, dtype=np.int64)
    if scores.shape != sizes.shape or scores.ndim != 1:
        raise ValueError("scores and sizes must be 1-D and equally long")
    if (scores < 0).any():
        raise ValueError("scores must be nonnegative")
    if (sizes <= 0).any():
        raise ValueError("every cluster size must be positive")
    total = int(sizes.sum())
    if budget <= 0:
        raise ValueError(f"budget must be positive, got {budget}")
    if budget > total:
        raise ValueError(f"budget {budget} exceeds the {total} available samples")

    weights = sizes * scores
    k = sizes.shape[0]
    quotas = np.zeros(k, dtype=np.int64)
    capped = np.zeros(k, dtype=bool)
    while True:
        remaining = budget - int(quotas[capped].sum())
        active = np.flatnonzero(~capped)
        if remaining == 0:
            quotas[active] = 0
            break
        w = weights[active]
        wsum = float(w.sum())
        if wsum <= 0:
            raise ValueError("total weight of uncapped clusters is zero")
        real = remaining * w / wsum
        share = _largest_remainder(real, remaining)
        quotas[active] = share
        over = share > sizes[active]
        if not over.any():
            break
        hit = active[over]
        quotas[hit] = sizes[hit]
        capped[hit] = True

    return QuotaPlan(budget=budget, quotas=quotas, weights=weights)
