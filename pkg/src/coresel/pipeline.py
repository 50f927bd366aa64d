"""Three-stage selection driven by a single JSON config.

Stages: load + combine features, cluster, score clusters, allocate
quotas, sample within clusters. Every randomized step gets its own seed
derived from the config seed, stage artifacts are written to the output
directory, and the manifest digest is a pure function of the inputs and
the config (the timestamp is excluded).
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .clustering import ClusterModel, kmeans_fit
from .feature_store import (
    CombinedFeatures,
    SampleMeta,
    combine_features,
    load_feature_space,
    load_sample_meta,
)
from .metrics import (
    ClusterScores,
    cluster_irs,
    cluster_transferability,
    densities,
    median_bandwidth,
    space_centroids,
)
from .quota import DEFAULT_EPSILON, DEFAULT_STRATEGY, QuotaStrategy, allocate_quotas, score_clusters
from .samplers import RankPolicy, SamplerSpec, mmd_squared, sample_cluster

log = logging.getLogger(__name__)

TOOL_VERSION = "0.1.0"

METRIC_CSV_COLUMNS = ["cluster_id", "size", "density", "irs", "transferability", "text_transferability"]


class PipelineError(RuntimeError):
    """A stage failed; the message carries the stage tag for diagnostics."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


def stage_seed(seed: int, stage: str) -> int:
    """Deterministic per-stage seed split from the config seed."""
    digest = hashlib.sha256(f"{seed}:{stage}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def _parse_rank_policy(raw) -> RankPolicy:
    if raw is None:
        return RankPolicy.energy(0.95)
    if isinstance(raw, RankPolicy):
        return raw
    if not isinstance(raw, dict) or set(raw) != {"kind", "value"}:
        raise ValueError('rank_policy must be {"kind": "fixed"|"energy", "value": ...}')
    return RankPolicy(kind=raw["kind"], value=raw["value"])


def _parse_sampler(raw) -> SamplerSpec:
    if isinstance(raw, SamplerSpec):
        return raw
    if isinstance(raw, str):
        raw = {"kind": raw}
    if not isinstance(raw, dict) or "kind" not in raw:
        raise ValueError("sampler must be a kind name or an object with a 'kind' field")
    known = {"kind", "sigma", "seed", "feature_space", "rank_policy"}
    unknown = set(raw) - known
    if unknown:
        raise ValueError(f"unknown sampler fields: {sorted(unknown)}")
    return SamplerSpec(
        kind=raw["kind"],
        sigma=raw.get("sigma"),
        rank_policy=_parse_rank_policy(raw.get("rank_policy")),
        seed=raw.get("seed"),
        feature_space=raw.get("feature_space"),
    )


@dataclass
class PipelineConfig:
    """Everything one selection run depends on, resolvable from JSON."""

    spaces: list[dict]
    out_dir: str
    meta_path: str | None = None
    normalization: str = "per_block_l2"
    k: int = 64
    seed: int = 0
    budget_ratio: float = 0.1
    quota_strategy: object = DEFAULT_STRATEGY
    epsilon: float = DEFAULT_EPSILON
    tau: float = 0.5
    transfer_invert: bool = False
    sigma: float | None = None
    sampler: object = field(default_factory=lambda: {"kind": "svd"})
    text_space: str | None = None
    max_iter: int = 300
    tol: float = 1e-4
    n_workers: int = 1

    def __post_init__(self) -> None:
        if not self.spaces:
            raise ValueError("config needs at least one feature space")
        names = []
        for entry in self.spaces:
            if not isinstance(entry, dict) or set(entry) != {"name", "path"}:
                raise ValueError('each space must be {"name": ..., "path": ...}')
            names.append(entry["name"])
        if len(set(names)) != len(names):
            raise ValueError("space names must be unique")
        if not 0.0 < self.budget_ratio <= 1.0:
            raise ValueError(f"budget_ratio must lie in (0, 1], got {self.budget_ratio}")
        if self.sigma is not None and not self.sigma > 0:
            raise ValueError("sigma override must be positive")
        if self.text_space is not None and self.text_space not in names:
            raise ValueError(f"text_space {self.text_space!r} is not a configured space")
        sampler = self.sampler_spec()
        if sampler.feature_space is not None and sampler.feature_space not in names:
            raise ValueError(f"sampler feature_space {sampler.feature_space!r} is not configured")
        self.strategy()  # validates the preset / component list

    @classmethod
    def from_json(cls, path: str | Path) -> "PipelineConfig":
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        if not isinstance(raw, dict):
            raise ValueError(f"{path}: config must be a JSON object")
        allowed = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - allowed
        if unknown:
            raise ValueError(f"{path}: unknown config fields: {sorted(unknown)}")
        return cls(**raw)

    def strategy(self) -> QuotaStrategy:
        raw = self.quota_strategy
        if isinstance(raw, QuotaStrategy):
            return raw
        if isinstance(raw, (str, int)):
            return QuotaStrategy.preset(raw, epsilon=self.epsilon)
        if isinstance(raw, (list, tuple)):
            return QuotaStrategy(
                components=tuple((m, o) for m, o in raw), epsilon=self.epsilon
            )
        raise ValueError("quota_strategy must be a preset name or a list of [metric, orientation]")

    def sampler_spec(self) -> SamplerSpec:
        return _parse_sampler(self.sampler)

    def canonical(self) -> dict:
        """Digest-stable view of the config; output paths excluded."""
        strategy = self.strategy()
        sampler = self.sampler_spec()
        return {
            "spaces": [{"name": s["name"], "path": str(s["path"])} for s in self.spaces],
            "meta_path": None if self.meta_path is None else str(self.meta_path),
            "normalization": self.normalization,
            "k": self.k,
            "seed": self.seed,
            "budget_ratio": self.budget_ratio,
            "quota_strategy": [list(c) for c in strategy.components],
            "epsilon": strategy.epsilon,
            "tau": self.tau,
            "transfer_invert": self.transfer_invert,
            "sigma": self.sigma,
            "sampler": {
                "kind": sampler.kind,
                "sigma": sampler.sigma,
                "seed": sampler.seed,
                "feature_space": sampler.feature_space,
                "rank_policy": {
                    "kind": sampler.rank_policy.kind,
                    "value": sampler.rank_policy.value,
                },
            },
            "text_space": self.text_space,
            "max_iter": self.max_iter,
            "tol": self.tol,
            "n_workers": self.n_workers,
        }

    def digest(self) -> str:
        payload = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass
class SelectionManifest:
    """Selected ids plus the provenance needed to reproduce them."""

    selected_ids: list[str]
    budget: int
    budget_ratio: float
    n_samples: int
    k: int
    seed: int
    config_digest: str
    stage_digests: dict
    clusters: list[dict]
    tool_version: str = TOOL_VERSION
    created_at: str = ""
    manifest_digest: str = ""

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def content_digest(self) -> str:
        body = self.to_dict()
        body.pop("created_at")
        body.pop("manifest_digest")
        payload = json.dumps(body, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    def write(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )

    @classmethod
    def from_json(cls, path: str | Path) -> "SelectionManifest":
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(**raw)


@dataclass
class _Prepared:
    """Everything shared across budgets: features, clustering, metrics."""

    combined: CombinedFeatures
    metas: list[SampleMeta] | None
    model: ClusterModel
    sigma: float
    metric_scores: list[ClusterScores]


def _load_inputs(config: PipelineConfig) -> tuple[CombinedFeatures, list[SampleMeta] | None]:
    try:
        spaces = [load_feature_space(entry["path"], name=entry["name"]) for entry in config.spaces]
        combined = combine_features(spaces, normalization=config.normalization)
    except (OSError, ValueError) as e:
        raise PipelineError("features", str(e)) from e
    metas = None
    if config.meta_path is not None:
        try:
            metas = load_sample_meta(config.meta_path)
        except (OSError, ValueError) as e:
            raise PipelineError("features", str(e)) from e
        missing = set(combined.ids) - {m.id for m in metas}
        if missing:
            sample = sorted(missing)[0]
            raise PipelineError(
                "features",
                f"{len(missing)} feature ids missing from metadata, first {sample!r}",
            )
    return combined, metas


def _compute_metrics(
    config: PipelineConfig,
    combined: CombinedFeatures,
    metas: list[SampleMeta] | None,
    model: ClusterModel,
    sigma: float,
) -> list[ClusterScores]:
    try:
        scores = [
            densities(model, combined.vectors, sigma),
            cluster_transferability(model.centroids, config.tau, invert=config.transfer_invert),
        ]
        if metas is not None:
            scores.append(cluster_irs(model, metas, combined.ids))
        if config.text_space is not None:
            text_cents = space_centroids(
                combined.block(config.text_space), model.assignments, model.k
            )
            scores.append(
                cluster_transferability(
                    text_cents,
                    config.tau,
                    invert=config.transfer_invert,
                    metric_name="text_transferability",
                )
            )
        available = {s.metric for s in scores}
        needed = set(config.strategy().metric_names)
        lacking = needed - available
        if lacking:
            hints = {
                "irs": "set meta_path to compute irs",
                "text_transferability": "set text_space to compute text_transferability",
            }
            name = sorted(lacking)[0]
            raise ValueError(f"strategy needs {name!r}: {hints.get(name, 'metric unavailable')}")
    except ValueError as e:
        raise PipelineError("metrics", str(e)) from e
    return scores


def _prepare(config: PipelineConfig) -> _Prepared:
    combined, metas = _load_inputs(config)
    if config.k > combined.n:
        raise PipelineError(
            "clustering", f"k={config.k} exceeds the {combined.n} available samples"
        )
    try:
        model = kmeans_fit(
            combined.vectors,
            config.k,
            stage_seed(config.seed, "clustering"),
            max_iter=config.max_iter,
            tol=config.tol,
            n_workers=config.n_workers,
        )
    except ValueError as e:
        raise PipelineError("clustering", str(e)) from e
    try:
        sigma = (
            config.sigma
            if config.sigma is not None
            else median_bandwidth(combined.vectors, stage_seed(config.seed, "bandwidth"))
        )
    except ValueError as e:
        raise PipelineError("metrics", str(e)) from e
    metric_scores = _compute_metrics(config, combined, metas, model, sigma)
    return _Prepared(
        combined=combined, metas=metas, model=model, sigma=sigma, metric_scores=metric_scores
    )


def _format_value(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_metrics_csv(path: Path, model: ClusterModel, scores: list[ClusterScores]) -> None:
    by_name = {s.metric: s for s in scores}
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(METRIC_CSV_COLUMNS)
        for c in range(model.k):
            row = [c, int(model.sizes[c])]
            for name in METRIC_CSV_COLUMNS[2:]:
                entry = by_name.get(name)
                row.append("" if entry is None else repr(float(entry.values[c])))
            writer.writerow(row)


def _write_quota_csv(path: Path, model, combined_scores, plan) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["cluster_id", "size", "score", "weight", "quota"])
        for c in range(model.k):
            writer.writerow(
                [
                    c,
                    int(model.sizes[c]),
                    repr(float(combined_scores[c])),
                    repr(float(plan.weights[c])),
                    int(plan.quotas[c]),
                ]
            )


def _file_digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _select(prep: _Prepared, config: PipelineConfig) -> SelectionManifest:
    combined, model = prep.combined, prep.model
    n = combined.n
    budget = math.floor(config.budget_ratio * n)
    if budget < 1:
        raise PipelineError(
            "quota", f"budget_ratio {config.budget_ratio} yields an empty budget for n={n}"
        )

    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    model.to_json(out_dir / "cluster_model.json")
    _write_metrics_csv(out_dir / "metrics.csv", model, prep.metric_scores)

    try:
        combined_scores = score_clusters(prep.metric_scores, config.strategy())
        plan = allocate_quotas(combined_scores, model.sizes, budget)
    except ValueError as e:
        raise PipelineError("quota", str(e)) from e
    _write_quota_csv(out_dir / "quotas.csv", model, combined_scores, plan)

    spec = config.sampler_spec()
    if spec.feature_space is not None:
        sample_matrix = np.ascontiguousarray(combined.block(spec.feature_space))
    else:
        sample_matrix = combined.vectors

    selected_ids: list[str] = []
    cluster_records: list[dict] = []
    by_name = {s.metric: s for s in prep.metric_scores}
    for c in range(model.k):
        member_rows = model.members(c)
        quota_c = int(plan.quotas[c])
        try:
            local = sample_cluster(
                spec,
                sample_matrix[member_rows],
                quota_c,
                sigma=prep.sigma,
                seed=stage_seed(config.seed, f"sampling:{c}"),
            )
        except ValueError as e:
            raise PipelineError("sampling", f"cluster {c}: {e}") from e
        rows = member_rows[local] if local else []
        selected_ids.extend(combined.ids[r] for r in rows)
        cluster_records.append(
            {
                "cluster": c,
                "size": int(model.sizes[c]),
                "scores": {
                    name: float(entry.values[c]) for name, entry in sorted(by_name.items())
                },
                "score": float(combined_scores[c]),
                "weight": float(plan.weights[c]),
                "quota": quota_c,
                "selected": len(local),
            }
        )

    if len(selected_ids) != budget or len(set(selected_ids)) != budget:
        raise PipelineError(
            "sampling",
            f"selected {len(selected_ids)} ids ({len(set(selected_ids))} unique), wanted {budget}",
        )

    stage_digests = {
        "clustering": _file_digest(out_dir / "cluster_model.json"),
        "metrics": _file_digest(out_dir / "metrics.csv"),
        "quotas": _file_digest(out_dir / "quotas.csv"),
    }
    manifest = SelectionManifest(
        selected_ids=selected_ids,
        budget=budget,
        budget_ratio=config.budget_ratio,
        n_samples=n,
        k=model.k,
        seed=config.seed,
        config_digest=config.digest(),
        stage_digests=stage_digests,
        clusters=cluster_records,
        created_at=datetime.now(timezone.utc).isoformat(),
    )
    manifest.manifest_digest = manifest.content_digest()
    manifest.write(out_dir / "manifest.json")

    resolved = config.canonical()
    resolved["out_dir"] = str(config.out_dir)
    Path(out_dir / "config.json").write_text(
        json.dumps(resolved, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    return manifest


def run_selection(config: PipelineConfig) -> SelectionManifest:
    """Execute all stages and write the manifest plus stage artifacts."""
    prep = _prepare(config)
    return _select(prep, config)


def sweep_ratios(config: PipelineConfig, ratios: list[float]) -> list[SelectionManifest]:
    """One manifest per ratio, all sharing a single clustering pass."""
    for r in ratios:
        if not 0.0 < r <= 1.0:
            raise PipelineError("quota", f"ratio {r} outside (0, 1]")
    prep = _prepare(config)
    manifests = []
    for r in ratios:
        sub = Path(config.out_dir) / f"ratio_{r:g}"
        cfg = dataclasses.replace(config, budget_ratio=r, out_dir=str(sub))
        manifests.append(_select(prep, cfg))
    return manifests


def emit_report(run_dir: str | Path) -> dict:
    """Rebuild per-cluster metrics, 2-D coordinates, and a summary from a
    completed run directory."""
    run_dir = Path(run_dir)
    config_path = run_dir / "config.json"
    manifest_path = run_dir / "manifest.json"
    if not config_path.exists() or not manifest_path.exists():
        raise PipelineError("report", f"{run_dir} is not a completed run directory")
    raw = json.loads(config_path.read_text(encoding="utf-8"))
    config = PipelineConfig(**raw)
    manifest = SelectionManifest.from_json(manifest_path)

    combined, _ = _load_inputs(config)
    selected = set(manifest.selected_ids)
    missing = selected - set(combined.ids)
    if missing:
        raise PipelineError("report", f"manifest ids not present in features: {sorted(missing)[:3]}")

    centered = combined.vectors - combined.vectors.mean(axis=0)
    U, s, _vt = np.linalg.svd(centered, full_matrices=False)
    coords = U[:, :2] * s[:2] if s.shape[0] >= 2 else np.pad(
        U[:, :1] * s[:1], ((0, 0), (0, 1))
    )
    coords_path = run_dir / "coords.csv"
    with open(coords_path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["id", "x", "y", "selected"])
        for i, sid in enumerate(combined.ids):
            writer.writerow(
                [sid, repr(float(coords[i, 0])), repr(float(coords[i, 1])), int(sid in selected)]
            )

    sigma = (
        config.sigma
        if config.sigma is not None
        else median_bandwidth(combined.vectors, stage_seed(config.seed, "bandwidth"))
    )
    rows = [i for i, sid in enumerate(combined.ids) if sid in selected]
    summary = {
        "budget": manifest.budget,
        "clusters": manifest.k,
        "quota_strategy": [list(c) for c in config.strategy().components],
        "sampler": config.sampler_spec().kind,
        "sigma": sigma,
        "mmd2_full_selected": mmd_squared(combined.vectors, combined.vectors[rows], sigma),
    }
    summary_path = run_dir / "summary.json"
    summary_path.write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n", encoding="utf-8")

    return {"coords": coords_path, "summary": summary_path, "metrics": run_dir / "metrics.csv"}
