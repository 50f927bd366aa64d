"""Extraction jobs: dataset -> feature matrices and answer-loss CSV."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import Record, decode_all, load_records
from .io import write_losses, write_matrix
from .models import ToyIQA, ToyMLLM, ToyText, ToyVision, load_model

log = logging.getLogger(__name__)

SPACE_NAMES = ("lmm", "last_pool", "last_token", "vte", "dino", "e5", "iqa")

_MLLM_SPACES = frozenset({"lmm", "last_pool", "last_token", "vte"})

DEFAULT_SPACES = ("lmm", "vte", "dino", "e5", "iqa")


@dataclass(frozen=True)
class ExtractorJob:
    dataset_dir: str
    out_dir: str
    spaces: tuple[str, ...] = DEFAULT_SPACES
    mllm: str = ToyMLLM.name
    vision_model: str = ToyVision.name
    text_model: str = ToyText.name
    iqa_model: str = ToyIQA.name
    layer_indices: tuple[int, ...] = ToyMLLM.default_layers
    batch_size: int = 16

    def __post_init__(self) -> None:
        if not self.spaces:
            raise ValueError("at least one feature space is required")
        unknown = [s for s in self.spaces if s not in SPACE_NAMES]
        if unknown:
            raise ValueError(f"unknown spaces {unknown}; known: {list(SPACE_NAMES)}")
        if len(set(self.spaces)) != len(self.spaces):
            raise ValueError("duplicate space names")
        if not self.layer_indices:
            raise ValueError("layer_indices must be nonempty")
        if any(b <= a for a, b in zip(self.layer_indices, self.layer_indices[1:])):
            raise ValueError(f"layer_indices must be strictly increasing, got {self.layer_indices}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")


@dataclass
class ExtractionResult:
    ids: list[str]
    feature_paths: dict[str, Path] = field(default_factory=dict)
    loss_path: Path | None = None
    skipped_images: list[tuple[str, str]] = field(default_factory=list)
    skipped_losses: list[tuple[str, str]] = field(default_factory=list)


def _prepare(job: ExtractorJob) -> tuple[list[Record], dict, list[tuple[str, str]]]:
    records = load_records(job.dataset_dir)
    kept, images, skipped = decode_all(records)
    if not kept:
        raise ValueError("no decodable samples in dataset")
    return kept, images, skipped


def _batches(items: list, size: int):
    for start in range(0, len(items), size):
        yield items[start : start + size]


def _compute_features(
    job: ExtractorJob, kept: list[Record], images: dict
) -> dict[str, np.ndarray]:
    """Per-space matrices, rows in record order for every space."""
    mllm = load_model(job.mllm) if _MLLM_SPACES & set(job.spaces) else None
    vision = load_model(job.vision_model) if "dino" in job.spaces else None
    text = load_model(job.text_model) if "e5" in job.spaces else None
    iqa = load_model(job.iqa_model) if "iqa" in job.spaces else None

    columns: dict[str, list[np.ndarray]] = {s: [] for s in job.spaces}
    for batch in _batches(kept, job.batch_size):
        for record in batch:
            image = images[record.id]
            if mllm is not None:
                mllm_feats = mllm.features(image, record.question, job.layer_indices)
                for space in _MLLM_SPACES & set(job.spaces):
                    columns[space].append(mllm_feats[space])
            if vision is not None:
                columns["dino"].append(vision.encode(image))
            if text is not None:
                columns["e5"].append(text.encode(record.question + "\n" + record.answer))
            if iqa is not None:
                columns["iqa"].append(iqa.encode(image))
    return {space: np.vstack(vecs) for space, vecs in columns.items()}


def extract_features(
    job: ExtractorJob, _prepared: tuple | None = None
) -> ExtractionResult:
    """Write one feature file + ids sidecar per requested space.

    Samples whose image fails to decode are dropped from every space so
    all emitted files stay row-aligned.
    """
    kept, images, skipped = _prepared if _prepared is not None else _prepare(job)
    ids = [r.id for r in kept]
    matrices = _compute_features(job, kept, images)

    out_dir = Path(job.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    result = ExtractionResult(ids=ids, skipped_images=list(skipped))
    for space in job.spaces:
        path = out_dir / f"{space}.feat"
        write_matrix(path, ids, matrices[space])
        result.feature_paths[space] = path
        log.info("wrote %s: %d rows, dim %d", path, len(ids), matrices[space].shape[1])
    return result


def extract_irs_losses(
    job: ExtractorJob, _prepared: tuple | None = None
) -> ExtractionResult:
    """Write meta.csv with per-sample answer losses with/without the question.

    Samples that cannot be scored (empty answers) are omitted with a
    logged reason; image-decode failures are dropped before scoring.
    """
    kept, images, skipped = _prepared if _prepared is not None else _prepare(job)
    mllm = load_model(job.mllm)

    rows: list[tuple[str, float, float]] = []
    skipped_losses: list[tuple[str, str]] = []
    for record in kept:
        try:
            with_q, without_q = mllm.score_answer(
                images[record.id], record.question, record.answer
            )
        except ValueError as e:
            log.warning("skipping loss row for %s: %s", record.id, e)
            skipped_losses.append((record.id, str(e)))
            continue
        rows.append((record.id, with_q, without_q))
    if not rows:
        raise ValueError("no scorable samples in dataset")

    out_dir = Path(job.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "meta.csv"
    write_losses(path, rows)
    log.info("wrote %s: %d rows", path, len(rows))
    return ExtractionResult(
        ids=[r.id for r in kept],
        loss_path=path,
        skipped_images=list(skipped),
        skipped_losses=skipped_losses,
    )


def run_extraction(job: ExtractorJob) -> ExtractionResult:
    """Features plus losses from one pass over the dataset."""
    prepared = _prepare(job)
    features = extract_features(job, _prepared=prepared)
    losses = extract_irs_losses(job, _prepared=prepared)
    features.loss_path = losses.loss_path
    features.skipped_losses = losses.skipped_losses
    return features
