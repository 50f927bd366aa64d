"""Instruction dataset loading: JSONL records plus image files.

A dataset is a directory holding ``records.jsonl`` (one object per line
with fields id, image, question, answer; image paths are relative to the
directory) and the image files themselves.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

log = logging.getLogger(__name__)

RECORDS_NAME = "records.jsonl"

# fixed decode size so every image-derived feature has a stable dimension
IMAGE_SIZE = 64

REQUIRED_FIELDS = ("id", "image", "question", "answer")


@dataclass(frozen=True)
class Record:
    id: str
    image_path: Path
    question: str
    answer: str


def load_records(dataset_dir: str | Path) -> list[Record]:
    """Parse and validate records.jsonl; ids must be unique and nonempty."""
    dataset_dir = Path(dataset_dir)
    records_path = dataset_dir / RECORDS_NAME
    if not records_path.exists():
        raise ValueError(f"{dataset_dir}: missing {RECORDS_NAME}")

    records: list[Record] = []
    seen: set[str] = set()
    with open(records_path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as e:
                raise ValueError(f"{records_path}:{lineno}: invalid JSON: {e}") from None
            if not isinstance(raw, dict):
                raise ValueError(f"{records_path}:{lineno}: record must be an object")
            missing = [k for k in REQUIRED_FIELDS if k not in raw]
            if missing:
                raise ValueError(f"{records_path}:{lineno}: missing fields {missing}")
            for k in REQUIRED_FIELDS:
                if not isinstance(raw[k], str):
                    raise ValueError(f"{records_path}:{lineno}: field {k!r} must be a string")
            sid = raw["id"]
            if not sid:
                raise ValueError(f"{records_path}:{lineno}: empty id")
            if sid in seen:
                raise ValueError(f"{records_path}:{lineno}: duplicate id {sid!r}")
            seen.add(sid)
            records.append(
                Record(
                    id=sid,
                    image_path=dataset_dir / raw["image"],
                    question=raw["question"],
                    answer=raw["answer"],
                )
            )
    if not records:
        raise ValueError(f"{records_path}: no records")
    return records


def decode_image(path: Path) -> np.ndarray:
    """Decode to a fixed-size float RGB array in [0, 1].

    Raises on unreadable or undecodable files; the caller decides whether
    to skip the sample.
    """
    with Image.open(path) as img:
        rgb = img.convert("RGB").resize((IMAGE_SIZE, IMAGE_SIZE), Image.BILINEAR)
    return np.asarray(rgb, dtype=np.float64) / 255.0


def decode_all(records: list[Record]) -> tuple[list[Record], dict, list[tuple[str, str]]]:
    """Decode every record's image, dropping undecodable samples entirely.

    Returns (kept records, id -> image array, skipped (id, reason) pairs).
    The drop is global: a sample with a bad image appears in no feature
    space and no loss row, keeping all outputs row-aligned.
    """
    kept: list[Record] = []
    images: dict = {}
    skipped: list[tuple[str, str]] = []
    for record in records:
        try:
            images[record.id] = decode_image(record.image_path)
        except (OSError, UnidentifiedImageError, ValueError) as e:
            reason = f"{type(e).__name__}: {e}"
            log.warning("skipping sample %s: image decode failed (%s)", record.id, reason)
            skipped.append((record.id, reason))
            continue
        kept.append(record)
    return kept, images, skipped
