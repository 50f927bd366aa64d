"""Small synthetic instruction datasets for smoke tests and demos."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

# indices of samples whose question states the answer verbatim, so a
# copy-capable scorer should show loss_with_q < loss_without_q on them
ECHO_INDICES = (1, 2)

_PHRASES = (
    "the lighthouse is red",
    "seven boats in the harbor",
    "overcast sky above the pier",
    "a green door on the left",
)

_QUESTIONS = (
    "how would you rate the sharpness of this image?",
    "what is the dominant color region?",
    "is the lighting natural or artificial?",
    "describe the overall contrast.",
)

_ANSWERS = (
    "the image looks moderately sharp with mild blur at the edges",
    "a warm block dominates the upper half",
    "the light reads as natural daylight",
    "contrast is low with compressed shadows",
)

# cycle length coprime with the answer cycle keeps QA pairs unique for n <= 20
_REGIONS = ("top left", "top right", "center", "bottom left", "bottom right")


def _render_image(rng: np.random.Generator) -> Image.Image:
    base = rng.uniform(0.0, 0.3, size=(64, 64, 3))
    ramp = np.linspace(0.0, rng.uniform(0.3, 0.7), 64)
    base += ramp[None, :, None]
    x0, y0 = rng.integers(4, 32, size=2)
    w, h = rng.integers(8, 24, size=2)
    color = rng.uniform(0.4, 1.0, size=3)
    base[y0 : y0 + h, x0 : x0 + w] = color
    arr = (np.clip(base, 0.0, 1.0) * 255).astype(np.uint8)
    return Image.fromarray(arr, mode="RGB")


def build_toy_dataset(
    directory: str | Path,
    n: int = 10,
    corrupt_index: int | None = 7,
    empty_answer_index: int | None = 4,
    seed: int = 0,
) -> list[dict]:
    """Write an n-sample dataset; returns the record dicts in file order.

    corrupt_index gets an undecodable image file; empty_answer_index gets
    answer "". Pass None to disable either. Samples at ECHO_INDICES have
    questions that contain their answer verbatim.
    """
    if n < 3:
        raise ValueError("need at least 3 samples")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)

    records: list[dict] = []
    lines: list[str] = []
    for i in range(n):
        image_name = f"img_{i:03d}.png"
        image_path = directory / image_name
        if i == corrupt_index:
            image_path.write_bytes(b"\x89PNGnot really" + bytes(rng.integers(0, 256, 32)))
        else:
            _render_image(rng).save(image_path)

        if i in ECHO_INDICES:
            phrase = _PHRASES[i % len(_PHRASES)]
            question = f"respond with exactly: {phrase}"
            answer = phrase
        else:
            question = _QUESTIONS[i % len(_QUESTIONS)]
            answer = f"{_ANSWERS[(i + 1) % len(_ANSWERS)]}, near the {_REGIONS[i % len(_REGIONS)]}"
        if i == empty_answer_index:
            answer = ""

        record = {"id": f"s{i:03d}", "image": image_name, "question": question, "answer": answer}
        records.append(record)
        lines.append(json.dumps(record))

    (directory / "records.jsonl").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return records
