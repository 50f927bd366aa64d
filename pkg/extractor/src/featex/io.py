"""Writers for the selection toolkit's on-disk interchange formats.

The formats are the external contract between the extractor and the
selection side, re-implemented here from their byte-level definition so
this package stays independent:

    <magic "IQAFEAT1"> <u32 LE n_rows> <u32 LE dim> <n_rows*dim float32 LE>

with ids in a UTF-8 sidecar (same path + ".ids", one per line) and losses
in a CSV headed ``id,loss_with_q,loss_without_q``.
"""

from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

MAGIC = b"IQAFEAT1"
LOSS_HEADER = ["id", "loss_with_q", "loss_without_q"]


def write_matrix(path: str | Path, ids: list[str], vectors: np.ndarray) -> None:
    """Write one feature space plus its ids sidecar."""
    vectors = np.ascontiguousarray(vectors, dtype="<f4")
    if vectors.ndim != 2 or vectors.shape[0] < 1 or vectors.shape[1] < 1:
        raise ValueError(f"{path}: need a nonempty 2-D matrix, got shape {vectors.shape}")
    if len(ids) != vectors.shape[0]:
        raise ValueError(f"{path}: {len(ids)} ids for {vectors.shape[0]} rows")
    if len(set(ids)) != len(ids):
        raise ValueError(f"{path}: duplicate sample ids")
    for sid in ids:
        if not sid or "\n" in sid or "\r" in sid:
            raise ValueError(f"{path}: bad sample id {sid!r}")
    if not np.isfinite(vectors).all():
        raise ValueError(f"{path}: non-finite feature values")

    path = Path(path)
    n, dim = vectors.shape
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", n, dim))
        f.write(vectors.tobytes())
    Path(str(path) + ".ids").write_text("\n".join(ids) + "\n", encoding="utf-8")


def write_losses(path: str | Path, rows: list[tuple[str, float, float]]) -> None:
    """Write per-sample loss pairs in the selection toolkit's CSV layout."""
    for sid, with_q, without_q in rows:
        if not with_q > 0 or not without_q > 0:
            raise ValueError(f"{path}: sample {sid!r} has a nonpositive loss")
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(LOSS_HEADER)
        for sid, with_q, without_q in rows:
            writer.writerow([sid, repr(float(with_q)), repr(float(without_q))])
