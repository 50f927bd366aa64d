"""Load, validate, combine, and persist per-sample feature matrices.

On-disk layout is deliberately dumb and language-neutral:

    <magic "IQAFEAT1"> <u32 LE n_rows> <u32 LE dim> <n_rows*dim float32 LE, row-major>

Sample ids live in a UTF-8 sidecar file (same path + ".ids", one id per
line) so the matrix payload stays fixed-stride and memory-mappable.
Per-sample loss metadata is a plain CSV with header
``id,loss_with_q,loss_without_q``.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"IQAFEAT1"
HEADER_LEN = len(MAGIC) + 8  # magic + u32 n + u32 dim
META_HEADER = ["id", "loss_with_q", "loss_without_q"]

IDS_SUFFIX = ".ids"


class FeatureFormatError(ValueError):
    """A feature file or its sidecar violates the on-disk contract."""


def _check_ids(ids: list[str], where: str) -> None:
    seen: set[str] = set()
    for i, sid in enumerate(ids):
        if not sid or "\n" in sid or "\r" in sid:
            raise ValueError(f"{where}: id at position {i} is empty or contains a newline")
        if sid in seen:
            raise ValueError(f"{where}: duplicate id {sid!r}")
        seen.add(sid)


@dataclass
class FeatureSpace:
    """Named matrix of per-sample embedding vectors (float32 rows).

    Rows are order-aligned with ``ids``; every row must be finite and ids
    must be unique within the space.
    """

    name: str
    vectors: np.ndarray
    ids: list[str]

    def __post_init__(self) -> None:
        self.vectors = np.ascontiguousarray(self.vectors, dtype=np.float32)
        if self.vectors.ndim != 2:
            raise ValueError(f"feature space {self.name!r}: vectors must be 2-D")
        self.ids = [str(s) for s in self.ids]
        self.validate()

    @property
    def n(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def validate(self) -> None:
        n, dim = self.vectors.shape
        if n < 1 or dim < 1:
            raise ValueError(f"feature space {self.name!r}: need n >= 1 and dim >= 1, got {n}x{dim}")
        if len(self.ids) != n:
            raise ValueError(
                f"feature space {self.name!r}: {len(self.ids)} ids for {n} rows"
            )
        _check_ids(self.ids, f"feature space {self.name!r}")
        bad = ~np.isfinite(self.vectors).all(axis=1)
        if bad.any():
            row = int(np.flatnonzero(bad)[0])
            raise ValueError(f"feature space {self.name!r}: non-finite value in row {row}")


@dataclass
class SampleMeta:
    """Per-sample id plus the two answer cross-entropy losses.

    ``loss_with_q`` is the mean per-token loss of the answer conditioned on
    image and question; ``loss_without_q`` conditions on the image alone and
    is the (strictly positive) denominator of the relevance ratio.
    """

    id: str
    loss_with_q: float
    loss_without_q: float

    def __post_init__(self) -> None:
        self.loss_with_q = float(self.loss_with_q)
        self.loss_without_q = float(self.loss_without_q)
        if not np.isfinite(self.loss_with_q) or self.loss_with_q < 0:
            raise ValueError(f"sample {self.id!r}: loss_with_q must be finite and >= 0")
        if not np.isfinite(self.loss_without_q) or self.loss_without_q <= 0:
            raise ValueError(f"sample {self.id!r}: loss_without_q must be finite and > 0")


@dataclass
class CombinedFeatures:
    """Concatenation of one or more feature spaces, promoted to float64.

    ``block_layout`` records (space name, column offset, width) for each
    source block so downstream stages can slice out a single space.
    """

    vectors: np.ndarray
    ids: list[str]
    block_layout: list[tuple[str, int, int]] = field(default_factory=list)

    @property
    def n(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def block(self, name: str) -> np.ndarray:
        """Columns of the named source block."""
        for bname, offset, width in self.block_layout:
            if bname == name:
                return self.vectors[:, offset : offset + width]
        known = [b[0] for b in self.block_layout]
        raise KeyError(f"no block named {name!r} (have {known})")


def ids_path(path: str | Path) -> Path:
    return Path(str(path) + IDS_SUFFIX)


def write_feature_space(space: FeatureSpace, path: str | Path) -> None:
    """Write a feature space and its ids sidecar; round-trips bitwise."""
    space.validate()
    path = Path(path)
    n, dim = space.vectors.shape
    payload = np.ascontiguousarray(space.vectors, dtype="<f4").tobytes()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", n, dim))
        f.write(payload)
    with open(ids_path(path), "w", encoding="utf-8") as f:
        f.write("\n".join(space.ids) + "\n")


def load_feature_space(path: str | Path, name: str | None = None) -> FeatureSpace:
    """Load a feature space written by :func:`write_feature_space`.

    ``name`` defaults to the file stem. Raises :class:`FeatureFormatError`
    with a diagnostic naming the byte offset or row for bad magic, truncated
    payloads, id-count mismatches and non-finite values.
    """
    path = Path(path)
    data = path.read_bytes()
    if len(data) < HEADER_LEN or data[: len(MAGIC)] != MAGIC:
        got = data[: len(MAGIC)]
        raise FeatureFormatError(
            f"{path}: bad magic at byte offset 0: expected {MAGIC!r}, found {got!r}"
        )
    n, dim = struct.unpack_from("<II", data, len(MAGIC))
    if n < 1 or dim < 1:
        raise FeatureFormatError(f"{path}: header declares n={n}, dim={dim}; both must be >= 1")
    expected = n * dim * 4
    actual = len(data) - HEADER_LEN
    if actual != expected:
        raise FeatureFormatError(
            f"{path}: truncated or oversized payload: expected {expected} bytes "
            f"after byte offset {HEADER_LEN}, found {actual}"
        )
    vectors = np.frombuffer(data, dtype="<f4", count=n * dim, offset=HEADER_LEN).reshape(n, dim)

    sidecar = ids_path(path)
    if not sidecar.exists():
        raise FeatureFormatError(f"{path}: missing ids sidecar {sidecar}")
    ids = sidecar.read_text(encoding="utf-8").splitlines()
    if len(ids) != n:
        raise FeatureFormatError(
            f"{sidecar}: {len(ids)} ids for {n} matrix rows declared by {path.name}"
        )

    bad = ~np.isfinite(vectors).all(axis=1)
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        raise FeatureFormatError(f"{path}: non-finite value in row {row}")

    space_name = name if name is not None else path.stem
    return FeatureSpace(name=space_name, vectors=vectors.copy(), ids=ids)


def combine_features(
    spaces: list[FeatureSpace], normalization: str = "none"
) -> CombinedFeatures:
    """Concatenate spaces row-wise into one float64 matrix.

    All spaces must carry the identical id sequence. Under ``per_block_l2``
    each row's block is scaled to unit Euclidean norm; all-zero blocks pass
    through unchanged.
    """
    if not spaces:
        raise ValueError("combine_features: need at least one space")
    if normalization not in ("none", "per_block_l2"):
        raise ValueError(f"unknown normalization {normalization!r}")

    ref = spaces[0]
    for other in spaces[1:]:
        if other.ids != ref.ids:
            pos = _first_divergence(ref.ids, other.ids)
            raise ValueError(
                f"id sequences of {ref.name!r} and {other.name!r} diverge at position {pos}"
            )

    blocks: list[np.ndarray] = []
    layout: list[tuple[str, int, int]] = []
    offset = 0
    for s in spaces:
        block = s.vectors.astype(np.float64)
        if normalization == "per_block_l2":
            norms = np.linalg.norm(block, axis=1, keepdims=True)
            nonzero = norms[:, 0] > 0
            block[nonzero] /= norms[nonzero]
        blocks.append(block)
        layout.append((s.name, offset, s.dim))
        offset += s.dim

    return CombinedFeatures(
        vectors=np.concatenate(blocks, axis=1), ids=list(ref.ids), block_layout=layout
    )


def _first_divergence(a: list[str], b: list[str]) -> int:
    for i, (x, y) in enumerate(zip(a, b)):
        if x != y:
            return i
    return min(len(a), len(b))


def load_sample_meta(path: str | Path) -> list[SampleMeta]:
    """Load per-sample loss metadata from CSV, enforcing all row invariants."""
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty metadata file") from None
        if header != META_HEADER:
            raise ValueError(
                f"{path}: expected header {','.join(META_HEADER)!r}, found {','.join(header)!r}"
            )
        metas: list[SampleMeta] = []
        seen: set[str] = set()
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise ValueError(f"{path}:{lineno}: expected 3 columns, found {len(row)}")
            sid = row[0]
            if sid in seen:
                raise ValueError(f"{path}:{lineno}: duplicate id {sid!r}")
            seen.add(sid)
            try:
                with_q = float(row[1])
                without_q = float(row[2])
            except ValueError:
                raise ValueError(f"{path}:{lineno}: non-numeric loss for id {sid!r}") from None
            try:
                metas.append(SampleMeta(id=sid, loss_with_q=with_q, loss_without_q=without_q))
            except ValueError as e:
                raise ValueError(f"{path}:{lineno}: {e}") from None
    return metas


def write_sample_meta(metas: list[SampleMeta], path: str | Path) -> None:
    """Write loss metadata in the CSV layout read by :func:`load_sample_meta`."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(META_HEADER)
        for m in metas:
            writer.writerow([m.id, repr(m.loss_with_q), repr(m.loss_without_q)])
