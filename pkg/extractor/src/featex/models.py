"""Deterministic feature backends and the teacher-forced answer scorer.

Every backend is a small closed-form model whose weights are derived from
its identifier, so extraction needs no downloads and repeats bit-for-bit.
Each identifier maps to one implementation; asking for an unknown one
fails the same way a missing checkpoint would.
"""

from __future__ import annotations

import hashlib
import zlib

import numpy as np

GRID = 4  # patch grid per side for image summaries
SEP = b"\n"


class ModelLoadError(Exception):
    pass


def _seed_from(name: str) -> np.random.Generator:
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


def _patch_stats(image: np.ndarray) -> np.ndarray:
    """Per-patch channel means and stds over a GRID x GRID tiling."""
    h, w, c = image.shape
    ph, pw = h // GRID, w // GRID
    stats = np.empty((GRID * GRID, 2 * c), dtype=np.float64)
    for i in range(GRID):
        for j in range(GRID):
            patch = image[i * ph : (i + 1) * ph, j * pw : (j + 1) * pw]
            flat = patch.reshape(-1, c)
            stats[i * GRID + j, :c] = flat.mean(axis=0)
            stats[i * GRID + j, c:] = flat.std(axis=0)
    return stats


def _l2(v: np.ndarray) -> np.ndarray:
    norm = float(np.linalg.norm(v))
    return v / norm if norm > 0.0 else v


class ToyMLLM:
    """Byte-level causal mixer with image pseudo-tokens.

    Tokens are raw UTF-8 bytes; the image contributes GRID*GRID pseudo-token
    embeddings projected from patch statistics. Layer t applies
    h <- tanh(h W + cummean(h) U + b), so depth mixes information strictly
    left to right and hidden states at different depths genuinely differ.
    """

    name = "toy-mllm-v1"
    hidden = 48
    depth = 12
    default_layers = (3, 6, 9)

    def __init__(self) -> None:
        rng = _seed_from(self.name)
        scale = 1.0 / np.sqrt(self.hidden)
        self.byte_table = rng.standard_normal((256, self.hidden)) * scale
        self.image_proj = rng.standard_normal((2 * 3, self.hidden)) * 0.5
        self.layer_w = rng.standard_normal((self.depth, self.hidden, self.hidden)) * scale
        self.layer_u = rng.standard_normal((self.depth, self.hidden, self.hidden)) * scale
        self.layer_b = rng.standard_normal((self.depth, self.hidden)) * 0.1

    def embed(self, image: np.ndarray, text: bytes) -> tuple[np.ndarray, int]:
        """Input embeddings: image pseudo-tokens then text byte tokens.

        Returns (embeddings, number of image tokens).
        """
        img_tokens = _patch_stats(image) @ self.image_proj
        byte_ids = np.frombuffer(text, dtype=np.uint8)
        txt_tokens = self.byte_table[byte_ids] if byte_ids.size else np.empty((0, self.hidden))
        return np.vstack([img_tokens, txt_tokens]), img_tokens.shape[0]

    def hidden_states(self, embeddings: np.ndarray) -> list[np.ndarray]:
        """States after each layer; index 0 is the embedding layer output."""
        h = embeddings
        states = [h]
        counts = np.arange(1, h.shape[0] + 1)[:, None]
        for t in range(self.depth):
            context = np.cumsum(h, axis=0) / counts
            h = np.tanh(h @ self.layer_w[t] + context @ self.layer_u[t] + self.layer_b[t])
            states.append(h)
        return states

    def features(
        self, image: np.ndarray, question: str, layer_indices: tuple[int, ...]
    ) -> dict[str, np.ndarray]:
        """All MLLM-derived feature vectors for one sample."""
        for idx in layer_indices:
            if not 0 <= idx <= self.depth:
                raise ValueError(f"layer index {idx} out of range 0..{self.depth}")
        embeddings, n_img = self.embed(image, question.encode("utf-8"))
        states = self.hidden_states(embeddings)
        layered = np.concatenate([states[idx].mean(axis=0) for idx in layer_indices])
        last = states[-1]
        img_emb = embeddings[:n_img].mean(axis=0)
        txt = embeddings[n_img:]
        txt_emb = txt.mean(axis=0) if txt.shape[0] else np.zeros(self.hidden)
        return {
            "lmm": layered,
            "last_pool": last.mean(axis=0),
            "last_token": last[-1],
            "vte": np.concatenate([img_emb, txt_emb]),
        }

    def score_answer(self, image: np.ndarray, question: str, answer: str) -> tuple[float, float]:
        """Mean per-byte NLL of the answer with and without the question.

        The conditioning context is the image pseudo-byte stream plus, in
        the with-question case, the question bytes. Both are strictly
        positive because the predictive distribution never puts mass 1 on
        a single byte.
        """
        answer_bytes = answer.encode("utf-8")
        if not answer_bytes:
            raise ValueError("empty answer")
        image_bytes = self._image_bytes(image)
        with_q = _copy_model_nll(image_bytes + question.encode("utf-8") + SEP, answer_bytes)
        without_q = _copy_model_nll(image_bytes + SEP, answer_bytes)
        return with_q, without_q

    @staticmethod
    def _image_bytes(image: np.ndarray) -> bytes:
        stats = _patch_stats(image)
        return np.clip(stats * 255.0, 0, 255).astype(np.uint8).tobytes()


def _copy_model_nll(memory: bytes, target: bytes) -> float:
    """Mean per-byte NLL of target under an induction-style copy model.

    The model predicts each target byte from its growing history
    (memory + already-scored target prefix): it finds the longest suffix of
    the history (length 3, 2, then 1) occurring earlier, and mixes the
    empirical follower distribution of those occurrences with the history
    unigram distribution and a uniform floor. No trained weights; the
    with/without-question contrast comes purely from what the memory
    contains.
    """
    uniform = 1.0 / 256.0
    total = 0.0
    history = bytearray(memory)
    followers: dict[bytes, np.ndarray] = {}
    counts = np.zeros(256, dtype=np.float64)
    for i, b in enumerate(history):
        for k in (1, 2, 3):
            if i >= k:
                key = bytes(history[i - k : i])
                table = followers.get(key)
                if table is None:
                    table = np.zeros(256, dtype=np.float64)
                    followers[key] = table
                table[b] += 1.0
        counts[b] += 1.0

    for b in target:
        n = counts.sum()
        p_unigram = (counts / n) if n > 0 else np.full(256, uniform)
        p_induction = None
        for k in (3, 2, 1):
            if len(history) >= k:
                match = followers.get(bytes(history[-k:]))
                if match is not None and match.sum() > 0:
                    p_induction = match / match.sum()
                    break
        if p_induction is None:
            p_induction = p_unigram
        p = 0.6 * p_induction[b] + 0.25 * p_unigram[b] + 0.15 * uniform
        total -= float(np.log(p))
        i = len(history)
        for k in (1, 2, 3):
            if i >= k:
                key = bytes(history[i - k : i])
                table = followers.get(key)
                if table is None:
                    table = np.zeros(256, dtype=np.float64)
                    followers[key] = table
                table[b] += 1.0
        counts[b] += 1.0
        history.append(b)
    return total / len(target)


class ToyVision:
    """Patch-statistics encoder projected to a fixed embedding size."""

    name = "toy-dino-v1"
    dim = 64

    def __init__(self) -> None:
        rng = _seed_from(self.name)
        n_stats = GRID * GRID * 2 * 3
        self.proj = rng.standard_normal((n_stats, self.dim)) / np.sqrt(n_stats)

    def encode(self, image: np.ndarray) -> np.ndarray:
        return _l2(_patch_stats(image).reshape(-1) @ self.proj)


class ToyText:
    """Byte-trigram hashing encoder for question-answer pairs.

    Trigrams hash via crc32 (stable across processes, unlike hash()) into
    512 buckets, then project to the embedding size.
    """

    name = "toy-e5-v1"
    dim = 64
    buckets = 512

    def __init__(self) -> None:
        rng = _seed_from(self.name)
        self.proj = rng.standard_normal((self.buckets, self.dim)) / np.sqrt(self.buckets)

    def encode(self, text: str) -> np.ndarray:
        data = text.encode("utf-8")
        hist = np.zeros(self.buckets, dtype=np.float64)
        for i in range(len(data) - 2):
            hist[zlib.crc32(data[i : i + 3]) % self.buckets] += 1.0
        return _l2(_l2(hist) @ self.proj)


class ToyIQA:
    """Closed-form image quality statistics (no learned weights)."""

    name = "toy-maniqa-v1"

    def encode(self, image: np.ndarray) -> np.ndarray:
        gray = image.mean(axis=2)
        gx = np.diff(gray, axis=1)
        gy = np.diff(gray, axis=0)
        lap = (
            gray[:-2, 1:-1] + gray[2:, 1:-1] + gray[1:-1, :-2] + gray[1:-1, 2:]
            - 4.0 * gray[1:-1, 1:-1]
        )
        blur = 0.25 * (gray[:-1, :-1] + gray[:-1, 1:] + gray[1:, :-1] + gray[1:, 1:])
        residual = gray[:-1, :-1] - blur
        rg = image[:, :, 0] - image[:, :, 1]
        yb = 0.5 * (image[:, :, 0] + image[:, :, 1]) - image[:, :, 2]
        hist, _ = np.histogram(gray, bins=32, range=(0.0, 1.0))
        freq = hist / hist.sum()
        nonzero = freq[freq > 0]
        entropy = float(-(nonzero * np.log2(nonzero)).sum())
        return np.array(
            [
                gray.mean(),
                gray.std(),
                image[:, :, 0].mean(),
                image[:, :, 1].mean(),
                image[:, :, 2].mean(),
                image.std(axis=(0, 1)).mean(),
                np.abs(gx).mean(),
                np.abs(gy).mean(),
                float(np.hypot(gx[:-1, :], gy[:, :-1]).mean()),
                lap.var(),
                np.abs(residual).mean(),
                float(np.hypot(rg.std(), yb.std())),
                entropy,
                float(np.quantile(gray, 0.9) - np.quantile(gray, 0.1)),
            ]
        )


_REGISTRY = {
    ToyMLLM.name: ToyMLLM,
    ToyVision.name: ToyVision,
    ToyText.name: ToyText,
    ToyIQA.name: ToyIQA,
}


def load_model(name: str):
    cls = _REGISTRY.get(name)
    if cls is None:
        known = ", ".join(sorted(_REGISTRY))
        raise ModelLoadError(f"model load failure: unknown model {name!r} (available: {known})")
    return cls()
