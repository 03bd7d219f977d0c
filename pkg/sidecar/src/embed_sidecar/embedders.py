"""Embedding backends.

Every backend produces one token matrix (n x dim, n >= 1) per input and is
deterministic for fixed weights and input. ``embedder_id`` identifies the
backend and weight revision; the per-space ids returned with embeddings are
derived from it, so swapping the backend changes every id the core caches on.

The model-free ``hash`` backend derives matrices from a content digest. It
serves contract tests and desk-scale runs with no model download; real
late-interaction checkpoints can be added to ``BACKENDS`` without touching
the service layer.
"""

from __future__ import annotations

import hashlib
import io

import numpy as np
from PIL import Image, UnidentifiedImageError


class UndecodableImage(ValueError):
    """The payload is not a decodable image."""


class HashEmbedder:
    """Deterministic digest-seeded token matrices; no model weights.

    Text inputs get one row per whitespace token (capped), image inputs a
    fixed small patch grid; both are unit-normalized rows so scores stay in
    a familiar range.
    """

    def __init__(self, dim: int = 64, max_text_rows: int = 32, image_rows: int = 4):
        self.dim = dim
        self.max_text_rows = max_text_rows
        self.image_rows = image_rows

    @property
    def embedder_id(self) -> str:
        return f"hash-v1-d{self.dim}"

    @property
    def text_embedder_id(self) -> str:
        return f"{self.embedder_id}:text"

    @property
    def image_embedder_id(self) -> str:
        return f"{self.embedder_id}:image"

    def _matrix(self, payload: bytes, space: str, rows: int) -> np.ndarray:
        digest = hashlib.sha256(space.encode("ascii") + b"\x00" + payload).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
        mat = rng.standard_normal((rows, self.dim)).astype(np.float32)
        return mat / np.linalg.norm(mat, axis=1, keepdims=True)

    def embed_texts(self, texts: list[str], space: str = "text") -> list[np.ndarray]:
        out = []
        for text in texts:
            rows = min(max(len(text.split()), 1), self.max_text_rows)
            out.append(self._matrix(text.encode("utf-8"), space, rows))
        return out

    def embed_images(self, pngs: list[bytes]) -> list[np.ndarray]:
        out = []
        for png in pngs:
            try:
                with Image.open(io.BytesIO(png)) as img:
                    img.load()
            except (UnidentifiedImageError, OSError) as exc:
                raise UndecodableImage(str(exc)) from exc
            out.append(self._matrix(png, "image", self.image_rows))
        return out


BACKENDS = {"hash": HashEmbedder}


def build_embedder(name: str, dim: int):
    if name not in BACKENDS:
        raise ValueError(f"unknown embedder {name!r}; known: {sorted(BACKENDS)}")
    return BACKENDS[name](dim=dim)
