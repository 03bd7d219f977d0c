"""Exact dual-modality retrieval over token-embedding indexes.

Scoring is late interaction (MaxSim): for each query token take the maximum
dot product against the item's tokens, then sum over query tokens. Every
text segment and every page image in the corpus is scored exhaustively;
no approximate shortcuts.
"""

from __future__ import annotations

import hashlib
import json
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .errors import DimensionMismatch, EmbedderDimDrift
from .ingest import Corpus, PageImage, TextSegment

logger = logging.getLogger(__name__)

Key = tuple  # (doc_id, page_index) or (doc_id, page_index, segment_index)


def as_token_matrix(values) -> np.ndarray:
    """Validate and normalize an n x d token-embedding matrix."""
    mat = np.asarray(values, dtype=np.float32)
    if mat.ndim != 2 or mat.shape[0] < 1 or mat.shape[1] < 1:
        raise ValueError(f"token matrix must be 2-D with n>=1, d>=1, got shape {mat.shape}")
    if not np.all(np.isfinite(mat)):
        raise ValueError("token matrix contains non-finite values")
    return mat


def late_interaction_score(query: np.ndarray, item: np.ndarray) -> float:
    """MaxSim: sum over query tokens of the max dot product with item tokens."""
    if query.shape[1] != item.shape[1]:
        raise DimensionMismatch(
            f"query dim {query.shape[1]} != item dim {item.shape[1]}"
        )
    return float((query @ item.T).max(axis=1).sum())


@dataclass(frozen=True)
class ScoredItem:
    key: Key
    score: float


def top_k(scores: Sequence[ScoredItem], k: int) -> list[ScoredItem]:
    """Highest-scoring min(k, n) items; ties broken by ascending key."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    return sorted(scores, key=lambda s: (-s.score, s.key))[:k]


@dataclass
class TokenIndex:
    """Immutable mapping from item keys to token-embedding matrices."""

    entries: list[tuple[Key, np.ndarray]]
    embedder_id: str
    dim: int

    def __post_init__(self):
        seen = set()
        for key, mat in self.entries:
            if key in seen:
                raise ValueError(f"duplicate index key {key!r}")
            seen.add(key)
            if mat.shape[1] != self.dim:
                raise EmbedderDimDrift(
                    f"entry {key!r} has dim {mat.shape[1]}, index dim is {self.dim}"
                )

    def __len__(self) -> int:
        return len(self.entries)


# Text and image indexes share the representation; aliases keep signatures readable.
TextIndex = TokenIndex
ImageIndex = TokenIndex


class EmbeddingClient(Protocol):
    """Client side of the embedding sidecar (or a stub standing in for it)."""

    @property
    def text_embedder_id(self) -> str: ...

    @property
    def image_embedder_id(self) -> str: ...

    def embed_texts(self, texts: list[str]) -> tuple[str, list[np.ndarray]]:
        """Returns (embedder_id, one matrix per input text)."""
        ...

    def embed_images(self, pngs: list[bytes]) -> tuple[str, list[np.ndarray]]:
        """Returns (embedder_id, one matrix per input image)."""
        ...

    def embed_image_queries(self, texts: list[str]) -> tuple[str, list[np.ndarray]]:
        """Embed text queries into the image retriever's space."""
        ...


# --- index persistence -------------------------------------------------------
#
# Binary layout: one UTF-8 JSON header line {"embedder_id", "dim", "count"},
# then per entry a JSON line {"key": [...], "rows": n} followed by
# rows*dim little-endian float32 values.

_MAGIC = b"DQIX1\n"


def save_index(index: TokenIndex, path: Path | str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        header = {"embedder_id": index.embedder_id, "dim": index.dim, "count": len(index.entries)}
        fh.write(json.dumps(header).encode("utf-8") + b"\n")
        for key, mat in index.entries:
            meta = {"key": list(key), "rows": int(mat.shape[0])}
            fh.write(json.dumps(meta).encode("utf-8") + b"\n")
            fh.write(mat.astype("<f4").tobytes())


def load_index(path: Path | str) -> TokenIndex:
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise ValueError(f"{path}: not an index file")
        header = json.loads(fh.readline().decode("utf-8"))
        dim = header["dim"]
        entries = []
        for _ in range(header["count"]):
            meta = json.loads(fh.readline().decode("utf-8"))
            rows = meta["rows"]
            buf = fh.read(rows * dim * 4)
            mat = np.frombuffer(buf, dtype="<f4").reshape(rows, dim).copy()
            entries.append((tuple(meta["key"]), mat))
    return TokenIndex(entries=entries, embedder_id=header["embedder_id"], dim=dim)


def _content_fingerprint(embedder_id: str, items: list[tuple[Key, bytes]]) -> str:
    h = hashlib.sha256()
    h.update(embedder_id.encode("utf-8"))
    for key, payload in items:
        h.update(repr(key).encode("utf-8"))
        h.update(struct.pack("<q", len(payload)))
        h.update(payload)
    return h.hexdigest()


def _build_index(
    keyed_payloads: list[tuple[Key, bytes]],
    embed_batch,
    raw_inputs: list,
    advertised_id: str,
    cache_dir: Path | str | None,
    kind: str,
    batch_size: int,
) -> TokenIndex:
    # Content-addressed cache keyed by (embedder_id, content hash): a hit
    # means zero embedder calls for the whole build.
    cache_path = None
    if cache_dir is not None:
        fingerprint = _content_fingerprint(advertised_id, keyed_payloads)
        cache_path = Path(cache_dir) / f"{kind}_{fingerprint}.idx"
        if cache_path.exists():
            logger.info("index cache hit: %s", cache_path)
            return load_index(cache_path)

    matrices: list[np.ndarray] = []
    embedder_id: str | None = None
    for start in range(0, len(raw_inputs), batch_size):
        batch = raw_inputs[start : start + batch_size]
        batch_id, batch_mats = embed_batch(batch)
        if embedder_id is None:
            embedder_id = batch_id
        elif batch_id != embedder_id:
            raise EmbedderDimDrift(
                f"embedder identity changed mid-build: {embedder_id!r} -> {batch_id!r}"
            )
        matrices.extend(as_token_matrix(m) for m in batch_mats)

    assert embedder_id is not None
    dims = {m.shape[1] for m in matrices}
    if len(dims) > 1:
        raise EmbedderDimDrift(f"embedder returned mixed dims {sorted(dims)} in one build")
    index = TokenIndex(
        entries=[(key, mat) for (key, _), mat in zip(keyed_payloads, matrices)],
        embedder_id=embedder_id,
        dim=dims.pop(),
    )
    if cache_path is not None:
        save_index(index, cache_path)
    return index


def build_text_index(
    corpus: Corpus,
    embedder: EmbeddingClient,
    cache_dir: Path | str | None = None,
    batch_size: int = 32,
) -> TextIndex:
    """One token matrix per text segment in the corpus."""
    segments = list(corpus.iter_segments())
    if not segments:
        return TokenIndex(entries=[], embedder_id="<empty>", dim=0)
    keyed = [(seg.key, seg.content.encode("utf-8")) for seg in segments]
    return _build_index(
        keyed,
        embedder.embed_texts,
        [seg.content for seg in segments],
        embedder.text_embedder_id,
        cache_dir,
        "text",
        batch_size,
    )


def build_image_index(
    corpus: Corpus,
    embedder: EmbeddingClient,
    cache_dir: Path | str | None = None,
    batch_size: int = 8,
) -> ImageIndex:
    """One token matrix per page image in the corpus."""
    images = list(corpus.iter_page_images())
    if not images:
        return TokenIndex(entries=[], embedder_id="<empty>", dim=0)
    payloads = [img.file_ref.read_bytes() for img in images]
    keyed = [(img.key, payload) for img, payload in zip(images, payloads)]
    return _build_index(
        keyed,
        embedder.embed_images,
        payloads,
        embedder.image_embedder_id,
        cache_dir,
        "image",
        batch_size,
    )


@dataclass
class RetrievalResult:
    text_hits: list[tuple[TextSegment, float]]
    image_hits: list[tuple[PageImage, float]]
    k: int
    text_index_empty: bool = False
    image_index_empty: bool = False


def retrieve(
    question: str,
    corpus: Corpus,
    text_index: TextIndex,
    image_index: ImageIndex,
    k: int,
    embedder: EmbeddingClient,
) -> RetrievalResult:
    """Score every indexed item against the question, keep the top k per modality.

    The question is embedded once per modality. An empty index in either
    modality yields empty hits for it (with a warning flag), not a failure.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")

    text_hits: list[tuple[TextSegment, float]] = []
    text_empty = len(text_index) == 0
    if not text_empty:
        _, (query_mat,) = embedder.embed_texts([question])
        query_mat = as_token_matrix(query_mat)
        scored = [
            ScoredItem(key, late_interaction_score(query_mat, mat))
            for key, mat in text_index.entries
        ]
        text_hits = [(corpus.segment_by_key(s.key), s.score) for s in top_k(scored, k)]
    else:
        logger.warning("text index is empty; returning no text hits")

    image_hits: list[tuple[PageImage, float]] = []
    image_empty = len(image_index) == 0
    if not image_empty:
        _, (query_mat,) = embedder.embed_image_queries([question])
        query_mat = as_token_matrix(query_mat)
        scored = [
            ScoredItem(key, late_interaction_score(query_mat, mat))
            for key, mat in image_index.entries
        ]
        image_hits = [(corpus.page_image_by_key(s.key), s.score) for s in top_k(scored, k)]
    else:
        logger.warning("image index is empty; returning no image hits")

    return RetrievalResult(
        text_hits=text_hits,
        image_hits=image_hits,
        k=k,
        text_index_empty=text_empty,
        image_index_empty=image_empty,
    )
