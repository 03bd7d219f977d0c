"""Document ingestion: PDFs into per-page text segments plus page images.

Every source document is kept in two parallel forms: the text of each page,
split into paragraph segments, and a PNG render of each page. Both are
persisted under a corpus directory with stable, reproducible identifiers.

Corpus directory layout::

    manifest.json                 document list + page/image metadata
    <doc_id>/segments.jsonl       one JSON object per text segment
    <doc_id>/page_<index>.png     rendered pages
"""

from __future__ import annotations

import json
import logging
import os
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import pymupdf

from .defaults import DEFAULT_RENDER_DPI
from .errors import (
    DuplicateDocId,
    IngestError,
    NoPages,
    OcrUnavailable,
    RenderFailure,
    UnreadablePdf,
)

logger = logging.getLogger(__name__)

_BLANK_LINES = re.compile(r"\n[ \t]*\n+")


class OcrClient(Protocol):
    """Anything that can transcribe a rendered page (PNG bytes) to text."""

    def recognize(self, png: bytes) -> str: ...


@dataclass(frozen=True)
class TextSegment:
    doc_id: str
    page_index: int
    segment_index: int
    content: str

    @property
    def key(self) -> tuple[str, int, int]:
        return (self.doc_id, self.page_index, self.segment_index)


@dataclass(frozen=True)
class PageImage:
    doc_id: str
    page_index: int
    file_ref: Path
    width: int
    height: int
    render_dpi: int

    @property
    def key(self) -> tuple[str, int]:
        return (self.doc_id, self.page_index)


@dataclass
class Page:
    doc_id: str
    index: int
    segments: list[TextSegment]
    image: PageImage


@dataclass
class Document:
    id: str
    source_path: Path
    pages: list[Page]


@dataclass
class Corpus:
    documents: list[Document]
    manifest_path: Path

    @property
    def root(self) -> Path:
        return self.manifest_path.parent

    def iter_segments(self):
        for doc in self.documents:
            for page in doc.pages:
                yield from page.segments

    def iter_page_images(self):
        for doc in self.documents:
            for page in doc.pages:
                yield page.image

    def segment_by_key(self, key: tuple[str, int, int]) -> TextSegment:
        return self._segment_map()[tuple(key)]

    def page_image_by_key(self, key: tuple[str, int]) -> PageImage:
        return self._image_map()[tuple(key)]

    def _segment_map(self) -> dict:
        if not hasattr(self, "_segments_cache"):
            self._segments_cache = {s.key: s for s in self.iter_segments()}
        return self._segments_cache

    def _image_map(self) -> dict:
        if not hasattr(self, "_images_cache"):
            self._images_cache = {p.key: p for p in self.iter_page_images()}
        return self._images_cache


def _open_pdf(source: Path) -> pymupdf.Document:
    try:
        doc = pymupdf.open(source)
    except Exception as exc:
        raise UnreadablePdf(f"{source}: {exc}") from exc
    if doc.needs_pass:
        doc.close()
        raise UnreadablePdf(f"{source}: encrypted")
    return doc


def _page_text(page: pymupdf.Page) -> str:
    # Join text blocks with blank lines so layout blocks survive as paragraphs.
    blocks = page.get_text("blocks")
    parts = [b[4].strip() for b in blocks if b[6] == 0 and b[4].strip()]
    return "\n\n".join(parts)


def extract_text(source: Path | str, ocr: OcrClient | None = None) -> list[tuple[int, str]]:
    """Extract raw text per page, falling back to OCR for image-only pages.

    Embedded (digitally encoded) text is preferred. When a page has no
    embedded text but does contain images, the rendered page is sent to the
    OCR client; without one, OcrUnavailable is raised. Pages with neither
    text nor images (genuinely blank) yield an empty string.
    """
    source = Path(source)
    doc = _open_pdf(source)
    try:
        if doc.page_count == 0:
            raise NoPages(str(source))
        out: list[tuple[int, str]] = []
        for page in doc:
            text = _page_text(page)
            if not text and page.get_images(full=True):
                if ocr is None:
                    raise OcrUnavailable(page.number)
                png = page.get_pixmap(dpi=DEFAULT_RENDER_DPI).tobytes("png")
                text = ocr.recognize(png).strip()
            out.append((page.number, text))
        return out
    finally:
        doc.close()


def segment_page_text(raw: str) -> list[str]:
    """Split page text into paragraph segments on runs of blank lines."""
    pieces = _BLANK_LINES.split(raw)
    return [p for p in (piece.strip() for piece in pieces) if p]


def rasterize_pages(
    source: Path | str,
    out_dir: Path | str,
    doc_id: str,
    dpi: int = DEFAULT_RENDER_DPI,
) -> list[PageImage]:
    """Render every page to ``<out_dir>/<doc_id>/page_<index>.png``."""
    if dpi <= 0:
        raise ValueError(f"dpi must be positive, got {dpi}")
    source = Path(source)
    doc_dir = Path(out_dir) / doc_id
    doc_dir.mkdir(parents=True, exist_ok=True)
    doc = _open_pdf(source)
    try:
        if doc.page_count == 0:
            raise NoPages(str(source))
        images: list[PageImage] = []
        for page in doc:
            try:
                pix = page.get_pixmap(dpi=dpi)
                png = pix.tobytes("png")
            except Exception as exc:
                raise RenderFailure(page.number, str(exc)) from exc
            path = doc_dir / f"page_{page.number}.png"
            path.write_bytes(png)
            images.append(
                PageImage(
                    doc_id=doc_id,
                    page_index=page.number,
                    file_ref=path,
                    width=pix.width,
                    height=pix.height,
                    render_dpi=dpi,
                )
            )
        return images
    finally:
        doc.close()


def _read_manifest_entries(manifest: Path) -> list[tuple[str, Path]]:
    with open(manifest, encoding="utf-8") as fh:
        raw = json.load(fh)
    entries = []
    seen: set[str] = set()
    for item in raw:
        doc_id, pdf_path = item["doc_id"], Path(item["pdf_path"])
        if doc_id in seen:
            raise DuplicateDocId(doc_id)
        seen.add(doc_id)
        if not pdf_path.is_absolute():
            pdf_path = manifest.parent / pdf_path
        entries.append((doc_id, pdf_path))
    return entries


class _CorpusLock:
    """Advisory lock so only one ingest writes a corpus directory at a time."""

    def __init__(self, root: Path):
        self.path = root / ".ingest.lock"

    def __enter__(self):
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise IngestError(
                "<corpus>", RuntimeError(f"corpus directory locked by another ingest ({self.path})")
            ) from None
        os.close(fd)
        return self

    def __exit__(self, *exc):
        self.path.unlink(missing_ok=True)
        return False


def build_corpus(
    manifest: Path | str,
    out_dir: Path | str,
    dpi: int = DEFAULT_RENDER_DPI,
    ocr: OcrClient | None = None,
) -> Corpus:
    """Ingest every document listed in the manifest into ``out_dir``.

    The input manifest is a JSON list of ``{"doc_id": ..., "pdf_path": ...}``
    objects; relative paths resolve against the manifest's directory.
    """
    manifest = Path(manifest)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = _read_manifest_entries(manifest)

    with _CorpusLock(out_dir):
        documents = []
        manifest_docs = []
        for doc_id, pdf_path in entries:
            try:
                page_texts = extract_text(pdf_path, ocr=ocr)
                images = rasterize_pages(pdf_path, out_dir, doc_id, dpi=dpi)
            except Exception as exc:
                raise IngestError(doc_id, exc) from exc

            pages = []
            seg_lines = []
            for (index, raw), image in zip(page_texts, images):
                segments = [
                    TextSegment(doc_id, index, si, content)
                    for si, content in enumerate(segment_page_text(raw))
                ]
                for seg in segments:
                    seg_lines.append(
                        json.dumps(
                            {
                                "doc_id": seg.doc_id,
                                "page_index": seg.page_index,
                                "segment_index": seg.segment_index,
                                "content": seg.content,
                            },
                            ensure_ascii=False,
                        )
                    )
                pages.append(Page(doc_id=doc_id, index=index, segments=segments, image=image))

            seg_path = out_dir / doc_id / "segments.jsonl"
            seg_path.parent.mkdir(parents=True, exist_ok=True)
            seg_path.write_text("\n".join(seg_lines) + ("\n" if seg_lines else ""), encoding="utf-8")

            documents.append(Document(id=doc_id, source_path=pdf_path, pages=pages))
            manifest_docs.append(
                {
                    "doc_id": doc_id,
                    "source_path": str(pdf_path),
                    "page_count": len(pages),
                    "render_dpi": dpi,
                    "pages": [
                        {"index": p.index, "width": p.image.width, "height": p.image.height}
                        for p in pages
                    ],
                }
            )
            logger.info("ingested %s: %d pages", doc_id, len(pages))

        manifest_path = out_dir / "manifest.json"
        manifest_path.write_text(
            json.dumps({"documents": manifest_docs}, indent=2, ensure_ascii=False) + "\n",
            encoding="utf-8",
        )
    return Corpus(documents=documents, manifest_path=manifest_path)


def load_corpus(corpus_dir: Path | str) -> Corpus:
    """Load a previously ingested corpus directory."""
    corpus_dir = Path(corpus_dir)
    manifest_path = corpus_dir / "manifest.json"
    with open(manifest_path, encoding="utf-8") as fh:
        manifest = json.load(fh)

    documents = []
    for doc_entry in manifest["documents"]:
        doc_id = doc_entry["doc_id"]
        dpi = doc_entry["render_dpi"]
        segments_by_page: dict[int, list[TextSegment]] = {}
        seg_path = corpus_dir / doc_id / "segments.jsonl"
        if seg_path.exists():
            for line in seg_path.read_text(encoding="utf-8").splitlines():
                if not line.strip():
                    continue
                rec = json.loads(line)
                seg = TextSegment(
                    rec["doc_id"], rec["page_index"], rec["segment_index"], rec["content"]
                )
                segments_by_page.setdefault(seg.page_index, []).append(seg)

        pages = []
        for page_entry in doc_entry["pages"]:
            index = page_entry["index"]
            image = PageImage(
                doc_id=doc_id,
                page_index=index,
                file_ref=corpus_dir / doc_id / f"page_{index}.png",
                width=page_entry["width"],
                height=page_entry["height"],
                render_dpi=dpi,
            )
            pages.append(
                Page(
                    doc_id=doc_id,
                    index=index,
                    segments=sorted(
                        segments_by_page.get(index, []), key=lambda s: s.segment_index
                    ),
                    image=image,
                )
            )
        documents.append(
            Document(id=doc_id, source_path=Path(doc_entry["source_path"]), pages=pages)
        )
    return Corpus(documents=documents, manifest_path=manifest_path)
