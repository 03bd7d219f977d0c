"""Exception hierarchy shared across the engine."""

from __future__ import annotations


class DocQAError(Exception):
    """Base class for all engine errors."""


# --- ingestion ---

class UnreadablePdf(DocQAError):
    """Source file is corrupt, encrypted, or not a PDF."""


class NoPages(DocQAError):
    """PDF contains zero pages."""


class OcrUnavailable(DocQAError):
    """A page carries images but no embedded text and no OCR client is configured."""

    def __init__(self, page_index: int):
        self.page_index = page_index
        super().__init__(f"page {page_index} has no embedded text and no OCR client is configured")


class RenderFailure(DocQAError):
    """A single page failed to rasterize."""

    def __init__(self, page_index: int, reason: str):
        self.page_index = page_index
        super().__init__(f"failed to render page {page_index}: {reason}")


class DuplicateDocId(DocQAError):
    """Manifest lists the same document id twice."""


class IngestError(DocQAError):
    """Per-document ingestion failure, annotated with the offending doc id."""

    def __init__(self, doc_id: str, cause: Exception):
        self.doc_id = doc_id
        self.cause = cause
        super().__init__(f"ingest failed for document {doc_id!r}: {cause}")


# --- retrieval ---

class DimensionMismatch(DocQAError):
    """Query and item token matrices have different embedding dims."""


class EmbedderDimDrift(DocQAError):
    """Embedder returned matrices of different dims within one index build."""


class EmbedderUnreachable(DocQAError):
    """Embedding sidecar could not be reached."""


# --- gateway ---

class TransportError(DocQAError):
    """Network failure persisting after all retries."""


class ApiError(DocQAError):
    """Non-retryable HTTP error from a model endpoint."""

    def __init__(self, status: int, body: str):
        self.status = status
        self.body = body
        super().__init__(f"endpoint returned HTTP {status}: {body[:500]}")


class EmptyCompletion(DocQAError):
    """Endpoint replied successfully but with no assistant content."""


class ShapeError(DocQAError):
    """Embedding response has a zero-row matrix or inconsistent dims."""


# --- structured output parsing ---

class ParseMiss(DocQAError):
    """No balanced JSON object with the expected shape found in a model reply."""


class CriticalParseFailure(DocQAError):
    """Critical-agent reply unparseable even after retry and fallback."""


class JudgeParseFailure(DocQAError):
    """Judge reply unparseable after the format-reminder retry."""


# --- configuration / harness ---

class ConfigInvalid(DocQAError):
    """Run configuration failed validation; `field` holds the dotted path."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class ItemSetMismatch(DocQAError):
    """Benchmark reports being compared cover different item sets."""
