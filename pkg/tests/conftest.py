"""Shared fixtures: fixture PDFs, a deterministic stub embedder, and a
scripted chat gateway."""

from __future__ import annotations

import hashlib
import io
import json

import numpy as np
import pymupdf
import pytest
from PIL import Image

from docqa.gateway import ChatResult, GenerationParams, ModelEndpoint
from docqa.ingest import Corpus, Document, Page, PageImage, TextSegment
from docqa.pipeline import AgentConfig, AgentRole, PipelineConfig


# --- PDF fixtures -------------------------------------------------------------

def make_text_pdf(path, page_texts):
    """Write a PDF with one page per entry; each entry is a list of paragraphs."""
    doc = pymupdf.open()
    for paragraphs in page_texts:
        page = doc.new_page()
        y = 72
        for para in paragraphs:
            page.insert_text((72, y), para)
            y += 72
    doc.save(path)
    doc.close()
    return path


def make_image_only_pdf(path, text="Total: 42"):
    """A PDF whose single page is an image render of `text` (no embedded text)."""
    img = Image.new("RGB", (400, 120), "white")
    from PIL import ImageDraw, ImageFont

    draw = ImageDraw.Draw(img)
    try:
        font = ImageFont.truetype("/usr/share/fonts/truetype/dejavu/DejaVuSans.ttf", 40)
    except OSError:
        font = ImageFont.load_default()
    draw.text((30, 35), text, fill="black", font=font)
    buf = io.BytesIO()
    img.save(buf, format="PNG")

    doc = pymupdf.open()
    page = doc.new_page(width=400, height=120)
    page.insert_image(pymupdf.Rect(0, 0, 400, 120), stream=buf.getvalue())
    doc.save(path)
    doc.close()
    return path


# A syntactically valid PDF with zero pages (/Kids [] /Count 0).
ZERO_PAGE_PDF = b"""%PDF-1.4
1 0 obj
<< /Type /Catalog /Pages 2 0 R >>
endobj
2 0 obj
<< /Type /Pages /Kids [] /Count 0 >>
endobj
xref
0 3
0000000000 65535 f
0000000009 00000 n
0000000058 00000 n
trailer
<< /Size 3 /Root 1 0 R >>
startxref
110
%%EOF
"""

_PNG_1PX = None


def tiny_png() -> bytes:
    global _PNG_1PX
    if _PNG_1PX is None:
        buf = io.BytesIO()
        Image.new("RGB", (1, 1), "white").save(buf, format="PNG")
        _PNG_1PX = buf.getvalue()
    return _PNG_1PX


def make_synthetic_corpus(root, n_pages, segs_per_page=2, doc_id="doc"):
    """Fabricate a corpus directly on disk, bypassing PDF ingestion."""
    root = root / "corpus"
    doc_dir = root / doc_id
    doc_dir.mkdir(parents=True)
    pages = []
    seg_lines = []
    for pi in range(n_pages):
        png_path = doc_dir / f"page_{pi}.png"
        png_path.write_bytes(tiny_png())
        segments = []
        for si in range(segs_per_page):
            seg = TextSegment(doc_id, pi, si, f"page {pi} segment {si} content")
            segments.append(seg)
            seg_lines.append(
                json.dumps(
                    {
                        "doc_id": doc_id,
                        "page_index": pi,
                        "segment_index": si,
                        "content": seg.content,
                    }
                )
            )
        image = PageImage(doc_id, pi, png_path, 1, 1, 144)
        pages.append(Page(doc_id=doc_id, index=pi, segments=segments, image=image))
    (doc_dir / "segments.jsonl").write_text("\n".join(seg_lines) + "\n")
    manifest_path = root / "manifest.json"
    manifest_path.write_text(
        json.dumps(
            {
                "documents": [
                    {
                        "doc_id": doc_id,
                        "source_path": "synthetic.pdf",
                        "page_count": n_pages,
                        "render_dpi": 144,
                        "pages": [{"index": p.index, "width": 1, "height": 1} for p in pages],
                    }
                ]
            }
        )
    )
    doc = Document(id=doc_id, source_path=root / "synthetic.pdf", pages=pages)
    return Corpus(documents=[doc], manifest_path=manifest_path)


# --- stub embedder ------------------------------------------------------------

class StubEmbedder:
    """Deterministic embedder: matrices derived from a content hash.

    `overrides` maps exact payloads (str for texts, bytes for images) to
    fixed matrices, letting tests plant known-relevant items.
    """

    text_embedder_id = "stub-text-v1"
    image_embedder_id = "stub-image-v1"

    def __init__(self, dim=8, rows=3, overrides=None):
        self.dim = dim
        self.rows = rows
        self.overrides = overrides or {}
        self.text_calls = 0
        self.image_calls = 0
        self.image_query_calls = 0

    def _mat(self, payload: bytes, salt: bytes = b"") -> np.ndarray:
        key = payload if isinstance(payload, bytes) else payload
        digest = hashlib.sha256(salt + key).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
        mat = rng.standard_normal((self.rows, self.dim)).astype(np.float32)
        return mat / np.linalg.norm(mat, axis=1, keepdims=True)

    def _lookup(self, raw, payload: bytes, salt: bytes) -> np.ndarray:
        if raw in self.overrides:
            return np.asarray(self.overrides[raw], dtype=np.float32)
        return self._mat(payload, salt)

    def embed_texts(self, texts):
        self.text_calls += 1
        return self.text_embedder_id, [
            self._lookup(t, t.encode("utf-8"), b"text:") for t in texts
        ]

    def embed_images(self, pngs):
        self.image_calls += 1
        return self.image_embedder_id, [self._lookup(p, p, b"image:") for p in pngs]

    def embed_image_queries(self, texts):
        self.image_query_calls += 1
        return self.image_embedder_id, [
            self._lookup(("imgq", t), t.encode("utf-8"), b"imgq:") for t in texts
        ]


# --- scripted gateway ---------------------------------------------------------

class ScriptedGateway:
    """Chat gateway double keyed on endpoint model_name.

    Script values are either a single reply (returned every call) or a list
    consumed one reply per call. Every request is recorded for assertions.
    """

    def __init__(self, script: dict):
        self.script = {
            name: list(v) if isinstance(v, list) else [v] for name, v in script.items()
        }
        self.calls: list[tuple[str, list, GenerationParams]] = []

    def chat_complete(self, endpoint, messages, params) -> ChatResult:
        self.calls.append((endpoint.model_name, messages, params))
        replies = self.script[endpoint.model_name]
        reply = replies.pop(0) if len(replies) > 1 else replies[0]
        return ChatResult(text=reply, retry_count=0, latency=0.0, status=200)

    def call_sequence(self) -> list[str]:
        return [name for name, _, _ in self.calls]

    def user_text(self, call_index: int) -> str:
        """Concatenated text parts of the user message of call N."""
        from docqa.gateway import TextPart

        _, messages, _ = self.calls[call_index]
        user = [m for m in messages if m.role == "user"][0]
        return "\n".join(p.text for p in user.parts if isinstance(p, TextPart))


def make_agent_configs(max_new_tokens=256) -> dict:
    configs = {}
    for role in AgentRole:
        configs[role] = AgentConfig(
            role=role,
            endpoint=ModelEndpoint(base_url="http://stub.local/v1", model_name=role.value),
            params=GenerationParams(max_new_tokens=max_new_tokens),
        )
    return configs


DEFAULT_SCRIPT = {
    "general": "prelim answer",
    "critical": '{"text": "see table 3", "image": "page 2 chart"}',
    "text": "text agent answer",
    "image": "image agent answer",
    "summarizing": '{"Answer": "the final answer"}',
}


@pytest.fixture
def agent_configs():
    return make_agent_configs()


@pytest.fixture
def pipeline_config(agent_configs):
    return PipelineConfig(agents=agent_configs, k=2)


@pytest.fixture
def stub_embedder():
    return StubEmbedder()
