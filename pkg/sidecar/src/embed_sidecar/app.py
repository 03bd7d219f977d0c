"""The HTTP service: /v1/embed/text, /v1/embed/image, /v1/ocr, /v1/health.

Matrices travel as nested JSON float arrays. Requests queue onto a single
model worker behind a bounded admission semaphore: when the queue is full
the service answers 429 rather than buffering without limit. Status codes:
413 payload too large, 422 undecodable input, 503 model not ready.
"""

from __future__ import annotations

import base64
import binascii
import threading
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Literal

import numpy as np
from fastapi import FastAPI, HTTPException, Request
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from .embedders import UndecodableImage, build_embedder
from .ocr import OcrUnavailableError, RapidOcrBackend


@dataclass
class Settings:
    embedder: str = "hash"
    dim: int = 64
    max_payload_bytes: int = 32 * 1024 * 1024
    queue_depth: int = 16
    enable_ocr: bool = True


class TextEmbedRequest(BaseModel):
    texts: list[str] = Field(min_length=1)
    space: Literal["text", "image"] = "text"


class ImageEmbedRequest(BaseModel):
    images: list[str] = Field(min_length=1)


class OcrRequest(BaseModel):
    image: str


def _decode_b64(payload: str) -> bytes:
    try:
        return base64.b64decode(payload, validate=True)
    except (binascii.Error, ValueError) as exc:
        raise HTTPException(422, f"undecodable base64 payload: {exc}") from exc


def _matrices_json(matrices: list[np.ndarray]) -> list[list[list[float]]]:
    return [m.astype(float).tolist() for m in matrices]


def create_app(
    settings: Settings | None = None,
    embedder=None,
    ocr=None,
    ready: bool = True,
) -> FastAPI:
    """Build the service. ``embedder``/``ocr`` override the configured
    backends (used by tests); ``ready=False`` simulates a model still loading."""
    settings = settings or Settings()
    app = FastAPI(title="embed-sidecar", version="1")
    state = app.state
    state.embedder = embedder or (build_embedder(settings.embedder, settings.dim) if ready else None)
    state.ocr = ocr if ocr is not None else (RapidOcrBackend() if settings.enable_ocr else None)
    state.worker_lock = threading.Lock()  # single model worker
    state.admission = threading.BoundedSemaphore(max(settings.queue_depth, 1)) \
        if settings.queue_depth > 0 else None

    def require_ready():
        if state.embedder is None:
            raise HTTPException(503, "model not ready")
        return state.embedder

    @contextmanager
    def slot():
        if state.admission is None or not state.admission.acquire(blocking=False):
            raise HTTPException(429, "request queue full")
        try:
            with state.worker_lock:
                yield
        finally:
            state.admission.release()

    @app.middleware("http")
    async def payload_cap(request: Request, call_next):
        length = request.headers.get("content-length")
        if length and int(length) > settings.max_payload_bytes:
            return JSONResponse({"detail": "payload too large"}, status_code=413)
        return await call_next(request)

    @app.get("/v1/health")
    def health():
        if state.embedder is None:
            return JSONResponse({"status": "loading"}, status_code=503)
        emb = state.embedder
        return {
            "status": "ok",
            "embedder_id": emb.embedder_id,
            "dim": emb.dim,
            "text_embedder_id": emb.text_embedder_id,
            "image_embedder_id": emb.image_embedder_id,
        }

    @app.post("/v1/embed/text")
    def embed_text(req: TextEmbedRequest):
        emb = require_ready()
        with slot():
            matrices = emb.embed_texts(req.texts, space=req.space)
        embedder_id = emb.text_embedder_id if req.space == "text" else emb.image_embedder_id
        return {
            "embedder_id": embedder_id,
            "dim": emb.dim,
            "matrices": _matrices_json(matrices),
        }

    @app.post("/v1/embed/image")
    def embed_image(req: ImageEmbedRequest):
        emb = require_ready()
        pngs = [_decode_b64(img) for img in req.images]
        try:
            with slot():
                matrices = emb.embed_images(pngs)
        except UndecodableImage as exc:
            raise HTTPException(422, f"undecodable image: {exc}") from exc
        return {
            "embedder_id": emb.image_embedder_id,
            "dim": emb.dim,
            "matrices": _matrices_json(matrices),
        }

    @app.post("/v1/ocr")
    def ocr_endpoint(req: OcrRequest):
        if state.ocr is None:
            raise HTTPException(503, "OCR backend disabled")
        png = _decode_b64(req.image)
        try:
            with slot():
                text = state.ocr.recognize(png)
        except UndecodableImage as exc:
            raise HTTPException(422, f"undecodable image: {exc}") from exc
        except OcrUnavailableError as exc:
            raise HTTPException(503, str(exc)) from exc
        return {"text": text}

    return app
