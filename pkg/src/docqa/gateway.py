"""Network access to model services.

Two clients live here: an OpenAI-compatible chat-completions client carrying
text and inline base64 image parts, and a client for the embedding/OCR
sidecar. Both retry transient failures (HTTP 429/5xx, timeouts) with
exponential backoff and never write secrets into logs or results.
"""

from __future__ import annotations

import base64
import io
import logging
import os
import random
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import httpx
import numpy as np
from PIL import Image

from .defaults import DEFAULT_MAX_NEW_TOKENS
from .errors import ApiError, EmptyCompletion, ShapeError, TransportError
from .retrieval import as_token_matrix

logger = logging.getLogger(__name__)

RETRYABLE_STATUSES = frozenset({429, 500, 502, 503, 504})


@dataclass(frozen=True)
class ModelEndpoint:
    base_url: str
    model_name: str
    api_key_env: str | None = None
    timeout: float = 120.0
    max_retries: int = 2
    # Longest image edge in pixels; images are downscaled before encoding.
    max_image_edge: int | None = None
    # Provider-defined passthrough knobs (e.g. image token budgets), sent verbatim.
    extra_body: dict = field(default_factory=dict, hash=False)

    def __post_init__(self):
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")
        httpx.URL(self.base_url)  # raises on an unparseable URL

    def api_key(self) -> str | None:
        return os.environ.get(self.api_key_env) if self.api_key_env else None


@dataclass(frozen=True)
class TextPart:
    text: str


@dataclass(frozen=True)
class ImagePart:
    png_base64: str
    media_type: str = "image/png"

    @classmethod
    def from_bytes(cls, png: bytes) -> "ImagePart":
        return cls(png_base64=base64.b64encode(png).decode("ascii"))


@dataclass(frozen=True)
class ChatMessage:
    role: str  # system | user | assistant
    parts: tuple

    def __post_init__(self):
        if self.role not in ("system", "user", "assistant"):
            raise ValueError(f"invalid role {self.role!r}")
        if not self.parts:
            raise ValueError("message must have at least one part")
        if self.role != "user" and any(isinstance(p, ImagePart) for p in self.parts):
            raise ValueError("image parts are only allowed in user messages")

    @classmethod
    def text(cls, role: str, text: str) -> "ChatMessage":
        return cls(role=role, parts=(TextPart(text),))


@dataclass(frozen=True)
class GenerationParams:
    max_new_tokens: int = DEFAULT_MAX_NEW_TOKENS
    temperature: float | None = None

    def __post_init__(self):
        if self.max_new_tokens < 1:
            raise ValueError("max_new_tokens must be >= 1")


@dataclass
class ChatResult:
    text: str
    retry_count: int
    latency: float
    status: int


def downscale_png(png: bytes, max_edge: int) -> bytes:
    """Shrink an image so its longest edge is at most ``max_edge`` pixels."""
    img = Image.open(io.BytesIO(png))
    if max(img.size) <= max_edge:
        return png
    img.thumbnail((max_edge, max_edge), Image.LANCZOS)
    out = io.BytesIO()
    img.save(out, format="PNG")
    return out.getvalue()


def image_part_for(path: Path | str, max_edge: int | None = None) -> ImagePart:
    """Load a PNG from disk, downscale if configured, and wrap as a message part."""
    png = Path(path).read_bytes()
    if max_edge is not None:
        png = downscale_png(png, max_edge)
    return ImagePart.from_bytes(png)


def _wire_message(msg: ChatMessage) -> dict:
    content = []
    for part in msg.parts:
        if isinstance(part, TextPart):
            content.append({"type": "text", "text": part.text})
        else:
            content.append(
                {
                    "type": "image_url",
                    "image_url": {"url": f"data:{part.media_type};base64,{part.png_base64}"},
                }
            )
    return {"role": msg.role, "content": content}


class _RetryingPoster:
    """Shared POST-with-backoff core for both clients."""

    def __init__(
        self,
        client: httpx.Client | None = None,
        sleep: Callable[[float], None] = time.sleep,
        backoff_base: float = 0.5,
        rng: random.Random | None = None,
    ):
        self._client = client or httpx.Client()
        self._sleep = sleep
        self._backoff_base = backoff_base
        self._rng = rng or random.Random()

    def post(
        self,
        url: str,
        payload: dict,
        headers: dict,
        timeout: float,
        max_retries: int,
    ) -> tuple[httpx.Response, int]:
        """POST with retries on 429/5xx/timeouts; returns (response, retry_count)."""
        last_error: Exception | None = None
        for attempt in range(max_retries + 1):
            if attempt:
                delay = self._backoff_base * (2 ** (attempt - 1))
                self._sleep(delay * (1 + self._rng.random() * 0.1))
            try:
                resp = self._client.post(url, json=payload, headers=headers, timeout=timeout)
            except (httpx.TimeoutException, httpx.TransportError) as exc:
                last_error = exc
                logger.warning("transport failure on %s (attempt %d): %s", url, attempt + 1, exc)
                continue
            if resp.status_code in RETRYABLE_STATUSES:
                last_error = ApiError(resp.status_code, resp.text)
                logger.warning("retryable HTTP %d from %s (attempt %d)", resp.status_code, url, attempt + 1)
                continue
            return resp, attempt
        raise TransportError(f"{url}: gave up after {max_retries + 1} attempts: {last_error}")


class ChatGateway:
    """Stateless OpenAI-compatible chat-completions client."""

    def __init__(
        self,
        client: httpx.Client | None = None,
        sleep: Callable[[float], None] = time.sleep,
        rng: random.Random | None = None,
        backoff_base: float = 0.5,
    ):
        self._poster = _RetryingPoster(client, sleep, backoff_base, rng)

    def chat_complete(
        self,
        endpoint: ModelEndpoint,
        messages: list[ChatMessage],
        params: GenerationParams,
    ) -> ChatResult:
        if not messages:
            raise ValueError("messages must be non-empty")
        payload = {
            "model": endpoint.model_name,
            "messages": [_wire_message(m) for m in messages],
            "max_tokens": params.max_new_tokens,
        }
        if params.temperature is not None:
            payload["temperature"] = params.temperature
        payload.update(endpoint.extra_body)

        headers = {}
        key = endpoint.api_key()
        if key:
            headers["Authorization"] = f"Bearer {key}"

        start = time.monotonic()
        resp, retry_count = self._poster.post(
            f"{endpoint.base_url.rstrip('/')}/chat/completions",
            payload,
            headers,
            endpoint.timeout,
            endpoint.max_retries,
        )
        latency = time.monotonic() - start
        if resp.status_code != 200:
            raise ApiError(resp.status_code, resp.text)
        body = resp.json()
        try:
            content = body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise EmptyCompletion(f"malformed completion body: {exc}") from exc
        if not content or not str(content).strip():
            raise EmptyCompletion("assistant returned empty content")
        return ChatResult(text=str(content), retry_count=retry_count, latency=latency, status=200)


class SidecarClient:
    """Client for the embedding/OCR sidecar (token matrices and transcripts)."""

    def __init__(
        self,
        base_url: str,
        client: httpx.Client | None = None,
        timeout: float = 120.0,
        max_retries: int = 2,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self.max_retries = max_retries
        self._poster = _RetryingPoster(client, sleep)
        self._health: dict | None = None

    def _post(self, route: str, payload: dict) -> dict:
        resp, _ = self._poster.post(
            f"{self.base_url}{route}", payload, {}, self.timeout, self.max_retries
        )
        if resp.status_code != 200:
            raise ApiError(resp.status_code, resp.text)
        return resp.json()

    def health(self) -> dict:
        if self._health is None:
            try:
                resp = self._poster._client.get(f"{self.base_url}/health", timeout=self.timeout)
            except httpx.HTTPError as exc:
                raise TransportError(f"sidecar health check failed: {exc}") from exc
            if resp.status_code != 200:
                raise ApiError(resp.status_code, resp.text)
            self._health = resp.json()
        return self._health

    @property
    def text_embedder_id(self) -> str:
        return self.health()["text_embedder_id"]

    @property
    def image_embedder_id(self) -> str:
        return self.health()["image_embedder_id"]

    def _parse_matrices(self, body: dict, expected: int) -> tuple[str, list[np.ndarray]]:
        matrices = body["matrices"]
        dim = body["dim"]
        if len(matrices) != expected:
            raise ShapeError(f"expected {expected} matrices, got {len(matrices)}")
        out = []
        for m in matrices:
            if not m:
                raise ShapeError("embedder returned a 0-row matrix")
            mat = as_token_matrix(m)
            if mat.shape[1] != dim:
                raise ShapeError(f"matrix dim {mat.shape[1]} differs from response dim {dim}")
            out.append(mat)
        return body["embedder_id"], out

    def embed_texts(self, texts: list[str]) -> tuple[str, list[np.ndarray]]:
        if not texts:
            raise ValueError("batch must be non-empty")
        body = self._post("/embed/text", {"texts": texts})
        return self._parse_matrices(body, len(texts))

    def embed_image_queries(self, texts: list[str]) -> tuple[str, list[np.ndarray]]:
        if not texts:
            raise ValueError("batch must be non-empty")
        body = self._post("/embed/text", {"texts": texts, "space": "image"})
        return self._parse_matrices(body, len(texts))

    def embed_images(self, pngs: list[bytes]) -> tuple[str, list[np.ndarray]]:
        if not pngs:
            raise ValueError("batch must be non-empty")
        payload = {"images": [base64.b64encode(p).decode("ascii") for p in pngs]}
        body = self._post("/embed/image", payload)
        return self._parse_matrices(body, len(pngs))

    def recognize(self, png: bytes) -> str:
        body = self._post("/ocr", {"image": base64.b64encode(png).decode("ascii")})
        return body["text"]
