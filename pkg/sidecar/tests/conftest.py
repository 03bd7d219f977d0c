"""Shared fixtures: a test client over the hash backend and PNG helpers."""

from __future__ import annotations

import base64
import io

import pytest
from fastapi.testclient import TestClient
from PIL import Image, ImageDraw, ImageFont

from embed_sidecar.app import Settings, create_app


def png_bytes(width=64, height=64, color="white") -> bytes:
    buf = io.BytesIO()
    Image.new("RGB", (width, height), color).save(buf, format="PNG")
    return buf.getvalue()


def text_png(text="Total: 42", width=400, height=120) -> bytes:
    img = Image.new("RGB", (width, height), "white")
    draw = ImageDraw.Draw(img)
    try:
        font = ImageFont.truetype(
            "/usr/share/fonts/truetype/dejavu/DejaVuSans.ttf", 40
        )
    except OSError:
        font = ImageFont.load_default()
    draw.text((30, 35), text, fill="black", font=font)
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def b64(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


class StubOcr:
    """Instant OCR double for service-shape tests."""

    def __init__(self, reply="stub transcript"):
        self.reply = reply
        self.images: list[bytes] = []

    def recognize(self, png: bytes) -> str:
        from embed_sidecar.embedders import UndecodableImage

        try:
            Image.open(io.BytesIO(png)).load()
        except OSError as exc:
            raise UndecodableImage(str(exc)) from exc
        self.images.append(png)
        return self.reply


@pytest.fixture
def client():
    app = create_app(Settings(dim=16), ocr=StubOcr())
    return TestClient(app)
