"""OCR backends.

``RapidOcrBackend`` wraps rapidocr-onnxruntime (bundled ONNX weights, no
network). The engine is loaded lazily on first use so service startup stays
fast; recognition is CPU-only and deterministic.
"""

from __future__ import annotations

import io
import threading

from PIL import Image, UnidentifiedImageError

from .embedders import UndecodableImage


class OcrUnavailableError(RuntimeError):
    """No OCR engine could be loaded."""


class RapidOcrBackend:
    def __init__(self):
        self._engine = None
        self._lock = threading.Lock()

    def _load(self):
        with self._lock:
            if self._engine is None:
                try:
                    from rapidocr_onnxruntime import RapidOCR
                except ImportError as exc:  # pragma: no cover - env dependent
                    raise OcrUnavailableError(
                        "rapidocr-onnxruntime is not installed; "
                        "install the 'ocr' extra to enable /ocr"
                    ) from exc
                self._engine = RapidOCR()
        return self._engine

    def recognize(self, png: bytes) -> str:
        try:
            with Image.open(io.BytesIO(png)) as img:
                img.load()
                rgb = img.convert("RGB")
        except (UnidentifiedImageError, OSError) as exc:
            raise UndecodableImage(str(exc)) from exc
        import numpy as np

        result, _ = self._load()(np.asarray(rgb))
        if not result:
            return ""
        return "\n".join(text for _, text, _ in result)
