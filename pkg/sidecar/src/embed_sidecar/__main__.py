"""Service entry point: ``embed-sidecar --embedder hash --port 8901``."""

from __future__ import annotations

import argparse

from .app import Settings, create_app
from .embedders import BACKENDS


def main() -> None:
    parser = argparse.ArgumentParser(description="embedding/OCR sidecar")
    parser.add_argument("--embedder", default="hash", choices=sorted(BACKENDS))
    parser.add_argument("--dim", type=int, default=64)
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8901)
    parser.add_argument("--device", default="cpu", help="accepted for backend parity; the hash backend ignores it")
    parser.add_argument("--max-payload-bytes", type=int, default=32 * 1024 * 1024)
    parser.add_argument("--queue-depth", type=int, default=16)
    parser.add_argument("--no-ocr", action="store_true")
    args = parser.parse_args()

    import uvicorn

    app = create_app(
        Settings(
            embedder=args.embedder,
            dim=args.dim,
            max_payload_bytes=args.max_payload_bytes,
            queue_depth=args.queue_depth,
            enable_ocr=not args.no_ocr,
        )
    )
    uvicorn.run(app, host=args.host, port=args.port)


if __name__ == "__main__":
    main()
