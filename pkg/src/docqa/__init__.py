"""Multi-agent retrieval-augmented question answering over long documents."""

__version__ = "0.1.0"
