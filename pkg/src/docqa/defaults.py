"""Pinned default hyperparameters.

These are the shipped defaults for generation and ingestion; every one of
them can be overridden per run through the config file.
"""

# Generation
DEFAULT_MAX_NEW_TOKENS = 256

# Pages are rendered to PNG at this resolution.
DEFAULT_RENDER_DPI = 144

# Retrieval depth: the engine is tuned for top-1 and top-4 contexts.
SUPPORTED_TOP_K = (1, 4)
DEFAULT_TOP_K = 1

# Provider-defined image token budget, passed through opaquely when set.
# Keyed by retrieval depth.
DEFAULT_MAX_TOKENS_PER_IMAGE = {1: 16384, 4: 2048}
