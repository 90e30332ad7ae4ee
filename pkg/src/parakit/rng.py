"""Deterministic random-stream derivation.

One global seed drives the whole pipeline.  Each component draws from its own
substream so that, for example, adding an extra corruption pass can never
shift the initialization of the model.  Substream ids are derived from the
component name with a stable hash (not Python's salted ``hash``), so streams
are reproducible across processes and platforms.
"""

import hashlib

import numpy as np


def stream_id(name: str) -> int:
    """Stable 64-bit id for a component name."""
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def component_rng(seed: int, name: str) -> np.random.Generator:
    """Generator for the substream ``name`` under a global ``seed``."""
    return np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, stream_id(name)])
