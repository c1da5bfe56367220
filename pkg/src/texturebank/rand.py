"""Named random streams derived from one 64-bit master seed.

Every component that needs randomness asks for a stream by name
("gmm-init", "synth/checker/train/3", ...) so that runs are reproducible
component-by-component and adding a consumer does not shift the others.
"""

from __future__ import annotations

import zlib

import numpy as np


def rng_stream(seed: int, name: str) -> np.random.Generator:
    """Generator for the stream `name` under the master `seed`."""
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(key,)))
