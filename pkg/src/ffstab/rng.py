"""Deterministic random streams.

Every random draw in the package comes from :func:`stream`, keyed by the run
seed plus a tuple of labels (module, operation, cell). Streams for different
labels are independent, and a stream does not depend on how work is scheduled
across threads.
"""

from __future__ import annotations

import zlib

import numpy as np


def _label_word(label) -> int:
    return zlib.crc32(repr(label).encode("utf-8"))


def stream(seed: int, *labels) -> np.random.Generator:
    """Return a Philox generator for ``(seed, *labels)``."""
    seq = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_label_word(x) for x in labels))
    return np.random.Generator(np.random.Philox(seq))
