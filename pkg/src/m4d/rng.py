"""Deterministic random streams.

Every stochastic choice in a run draws from a counter-based Philox
generator keyed by (seed, tag path). Streams are independent of each
other and of evaluation order, so adding a consumer never perturbs the
draws of an existing one.
"""
from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def stream(seed: int, *tags) -> np.random.Generator:
    """Return the generator for (seed, *tags).

    Tags may mix strings and ints. The same (seed, tags) tuple always
    yields an identical stream; distinct tag paths yield streams keyed by
    distinct sha256 digests.
    """
    h = hashlib.sha256()
    h.update(str(int(seed)).encode())
    for t in tags:
        h.update(b"/")
        h.update(str(t).encode())
    sub = int.from_bytes(h.digest()[:8], "little")
    return np.random.Generator(np.random.Philox(key=[int(seed) & _MASK64, sub]))
