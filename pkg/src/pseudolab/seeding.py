"""Deterministic sub-seed derivation.

Every random decision in the toolkit draws from a generator seeded through
:func:`derive_seed`, so one master seed fans out into independent streams.
Toggling a feature that consumes one stream never perturbs the draws of
another, which is what makes paired method comparisons possible.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(master: int, *tags: object) -> int:
    """Derive a stable 63-bit sub-seed from ``master`` and a tag path.

    Tags may be ints, strings, or floats; the derivation hashes their repr,
    which is platform-stable for these types.
    """
    key = repr((int(master),) + tuple(tags)).encode("utf-8")
    digest = hashlib.blake2b(key, digest_size=8).digest()
    return int.from_bytes(digest, "big") >> 1


def rng_for(master: int, *tags: object) -> np.random.Generator:
    """A fresh generator for the stream identified by ``tags``."""
    return np.random.default_rng(derive_seed(master, *tags))
