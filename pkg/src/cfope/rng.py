"""Deterministic random-stream derivation.

Every stochastic operation in the package draws from a child stream derived
from a root seed plus a tuple of tags (purpose strings, grid indices, trial
indices).  Two runs that derive the same (root, tags) tuple see bit-identical
randomness regardless of scheduling, worker count, or call order.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["child_seed", "child_rng"]

_U32 = 2**32


def _tag_words(tag: object) -> tuple[int, ...]:
    """Map one tag to a stable tuple of uint32 words."""
    if isinstance(tag, (bool, np.bool_)):
        return (int(tag),)
    if isinstance(tag, (int, np.integer)):
        v = int(tag)
        # Two's-complement style split so negatives stay distinct from positives.
        return (v % _U32, (abs(v) >> 32) % _U32, 0 if v >= 0 else 1)
    if isinstance(tag, str):
        digest = hashlib.sha256(tag.encode("utf-8")).digest()
        return tuple(int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4))
    if isinstance(tag, float):
        digest = hashlib.sha256(repr(tag).encode("ascii")).digest()
        return tuple(int.from_bytes(digest[i : i + 4], "little") for i in range(0, 8, 4))
    raise TypeError(f"unsupported rng tag type: {type(tag).__name__}")


def child_seed(root: int, *tags: object) -> np.random.SeedSequence:
    """Derive a ``SeedSequence`` for (root, tags).

    Parameters
    ----------
    root : int
        Root seed of the run.
    *tags : int | str | float | bool
        Purpose tags and indices identifying the stream.
    """
    entropy: list[int] = [int(root) % _U32, (int(root) >> 32) % _U32]
    for tag in tags:
        entropy.extend(_tag_words(tag))
    return np.random.SeedSequence(entropy)


def child_rng(root: int, *tags: object) -> np.random.Generator:
    """Return a fresh ``numpy.random.Generator`` for (root, tags)."""
    return np.random.default_rng(child_seed(root, *tags))
