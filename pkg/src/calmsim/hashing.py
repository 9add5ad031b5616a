"""Stable seeded 64-bit hashing.

Python's builtin ``hash`` is randomized per process, so anything that must
be reproducible across runs (owner routing, chunk tokens, sketch rows) goes
through these helpers instead.
"""

from __future__ import annotations

import hashlib

MASK64 = (1 << 64) - 1


def hash64(data: bytes | str, seed: int = 0) -> int:
    """64-bit keyed hash of ``data``, stable across processes and runs."""
    if isinstance(data, str):
        data = data.encode("utf-8")
    key = (seed & MASK64).to_bytes(8, "little")
    digest = hashlib.blake2b(data, digest_size=8, key=key).digest()
    return int.from_bytes(digest, "little")


def digest16(data: bytes) -> bytes:
    """Short content digest used to anchor chunk token identities."""
    return hashlib.blake2b(data, digest_size=16).digest()
