"""Seed derivation helpers.

All randomness in the package flows from integer master seeds through
counter-based Philox streams.  Sub-streams are derived from hierarchical
integer paths (epoch, batch, read index, ...) so results never depend on
execution order or parallelism.
"""

from __future__ import annotations

import hashlib

import numpy as np

MAX_SEED = 2**64 - 1


def check_seed(seed: int) -> int:
    if not isinstance(seed, (int, np.integer)):
        raise TypeError(f"seed must be an integer, got {type(seed).__name__}")
    if not 0 <= seed <= MAX_SEED:
        raise ValueError(f"seed must be in [0, 2**64), got {seed}")
    return int(seed)


def derive_seed(seed: int, *path: int) -> int:
    """Deterministic 64-bit sub-seed for the given integer path."""
    check_seed(seed)
    ss = np.random.SeedSequence([seed, *[int(p) for p in path]])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def stream(seed: int, *path: int) -> np.random.Generator:
    """Philox generator keyed by (seed, *path)."""
    check_seed(seed)
    ss = np.random.SeedSequence([seed, *[int(p) for p in path]])
    return np.random.Generator(np.random.Philox(ss))


def read_keys(seed: int, digest: int, num_reads: int) -> np.ndarray:
    """128-bit Philox keys for per-read streams, as a (num_reads, 2) uint64 array.

    Key r is a pure function of (seed, digest, r): reads may be generated in
    any order or split across chunks without changing their streams.
    """
    check_seed(seed)
    ss = np.random.SeedSequence([seed, int(digest)])
    return ss.generate_state(2 * num_reads, dtype=np.uint64).reshape(num_reads, 2)


def read_stream(keys: np.ndarray, r: int) -> np.random.Generator:
    key = int(keys[r, 0]) | (int(keys[r, 1]) << 64)
    return np.random.Generator(np.random.Philox(key=key))


def digest64(data: bytes) -> int:
    """First 8 bytes of sha256 as an unsigned integer."""
    return int.from_bytes(hashlib.sha256(data).digest()[:8], "little")
