"""Deterministic random-substream derivation.

Every random decision in the library draws from a named substream so that
independent pieces of work (per-image masks, per-image evaluation noise,
per-replicate datasets) can run in any order, or in parallel, and still
reproduce exactly.

Child seed = low 64 bits of SHA-256 over the UTF-8 string
``"{root_seed}:{purpose}:{index}"``.
"""

import hashlib

import numpy as np


def child_seed(root_seed: int, purpose: str, index: int = 0) -> int:
    digest = hashlib.sha256(f"{root_seed}:{purpose}:{index}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def substream(root_seed: int, purpose: str, index: int = 0) -> np.random.Generator:
    return np.random.default_rng(child_seed(root_seed, purpose, index))
