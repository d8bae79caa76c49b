"""Deterministic randomness: one master seed fans out into documented sub-seeds.

All sampling in the engine goes through :func:`sample_indices` so that corpus
sampling and dataset generation agree on one PRNG discipline, and every derived
stream is reachable from a single ``--seed`` value.
"""

from __future__ import annotations

import hashlib
import random


def derive_seed(master: int, *labels: object) -> int:
    """Derive a 64-bit sub-seed from a master seed and a label path.

    Labels are length-prefixed before hashing so ("ab", "c") and ("a", "bc")
    derive different seeds.
    """
    h = hashlib.sha256()
    h.update(int(master).to_bytes(8, "big", signed=False))
    for label in labels:
        raw = str(label).encode("utf-8")
        h.update(len(raw).to_bytes(8, "big"))
        h.update(raw)
    return int.from_bytes(h.digest()[:8], "big")


def sample_indices(n: int, k: int, seed: int) -> list[int]:
    """Choose k of n indices uniformly without replacement, in ascending order.

    Deterministic in (n, k, seed).
    """
    if not 0 <= k <= n:
        raise ValueError(f"cannot choose {k} of {n}")
    rng = random.Random(seed)
    return sorted(rng.sample(range(n), k))
