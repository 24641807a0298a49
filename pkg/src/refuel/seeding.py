"""Seed derivation and counter-based generators.

Every random stream in the package comes from a Philox generator keyed by a
64-bit seed. Sub-streams are derived by hashing labels, so the same
(seed, label...) tuple always yields the same stream regardless of call order.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(seed: int, *labels: object) -> int:
    """Stable 63-bit seed from a master seed and any printable labels."""
    text = ":".join([str(int(seed))] + [str(x) for x in labels])
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") >> 1


def make_rng(seed: int, *labels: object) -> np.random.Generator:
    """Philox-backed generator for ``(seed, *labels)``."""
    key = derive_seed(seed, *labels) if labels else int(seed)
    return np.random.Generator(np.random.Philox(key=key))


def inverse_cdf(cdf: np.ndarray, last: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Vectorized inverse-CDF draw.

    ``cdf`` has shape (n, k) with one cumulative row per draw, ``u`` shape (n,).
    Returns the first index whose cumulative mass exceeds ``u``. Draws that
    land past the end because of rounding go to ``last`` (the highest index
    with positive mass), never beyond it.
    """
    idx = (cdf <= u[:, None]).sum(axis=1)
    return np.minimum(idx, last)
