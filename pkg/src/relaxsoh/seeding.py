"""Stable seed derivation.

All randomness in the package flows from one master seed through
``derive_seed``. The derivation is SHA-256 over a canonical string, so child
seeds are reproducible across runs, platforms, and Python versions (unlike
the salted builtin ``hash``).
"""

import hashlib

__all__ = ["derive_seed"]


def derive_seed(master_seed: int, *parts) -> int:
    """Derive a child seed from a master seed and a path of labels.

    Parts may be strings, ints, or floats; they are joined into a canonical
    text key. Returns a non-negative int that fits ``numpy.random.default_rng``.
    """
    key = str(int(master_seed)) + "".join(f"/{p}" for p in parts)
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") >> 1
