"""Stable seed derivation.

Seeds for rollouts and grading attempts are derived from the run seed plus
string context (problem id, purpose tag), not from list positions, so
resuming or reordering work never changes any downstream sampling.
"""

from __future__ import annotations

import hashlib


def derive_seed(base: int, *context: str | int) -> int:
    """Map (base seed, context) to a stable 31-bit seed."""
    key = ":".join([str(base), *map(str, context)])
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "big") & 0x7FFFFFFF
