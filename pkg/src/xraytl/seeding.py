"""Deterministic sub-seed derivation.

Every source of randomness in a run (eval repartition, downsampling,
augmentation draws, weight init, batch shuffling) draws from its own named
sub-seed so that changing one stage never perturbs another.
"""

import hashlib


def subseed(seed: int, name: str) -> int:
    """Derive a stable 32-bit sub-seed from a run seed and a stage name."""
    digest = hashlib.sha256(f"{seed}:{name}".encode()).digest()
    return int.from_bytes(digest[:4], "big")
