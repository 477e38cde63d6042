import hashlib
import random


def stable_rng(*parts) -> random.Random:
    """Seeded RNG derived from a stable hash, identical across platforms."""
    digest = hashlib.sha256("|".join(str(p) for p in parts).encode()).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))
