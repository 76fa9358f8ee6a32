"""Platform-stable hashing helpers.

Python's builtin ``hash`` is salted per process, so everything that must be
reproducible across runs and machines (mock embeddings, n-gram buckets) goes
through 64-bit FNV-1a instead.
"""

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a over a byte string."""
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & _MASK64
    return h


def text_seed(text: str, seed: int = 0) -> int:
    """Stable 64-bit seed for (text, seed): FNV-1a over UTF-8 bytes plus the seed word."""
    payload = text.encode("utf-8") + (seed & _MASK64).to_bytes(8, "little")
    return fnv1a64(payload)
