"""FNV-1a 64-bit hashing.

Used as the content digest of model files and to derive named RNG
substreams from string labels. The algorithm is the standard Fowler /
Noll / Vo variant 1a over bytes: h = 14695981039346656037; for each
byte b: h = (h XOR b) * 1099511628211 mod 2^64.
"""

FNV64_OFFSET = 0xCBF29CE484222325
FNV64_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def fnv1a64(data: bytes, h: int = FNV64_OFFSET) -> int:
    """Hash ``data``, optionally chaining from a previous digest ``h``."""
    for b in data:
        h = ((h ^ b) * FNV64_PRIME) & _MASK64
    return h
