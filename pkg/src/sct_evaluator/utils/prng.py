"""
Portable pseudo-random generator used for every seeded selection in the toolkit.

The generator is xorshift64* (Vigna), seeded through one splitmix64 step so that
any 64-bit seed, including 0, yields a valid non-zero state:

    seeding:   z = (seed + 0x9E3779B97F4A7C15) mod 2^64
               z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9 mod 2^64
               z = (z ^ (z >> 27)) * 0x94D049BB133111EB mod 2^64
               state = z ^ (z >> 31)            (replaced by 1 if it is 0)
    update:    x ^= x >> 12;  x ^= x << 25 (mod 2^64);  x ^= x >> 27
    output:    (x * 0x2545F4914F6CDD1D) mod 2^64

Keys such as a stratum name are folded into the seed with 64-bit FNV-1a over
their UTF-8 bytes, so results reproduce across implementations and platforms.
"""

from typing import List, Sequence, TypeVar

T = TypeVar("T")

_MASK64 = 0xFFFFFFFFFFFFFFFF
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def _splitmix64(value: int) -> int:
    z = (value + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def fnv1a_64(text: str) -> int:
    """64-bit FNV-1a hash of the UTF-8 encoding of `text`."""
    h = _FNV_OFFSET
    for byte in text.encode("utf-8"):
        h ^= byte
        h = (h * _FNV_PRIME) & _MASK64
    return h


def derive_seed(seed: int, key: str) -> int:
    """Combine a user seed with a string key (e.g. a stratum) into a 64-bit seed."""
    return _splitmix64((seed & _MASK64) ^ fnv1a_64(key))


class XorShift64Star:
    """xorshift64* generator; see the module docstring for the exact equations."""

    def __init__(self, seed: int):
        state = _splitmix64(seed & _MASK64)
        self.state = state if state != 0 else 1

    def next_u64(self) -> int:
        x = self.state
        x ^= x >> 12
        x = (x ^ (x << 25)) & _MASK64
        x ^= x >> 27
        self.state = x
        return (x * 0x2545F4914F6CDD1D) & _MASK64

    def randbelow(self, n: int) -> int:
        """Integer in [0, n) as next_u64() mod n."""
        if n <= 0:
            raise ValueError("n must be positive")
        return self.next_u64() % n

    def shuffled(self, items: Sequence[T]) -> List[T]:
        """Fisher-Yates shuffle (from the last position down) of a copy of `items`."""
        out = list(items)
        for i in range(len(out) - 1, 0, -1):
            j = self.randbelow(i + 1)
            out[i], out[j] = out[j], out[i]
        return out
