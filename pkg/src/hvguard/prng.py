"""xoshiro256** seeded through splitmix64.

Seeding: stream ``k`` of a 64-bit seed initialises the four state words from
splitmix64 outputs ``4k .. 4k+3`` of a splitmix64 generator started at
``seed``. Stream 0 drives random schedules, stream 1 fills object contents.
The same construction in any language reproduces the same schedules.
"""

from __future__ import annotations

MASK64 = (1 << 64) - 1

STREAM_SCHEDULE = 0
STREAM_FILL = 1


class SplitMix64:
    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)


class Xoshiro256StarStar:
    def __init__(self, state: tuple[int, int, int, int]):
        if not any(state):
            raise ValueError("xoshiro256** state must not be all zero")
        self.s = [w & MASK64 for w in state]

    @classmethod
    def from_seed(cls, seed: int, stream: int = 0) -> Xoshiro256StarStar:
        sm = SplitMix64(seed)
        for _ in range(4 * stream):
            sm.next()
        return cls((sm.next(), sm.next(), sm.next(), sm.next()))

    def next(self) -> int:
        s0, s1, s2, s3 = self.s
        x = (s1 * 5) & MASK64
        result = ((((x << 7) | (x >> 57)) & MASK64) * 9) & MASK64
        t = (s1 << 17) & MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = ((s3 << 45) | (s3 >> 19)) & MASK64
        self.s = [s0, s1, s2, s3]
        return result

    def below(self, n: int) -> int:
        """Uniform-ish integer in [0, n) by plain modulo reduction."""
        if n <= 0:
            raise ValueError("n must be positive")
        return self.next() % n

    def fill(self, n: int) -> bytes:
        # little-endian words, truncated to n bytes
        out = bytearray()
        while len(out) < n:
            out += self.next().to_bytes(8, "little")
        return bytes(out[:n])
