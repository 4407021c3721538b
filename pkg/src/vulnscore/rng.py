"""Pinned pseudo-random number generator for reproducible split plans.

Experiment plans must reproduce bit-for-bit across machines and across
reimplementations, so the generator is fully specified here instead of
deferring to whatever the host language ships:

* State initialisation: splitmix64. Starting from the user seed ``x``
  (taken mod 2**64), each call performs
  ``x += 0x9E3779B97F4A7C15`` and returns
  ``z ^ (z >> 31)`` where
  ``z = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9)`` then
  ``z = ((z ^ (z >> 27)) * 0x94D049BB133111EB)``, all mod 2**64.
* Generator: xoshiro256**. The four 64-bit state words are the first
  four splitmix64 outputs. One step returns
  ``rotl64(s1 * 5, 7) * 9`` and updates
  ``t = s1 << 17; s2 ^= s0; s3 ^= s1; s1 ^= s2; s0 ^= s3; s2 ^= t;
  s3 = rotl64(s3, 45)``.

Derived draws are defined on top of ``next_u64``:

* ``randbelow(n)``: unbiased rejection sampling, drawing 64-bit words
  until one falls below ``2**64 - (2**64 % n)``, then reducing mod n.
* ``random()``: ``(next_u64() >> 11) * 2**-53`` (uniform in [0, 1)).
* ``shuffle``: Fisher-Yates from the last element down, swapping index
  ``i`` with ``randbelow(i + 1)``.
* ``normal``: Box-Muller; the sine branch is cached and returned by the
  following call.
* ``poisson``: Knuth's product method; for means large enough that
  ``exp(-lam)`` underflows it falls back to a rounded normal
  approximation (mean lam, sd sqrt(lam), clipped at 0).
"""

from __future__ import annotations

import math

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def splitmix64_stream(seed: int):
    """Yield the splitmix64 sequence for ``seed`` (infinite generator)."""
    x = seed & _MASK64
    while True:
        x = (x + _GOLDEN) & _MASK64
        z = x
        z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
        z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
        yield z ^ (z >> 31)


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK64


class Xoshiro256(object):
    """xoshiro256** generator with splitmix64 seeding (see module docstring)."""

    def __init__(self, seed: int):
        sm = splitmix64_stream(seed)
        self._s = [next(sm) for _ in range(4)]
        self._spare_normal: float | None = None

    def next_u64(self) -> int:
        s = self._s
        result = (_rotl((s[1] * 5) & _MASK64, 7) * 9) & _MASK64
        t = (s[1] << 17) & _MASK64
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = _rotl(s[3], 45)
        return result

    def randbelow(self, n: int) -> int:
        """Uniform integer in [0, n) via rejection sampling."""
        if n <= 0:
            raise ValueError("randbelow requires n >= 1")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            u = self.next_u64()
            if u < limit:
                return u % n

    def random(self) -> float:
        """Uniform float in [0, 1) with 53 bits of precision."""
        return (self.next_u64() >> 11) * 2.0**-53

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randbelow(i + 1)
            items[i], items[j] = items[j], items[i]

    def normal(self, mu: float = 0.0, sigma: float = 1.0) -> float:
        """Gaussian draw via Box-Muller (second branch cached)."""
        if self._spare_normal is not None:
            z = self._spare_normal
            self._spare_normal = None
            return mu + sigma * z
        u1 = self.random()
        while u1 <= 0.0:
            u1 = self.random()
        u2 = self.random()
        r = math.sqrt(-2.0 * math.log(u1))
        self._spare_normal = r * math.sin(2.0 * math.pi * u2)
        return mu + sigma * (r * math.cos(2.0 * math.pi * u2))

    def poisson(self, lam: float) -> int:
        """Poisson draw; Knuth product method, normal fallback for huge means."""
        if lam <= 0.0:
            return 0
        threshold = math.exp(-lam)
        if threshold == 0.0:
            return max(0, int(round(lam + math.sqrt(lam) * self.normal())))
        k = 0
        p = 1.0
        while True:
            p *= self.random()
            if p <= threshold:
                return k
            k += 1

    def binomial(self, n: int, p: float) -> int:
        """Binomial draw by n Bernoulli trials (n is small everywhere we use it)."""
        hits = 0
        for _ in range(n):
            if self.random() < p:
                hits += 1
        return hits

    def bernoulli(self, p: float) -> int:
        return 1 if self.random() < p else 0
