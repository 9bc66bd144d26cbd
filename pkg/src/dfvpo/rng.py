"""Counter-based splittable random number generator.

Every random quantity in this package is a pure function of a 64-bit key and a
counter, so results never depend on iteration order or thread count. The exact
scheme, binding for anyone who wants to reproduce outputs byte for byte:

- word(key, i)  = mix64(key + GOLDEN * (i + 1))  on 64-bit wrapping arithmetic,
  where mix64 is the SplitMix64 finalizer and GOLDEN = 0x9E3779B97F4A7C15.
- Keys are derived by folding words into a fixed initial constant:
  k <- mix64(k XOR (word + GOLDEN)). String words fold as little-endian
  8-byte chunks of their UTF-8 encoding.
- Uniform doubles in the open interval (0, 1): ((word >> 11) + 0.5) * 2**-53.
- Gaussian variates: inverse normal CDF applied to the uniform at the same
  counter index.
- Bounded integers in [0, n): rejection sampling on raw words (draw again on
  the next counter while word >= floor(2**64 / n) * n).
- Uniform permutations: Fisher-Yates driven by sequential bounded draws from a
  fresh counter at the given key.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_INIT = np.uint64(0x93C467E37DB0C7A4)
_MASK64 = (1 << 64) - 1


def _mix64(z):
    """SplitMix64 finalizer, elementwise on uint64 scalars or arrays."""
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return z ^ (z >> np.uint64(31))


def _expand_word(w) -> list[np.uint64]:
    if isinstance(w, str):
        raw = w.encode("utf-8")
        if not raw:
            return [np.uint64(0)]
        return [
            np.uint64(int.from_bytes(raw[i : i + 8], "little")) for i in range(0, len(raw), 8)
        ]
    return [np.uint64(int(w) & _MASK64)]


def derive_key(*words) -> int:
    """Fold integer or string words into a 64-bit subkey. Strings fold as
    little-endian 8-byte chunks of their UTF-8 encoding."""
    k = _INIT
    with np.errstate(over="ignore"):
        for w in words:
            for piece in _expand_word(w):
                k = _mix64(k ^ (piece + GOLDEN))
    return int(k)


def raw_words(key: int, start: int, count: int) -> np.ndarray:
    """Words at counters start .. start+count-1, as a uint64 array."""
    idx = np.arange(start + 1, start + count + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        return _mix64(np.uint64(key) + GOLDEN * idx)


def uniform_field(key: int, shape, start: int = 0) -> np.ndarray:
    """I.i.d. uniforms in (0, 1); element i uses counter start + i."""
    n = int(np.prod(shape, dtype=np.int64)) if shape else 1
    u = ((raw_words(key, start, n) >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
    return u.reshape(shape)


def normal_field(key: int, shape, start: int = 0) -> np.ndarray:
    """I.i.d. standard Gaussians via inverse CDF of the uniform stream."""
    return ndtri(uniform_field(key, shape, start))


def bounded_int(key: int, counter: int, n: int) -> tuple[int, int]:
    """Uniform integer in [0, n) by rejection. Returns (value, next counter)."""
    if n <= 0:
        raise ValueError("bound must be positive")
    threshold = ((1 << 64) // n) * n
    while True:
        w = int(raw_words(key, counter, 1)[0])
        counter += 1
        if w < threshold:
            return w % n, counter


def permutation(key: int, n: int) -> list[int]:
    """Uniform permutation of range(n) via seeded Fisher-Yates."""
    perm = list(range(n))
    counter = 0
    for j in range(n - 1, 0, -1):
        i, counter = bounded_int(key, counter, j + 1)
        perm[i], perm[j] = perm[j], perm[i]
    return perm


def non_identity_permutation(seed: int, n: int, *words) -> list[int]:
    """Uniform non-identity permutation; redraws with seed+1, seed+2, ... on an
    identity draw. Requires n >= 2 so a non-identity permutation exists."""
    if n < 2:
        raise ValueError("need n >= 2 for a non-identity permutation")
    attempt = 0
    while True:
        perm = permutation(derive_key(seed + attempt, *words), n)
        if any(p != i for i, p in enumerate(perm)):
            return perm
        attempt += 1


@dataclass
class Stream:
    """Sequential view over one keyed counter stream.

    Each draw advances the counter, so a Stream behaves like a conventional
    stateful RNG while staying a pure function of (key, draw sequence).
    """

    key: int
    counter: int = 0

    @classmethod
    def from_words(cls, *words) -> "Stream":
        return cls(derive_key(*words))

    def split(self, *words) -> "Stream":
        """Independent child stream; does not advance this stream."""
        return Stream(derive_key(self.key, "split", *words))

    def uniforms(self, shape=()) -> np.ndarray:
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        out = uniform_field(self.key, shape, self.counter)
        self.counter += n
        return out

    def normals(self, shape=()) -> np.ndarray:
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        out = normal_field(self.key, shape, self.counter)
        self.counter += n
        return out

    def randint(self, n: int) -> int:
        """Uniform integer in [0, n)."""
        value, self.counter = bounded_int(self.key, self.counter, n)
        return value

    def uniform(self, lo: float = 0.0, hi: float = 1.0) -> float:
        return lo + (hi - lo) * float(self.uniforms(()))
