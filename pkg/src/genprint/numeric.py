"""Deterministic numeric primitives: normalization, stable softmax, seeded RNG.

Vectors and matrices are plain float64 numpy arrays (1-D and 2-D). All
computation runs in 64-bit; 32-bit floats appear only at store-serialization
boundaries.
"""
from __future__ import annotations

import math

import numpy as np

from .errors import DimensionMismatchError, ZeroVectorError

ZERO_NORM_TOL = 1e-12

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def l2_normalize(v: np.ndarray) -> np.ndarray:
    """Return v scaled to unit L2 norm. Raises ZeroVectorError for ||v|| <= 1e-12."""
    v = np.asarray(v, dtype=np.float64)
    norm = float(np.linalg.norm(v))
    if norm <= ZERO_NORM_TOL:
        raise ZeroVectorError(f"cannot normalize vector with norm {norm!r}")
    return v / norm


def cosine_similarity(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine of the angle between u and v, clamped into [-1, 1]."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise DimensionMismatchError(f"shapes {u.shape} and {v.shape} differ")
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu <= ZERO_NORM_TOL or nv <= ZERO_NORM_TOL:
        raise ZeroVectorError("cosine similarity of a zero vector is undefined")
    # Clamp absorbs rounding before any downstream arccos.
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


def stable_softmax(logits: np.ndarray) -> np.ndarray:
    """Shift-invariant softmax over a 1-D array; never overflows for finite input."""
    z = np.asarray(logits, dtype=np.float64)
    e = np.exp(z - z.max())
    return e / e.sum()


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    """Row-wise stable softmax for a 2-D array."""
    z = np.asarray(logits, dtype=np.float64)
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def _mix64(x: int) -> int:
    """SplitMix64 finalizer."""
    x &= _MASK64
    x ^= x >> 30
    x = (x * 0xBF58476D1CE4E5B9) & _MASK64
    x ^= x >> 27
    x = (x * 0x94D049BB133111EB) & _MASK64
    x ^= x >> 31
    return x


def _splitmix_next(state: int) -> tuple[int, int]:
    state = (state + _GOLDEN) & _MASK64
    return _mix64(state), state


def derive_seed(seed: int, *parts: int) -> int:
    """Derive an independent 64-bit seed from a base seed and integer tags.

    Used to give each dataset split, class, and epoch its own stream without
    any cross-talk between consumers.
    """
    x = seed & _MASK64
    for p in parts:
        x = _mix64((x + _GOLDEN + (p & _MASK64)) & _MASK64)
    return x


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK64


class RngState:
    """xoshiro256** generator seeded through SplitMix64.

    Identical seeds produce bit-identical streams on every platform; the
    generator is single-owner (use independent instances, with distinct
    seeds, for concurrent work).
    """

    __slots__ = ("seed", "_s")

    def __init__(self, seed: int):
        self.seed = seed & _MASK64
        state = self.seed
        s = []
        for _ in range(4):
            value, state = _splitmix_next(state)
            s.append(value)
        self._s = s

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

    def u64_array(self, n: int) -> np.ndarray:
        """n raw 64-bit draws as a uint64 array."""
        out = np.empty(n, dtype=np.uint64)
        for i in range(n):
            out[i] = self.next_u64()
        return out

    def random(self) -> float:
        """Uniform float64 in [0, 1) with 53 bits of precision."""
        return (self.next_u64() >> 11) * 2.0**-53

    def uniform(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.random()

    def randrange(self, n: int) -> int:
        """Unbiased integer in [0, n) via rejection sampling."""
        if n <= 0:
            raise ValueError("randrange needs n >= 1")
        limit = (_MASK64 + 1) - ((_MASK64 + 1) % n)
        while True:
            r = self.next_u64()
            if r < limit:
                return r % n

    def randint(self, lo: int, hi: int) -> int:
        """Uniform integer in the inclusive range [lo, hi]."""
        if hi < lo:
            raise ValueError("empty range")
        return lo + self.randrange(hi - lo + 1)

    def normal_array(self, n: int) -> np.ndarray:
        """n standard normal draws (Box-Muller over paired uniforms)."""
        pairs = (n + 1) // 2
        raw = self.u64_array(2 * pairs)
        # u1 in (0, 1] so log() is finite; u2 in [0, 1).
        u1 = ((raw[0::2] >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0**-53
        u2 = (raw[1::2] >> np.uint64(11)).astype(np.float64) * 2.0**-53
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * math.pi * u2
        out = np.empty(2 * pairs, dtype=np.float64)
        out[0::2] = r * np.cos(theta)
        out[1::2] = r * np.sin(theta)
        return out[:n]

    def normal(self) -> float:
        return float(self.normal_array(1)[0])

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randrange(i + 1)
            items[i], items[j] = items[j], items[i]

    def permutation(self, n: int) -> np.ndarray:
        idx = list(range(n))
        self.shuffle(idx)
        return np.asarray(idx, dtype=np.int64)
