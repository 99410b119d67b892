"""Numeric substrate: float64 matrices and a SplitMix64 generator.

Matrices are plain ``numpy.ndarray`` objects with dtype float64 in C
(row-major) order. The generator is implemented here rather than taken from
numpy so that streams are pinned bit-for-bit independent of numpy's own RNG
versions.
"""

from __future__ import annotations

import numpy as np

GOLDEN_GAMMA = 0x9E3779B97F4A7C15
MIX_1 = 0xBF58476D1CE4E5B9
MIX_2 = 0x94D049BB133111EB
MASK64 = (1 << 64) - 1

_TWO_POW_53 = float(1 << 53)


class ShapeError(ValueError):
    """Raised when array shapes do not line up."""


def as_matrix(values) -> np.ndarray:
    m = np.ascontiguousarray(values, dtype=np.float64)
    if m.ndim == 1:
        m = m.reshape(1, -1)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {m.shape}")
    return m


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape[0]}x{a.shape[1]} by {b.shape[0]}x{b.shape[1]}")
    return a @ b


def transpose(a) -> np.ndarray:
    return np.ascontiguousarray(as_matrix(a).T)


def _mix(z):
    # works on python ints and on uint64 arrays (numpy wraps array arithmetic)
    if isinstance(z, int):
        z = ((z ^ (z >> 30)) * MIX_1) & MASK64
        z = ((z ^ (z >> 27)) * MIX_2) & MASK64
        return z ^ (z >> 31)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(MIX_1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(MIX_2)
    return z ^ (z >> np.uint64(31))


class Rng:
    """SplitMix64 pseudo-random generator.

    ``next_u64`` advances the state by the golden gamma and returns the mixed
    value. Bulk draws are vectorised but consume the stream exactly as the
    same number of ``next_u64`` calls would.
    """

    def __init__(self, seed: int):
        self.state = int(seed) & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + GOLDEN_GAMMA) & MASK64
        return _mix(self.state)

    def next_float(self) -> float:
        return (self.next_u64() >> 11) / _TWO_POW_53

    def u64_array(self, n: int) -> np.ndarray:
        if n < 0:
            raise ValueError(f"count must be non-negative, got {n}")
        with np.errstate(over="ignore"):
            steps = np.arange(1, n + 1, dtype=np.uint64) * np.uint64(GOLDEN_GAMMA)
            states = steps + np.uint64(self.state)
            out = _mix(states)
        self.state = (self.state + n * GOLDEN_GAMMA) & MASK64
        return out

    def random(self, n: int) -> np.ndarray:
        """``n`` doubles in [0, 1) built from the top 53 bits of each draw."""
        return (self.u64_array(n) >> np.uint64(11)).astype(np.float64) / _TWO_POW_53

    def uniform(self, n: int, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
        if not lo < hi:
            raise ValueError(f"uniform range requires lo < hi, got [{lo}, {hi})")
        out = lo + (hi - lo) * self.random(n)
        # lo + (hi-lo)*u can round up to hi for u close to 1
        return np.minimum(out, np.nextafter(hi, lo))

    def integers(self, n: int, high: int) -> np.ndarray:
        """``n`` integers in [0, high) by scaling uniform doubles."""
        if high < 1:
            raise ValueError(f"high must be >= 1, got {high}")
        return np.minimum((self.random(n) * high).astype(np.int64), high - 1)

    def permutation(self, n: int) -> np.ndarray:
        """Random permutation of ``range(n)``: stable argsort of ``n`` uniform keys."""
        return np.argsort(self.random(n), kind="stable")

    def spawn(self) -> "Rng":
        return Rng(self.next_u64())


def rng_uniform(rng: Rng, n: int, lo: float, hi: float) -> np.ndarray:
    return rng.uniform(n, lo, hi)


def derive_seed(base: int, *path: int) -> int:
    """Child seed for a (stage, candidate, trial, fold, ...) path.

    Each path component is XORed into the running seed, which is then passed
    through one SplitMix64 step.
    """
    seed = int(base) & MASK64
    for part in path:
        seed = Rng(seed ^ (int(part) & MASK64)).next_u64()
    return seed
