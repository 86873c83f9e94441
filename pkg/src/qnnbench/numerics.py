"""Deterministic dense arithmetic and seeded random numbers.

Tensors are plain C-order float64 numpy arrays. Everything here is bench
plumbing, but two contracts are load-bearing for the rest of the package:

* ``matmul`` accumulates in a fixed order (row-major output, k innermost),
  so results are bit-reproducible and independent of any BLAS backend.
  ``numpy.matmul`` does not give that guarantee.
* ``Rng`` is SplitMix64 (Steele, Lea & Flood, OOPSLA 2014), a counter-based
  generator with published constants. The algorithm is frozen: checkpoints
  embed (seed, counter) and must replay identically on any platform.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def _mix(z: int) -> int:
    """SplitMix64 finalizer on a Python int (mod 2^64)."""
    z = (z ^ (z >> 30)) * _MIX1 & _MASK64
    z = (z ^ (z >> 27)) * _MIX2 & _MASK64
    return z ^ (z >> 31)


def _mix_array(z: np.ndarray) -> np.ndarray:
    # uint64 numpy arithmetic wraps mod 2^64, matching _mix exactly
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
    return z ^ (z >> np.uint64(31))


def derive_seed(base: int, *components: int) -> int:
    """Derive an independent 64-bit stream seed from a base seed and tags.

    Used to give every sweep point its own stream so run results do not
    depend on scheduling order.
    """
    z = base & _MASK64
    for c in components:
        z = _mix((z + _GAMMA) & _MASK64) ^ (c & _MASK64)
    return _mix((z + _GAMMA) & _MASK64)


class Rng:
    """SplitMix64 stream: output i is mix(seed + (i+1)*gamma).

    State is the pair (seed, counter); both serialize into checkpoints.
    One instance per logical consumer, never shared between consumers.
    """

    def __init__(self, seed: int, counter: int = 0):
        self.seed = seed & _MASK64
        self.counter = counter

    def state(self) -> tuple[int, int]:
        return (self.seed, self.counter)

    @classmethod
    def from_state(cls, state: tuple[int, int]) -> "Rng":
        return cls(state[0], state[1])

    def next_u64(self) -> int:
        self.counter += 1
        return _mix((self.seed + self.counter * _GAMMA) & _MASK64)

    def _raw_block(self, n: int) -> np.ndarray:
        idx = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        return _mix_array(np.uint64(self.seed) + idx * np.uint64(_GAMMA))

    def uniform(self, lo: float, hi: float, n: int) -> np.ndarray:
        """n float64 samples in [lo, hi)."""
        if not lo < hi:
            raise ValueError(f"uniform requires lo < hi, got [{lo}, {hi})")
        if n < 0:
            raise ValueError("sample count must be nonnegative")
        u = (self._raw_block(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        out = lo + u * (hi - lo)
        # lo + u*(hi-lo) can round up to hi for u near 1; keep the interval open
        return np.minimum(out, np.nextafter(hi, lo))

    def uniform_like(self, lo: float, hi: float, shape: tuple[int, ...]) -> np.ndarray:
        return self.uniform(lo, hi, int(np.prod(shape))).reshape(shape)

    def randint_below(self, bound: int) -> int:
        """Unbiased integer in [0, bound) by rejection on the top bits."""
        if bound <= 0:
            raise ValueError("bound must be positive")
        # rejection zone keeps the distribution exactly uniform
        limit = _MASK64 - (_MASK64 + 1) % bound
        while True:
            u = self.next_u64()
            if u <= limit:
                return u % bound

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates permutation of range(n)."""
        perm = np.arange(n, dtype=np.int64)
        for i in range(n - 1, 0, -1):
            j = self.randint_below(i + 1)
            perm[i], perm[j] = perm[j], perm[i]
        return perm

    def split(self, *tags: int) -> "Rng":
        """Independent child stream; does not disturb this stream's counter."""
        return Rng(derive_seed(self.seed, *tags))


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with fixed accumulation order.

    For every output element the k terms are added in increasing k with a
    rounding step after each multiply and each add, exactly like the naive
    triple loop. Implemented as a vectorized loop over k so it stays fast.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner dimensions differ: {a.shape} x {b.shape}")
    out = np.zeros((a.shape[0], b.shape[1]), dtype=np.float64)
    for k in range(a.shape[1]):
        out += a[:, k : k + 1] * b[k, :]
    return out


def argmax(v: np.ndarray) -> int:
    """Index of the maximum; ties break to the lowest index."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise ShapeError(f"argmax needs a 1-D tensor, got shape {v.shape}")
    if v.size == 0:
        raise ValueError("argmax of an empty tensor")
    return int(np.argmax(v))
