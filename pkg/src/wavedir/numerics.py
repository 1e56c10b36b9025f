"""Dense float64 linear algebra, activations and a seeded counter-based RNG.

Matrices are plain ``numpy.ndarray`` objects of dtype float64. The helpers
here add the shape checking and the row-stability guarantee the rest of the
package relies on.

The random generator is SplitMix64 used in counter mode: output ``i`` of a
stream with key ``k`` is ``mix64(k + (i + 1) * 0x9E3779B97F4A7C15)``. The
whole stream is a pure function of ``(key, i)``, so it can be evaluated in
vectorized form and is identical on every platform that has 64-bit unsigned
wrap-around arithmetic.
"""

from __future__ import annotations

import hashlib

import numpy as np

from .errors import DimensionError

_ROW_BLOCK = 8

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1


def as_matrix(x) -> np.ndarray:
    """Return ``x`` as a 2-D float64 array (vectors become a single row)."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 1:
        a = a[None, :]
    if a.ndim != 2:
        raise DimensionError(f"expected a matrix, got array of shape {a.shape}")
    return a


def identity(n: int) -> np.ndarray:
    return np.eye(n, dtype=np.float64)


def matmul(a, b) -> np.ndarray:
    """Matrix product ``a @ b`` whose rows do not depend on each other.

    BLAS kernels treat a trailing partial row panel differently from full
    panels, so the same input row can round differently depending on how many
    rows travel with it. Padding the left operand to a multiple of
    ``_ROW_BLOCK`` rows keeps every row on the full-panel path, which makes a
    batched product bitwise equal to the row-by-row products.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    rows = a.shape[0]
    padded = -(-rows // _ROW_BLOCK) * _ROW_BLOCK
    if padded == rows:
        return a @ b
    buf = np.zeros((padded, a.shape[1]))
    buf[:rows] = a
    return (buf @ b)[:rows]


def sigmoid(x) -> np.ndarray:
    """Logistic function evaluated without overflow for any finite input."""
    x = np.asarray(x, dtype=np.float64)
    # exp(-x) may overflow to inf for x << 0, which correctly yields 0.
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


def tanh(x) -> np.ndarray:
    return np.tanh(np.asarray(x, dtype=np.float64))


def _mix64(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


def _label_hash(label: str) -> int:
    return int.from_bytes(hashlib.sha256(label.encode("utf-8")).digest()[:8], "little")


class SeededRng:
    """Deterministic random stream (SplitMix64, counter mode).

    ``fork(label)`` derives a child stream from this stream's key and the
    label only, so forks are reproducible regardless of how many numbers the
    parent has already produced.
    """

    def __init__(self, seed: int = 0, *, _key: int | None = None):
        if _key is None:
            _key = int(_mix64(np.array([int(seed) & _MASK64], dtype=np.uint64))[0])
        self.seed = int(seed)
        self.key = _key & _MASK64
        self.counter = 0

    def fork(self, label: str) -> "SeededRng":
        mixed = np.array([self.key ^ _label_hash(str(label))], dtype=np.uint64)
        child = SeededRng(self.seed, _key=int(_mix64(mixed + _GAMMA)[0]))
        return child

    def next_uint64(self, size: int) -> np.ndarray:
        size = int(size)
        idx = np.arange(self.counter + 1, self.counter + 1 + size, dtype=np.uint64)
        self.counter += size
        with np.errstate(over="ignore"):
            return _mix64(np.uint64(self.key) + idx * _GAMMA)

    def random(self, size) -> np.ndarray:
        """Uniform doubles on [0, 1) with 53 random bits each."""
        shape = (size,) if np.isscalar(size) else tuple(size)
        n = int(np.prod(shape, dtype=np.int64))
        u = (self.next_uint64(n) >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))
        return u.reshape(shape)

    def uniform(self, low: float, high: float, size) -> np.ndarray:
        return low + (high - low) * self.random(size)

    def normal(self, size, mean: float = 0.0, std: float = 1.0) -> np.ndarray:
        """Gaussian samples by the Box-Muller transform."""
        shape = (size,) if np.isscalar(size) else tuple(size)
        n = int(np.prod(shape, dtype=np.int64))
        half = (n + 1) // 2
        u1 = 1.0 - self.random(half)
        u2 = self.random(half)
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.concatenate([r * np.cos(2 * np.pi * u2), r * np.sin(2 * np.pi * u2)])[:n]
        return mean + std * z.reshape(shape)

    def permutation(self, n: int) -> np.ndarray:
        keys = self.next_uint64(n)
        return np.argsort(keys, kind="stable")


def uniform_init(rng: SeededRng, rows: int, cols: int, fan_in: int) -> np.ndarray:
    """Matrix with entries i.i.d. uniform on [-1/sqrt(fan_in), 1/sqrt(fan_in)]."""
    if fan_in < 1:
        raise ValueError(f"fan_in must be >= 1, got {fan_in}")
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, (rows, cols))
