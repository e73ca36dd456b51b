"""Dense float64 kernels and a deterministic, counter-based random generator.

All numeric data in this package is carried by plain numpy arrays:
vectors are 1-D float64, matrices are 2-D row-major float64.  The
functions here add the shape checking the rest of the package relies on
and raise :class:`ShapeError` / :class:`ParameterError` instead of
letting numpy broadcast its way into silent nonsense.

The generator is SplitMix64: draw ``i`` of a stream seeded with ``s`` is
``mix64(s + (i + 1) * GOLDEN)`` where ``mix64`` is the standard 64-bit
finalizer.  Because each draw is a pure function of (seed, counter), the
stream is reproducible bit-for-bit across runs and platforms.  Normal
deviates come from uniforms via the Box-Muller transform, two per pair
of uniforms.
"""

from __future__ import annotations

import numpy as np

from .errors import ParameterError, ShapeError

Array = np.ndarray

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX_A = np.uint64(0xBF58476D1CE4E5B9)
_MIX_B = np.uint64(0x94D049BB133111EB)
_U64_MASK = (1 << 64) - 1
_INV_2_53 = float(2.0**-53)


def as_vector(x) -> Array:
    """Coerce to a 1-D float64 array, copying only when needed."""
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise ShapeError(f"expected a vector, got ndim={v.ndim}")
    return v


def as_matrix(x) -> Array:
    """Coerce to a 2-D float64 array."""
    m = np.asarray(x, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"expected a matrix, got ndim={m.ndim}")
    return m


def matmul(a, b) -> Array:
    """Standard matrix product with an explicit inner-dimension check."""
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dims differ, {a.shape} x {b.shape}")
    return a @ b


def softmax(v) -> Array:
    """Numerically stable softmax of a vector.

    The max is subtracted before exponentiation so arbitrarily large
    scores cannot overflow; the output is positive and sums to 1.
    """
    v = as_vector(v)
    if v.size == 0:
        raise ShapeError("softmax: empty vector")
    shifted = v - v.max()
    e = np.exp(shifted)
    return e / e.sum()


def softmax_rows(m) -> Array:
    """Row-wise stable softmax of a 2-D array."""
    m = as_matrix(m)
    if m.shape[1] == 0:
        raise ShapeError("softmax_rows: zero-width matrix")
    shifted = m - m.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def relu(v) -> Array:
    """Elementwise max(0, v)."""
    return np.maximum(np.asarray(v, dtype=np.float64), 0.0)


def outer(u, v) -> Array:
    """Outer product: result[i, j] = u[i] * v[j]."""
    return np.outer(as_vector(u), as_vector(v))


def hadamard(u, v) -> Array:
    """Elementwise product of two equal-length vectors."""
    u = as_vector(u)
    v = as_vector(v)
    if u.shape != v.shape:
        raise ShapeError(f"hadamard: lengths differ, {u.size} vs {v.size}")
    return u * v


def concat(u, v) -> Array:
    """Concatenate two nonempty vectors, u's entries first."""
    u = as_vector(u)
    v = as_vector(v)
    if u.size == 0 or v.size == 0:
        raise ShapeError("concat: operands must be nonempty")
    return np.concatenate([u, v])


def _mix64(z: Array) -> Array:
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _MIX_A
        z = (z ^ (z >> np.uint64(27))) * _MIX_B
        return z ^ (z >> np.uint64(31))


class Rng:
    """Deterministic SplitMix64 stream.

    A single instance owns its counter; do not share one across threads.
    Independent substreams come from :meth:`split`.
    """

    def __init__(self, seed: int):
        self.seed = np.uint64(int(seed) & _U64_MASK)
        self.counter = 0

    def _raw(self, n: int) -> Array:
        idx = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            return _mix64(self.seed + idx * _GOLDEN)

    def uniform(self, n: int, lo: float = 0.0, hi: float = 1.0) -> Array:
        """n draws uniform in [lo, hi)."""
        if n < 0:
            raise ParameterError(f"uniform: n must be >= 0, got {n}")
        if not lo < hi:
            raise ParameterError(f"uniform: need lo < hi, got [{lo}, {hi})")
        u = (self._raw(n) >> np.uint64(11)).astype(np.float64) * _INV_2_53
        return lo + u * (hi - lo)

    def normal(self, n: int, mu: float = 0.0, sigma: float = 1.0) -> Array:
        """n draws from N(mu, sigma^2) via Box-Muller."""
        if n < 0:
            raise ParameterError(f"normal: n must be >= 0, got {n}")
        if sigma <= 0:
            raise ParameterError(f"normal: sigma must be > 0, got {sigma}")
        pairs = (n + 1) // 2
        u = self.uniform(2 * pairs)
        # 1 - u lies in (0, 1], so the log is always finite.
        r = np.sqrt(-2.0 * np.log(1.0 - u[:pairs]))
        theta = 2.0 * np.pi * u[pairs:]
        z = np.empty(2 * pairs)
        z[0::2] = r * np.cos(theta)
        z[1::2] = r * np.sin(theta)
        return mu + sigma * z[:n]

    def integers(self, n: int, bound: int) -> Array:
        """n draws uniform over {0, ..., bound - 1} as int64."""
        if bound < 1:
            raise ParameterError(f"integers: bound must be >= 1, got {bound}")
        return np.minimum(
            (self.uniform(n) * bound).astype(np.int64), bound - 1
        )

    def split(self, label: int) -> "Rng":
        """Derive an independent substream keyed by an integer label.

        The child seed is a mix of (seed, label), so distinct labels give
        unrelated streams and the parent counter is untouched.
        """
        with np.errstate(over="ignore"):
            key = _mix64(
                np.uint64([self.seed + _GOLDEN * np.uint64(int(label) & _U64_MASK)])
            )[0]
        return Rng(int(key))
