"""Numeric substrate: float64 vector helpers and a seeded random source.

Vectors and matrices are plain ``numpy.float64`` arrays. The helpers below
add the shape checks the rest of the package relies on.
"""

from __future__ import annotations

import numpy as np

from .errors import UsageError

RNG_ALGORITHM = "PCG64"


def as_vec(x) -> np.ndarray:
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise UsageError(f"expected a non-empty 1-D vector, got shape {v.shape}")
    return v


def _check_same(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise UsageError(f"dimension mismatch: {a.shape} vs {b.shape}")


def lr_sum(x: np.ndarray) -> np.ndarray:
    """Sum over the last axis strictly left to right.

    ``np.sum`` uses pairwise blocks whose order depends on length and memory
    layout; ``cumsum`` is sequential, which keeps results reproducible.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] == 0:
        return np.zeros(x.shape[:-1])
    return np.cumsum(x, axis=-1)[..., -1]


def dot(a, b) -> float:
    a, b = as_vec(a), as_vec(b)
    _check_same(a, b)
    return float(lr_sum(a * b))


def sq_dist(a, b) -> float:
    """Squared Euclidean distance ||a - b||^2."""
    a, b = as_vec(a), as_vec(b)
    _check_same(a, b)
    d = a - b
    return float(lr_sum(d * d))


def norm2(v) -> float:
    v = as_vec(v)
    return float(np.sqrt(lr_sum(v * v)))


def scale(alpha: float, v) -> np.ndarray:
    return float(alpha) * as_vec(v)


def axpy(alpha: float, x, y) -> np.ndarray:
    """Return alpha * x + y."""
    x, y = as_vec(x), as_vec(y)
    _check_same(x, y)
    return float(alpha) * x + y


def matvec(m, v) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    v = as_vec(v)
    if m.ndim != 2 or m.shape[1] != v.shape[0]:
        raise UsageError(f"shape mismatch: matrix {m.shape} times vector {v.shape}")
    return m @ v


def pairwise_sq_dists(x: np.ndarray) -> np.ndarray:
    """Symmetric matrix of squared distances between the rows of ``x``.

    Computed from explicit differences (not the Gram trick) so the diagonal
    is exactly zero and entries are never negative.
    """
    x = np.asarray(x, dtype=np.float64)
    diff = x[:, None, :] - x[None, :, :]
    return lr_sum(diff * diff)


class Rng:
    """Deterministic random source backed by numpy's PCG64 bit generator.

    ``stream`` selects an independent sub-stream for the same seed, so callers
    can hand out per-purpose generators (data, split, training) that do not
    perturb each other.
    """

    algorithm = RNG_ALGORITHM

    def __init__(self, seed: int, stream: int = 0):
        if seed < 0 or stream < 0:
            raise UsageError("seed and stream must be non-negative")
        self.seed = int(seed)
        self.stream = int(stream)
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream,))
        self._gen = np.random.Generator(np.random.PCG64(ss))

    def child(self, stream: int) -> "Rng":
        return Rng(self.seed, stream)

    def uniform(self, n: int) -> np.ndarray:
        if n < 0:
            raise UsageError("n must be >= 0")
        return self._gen.random(n)

    def gaussian(self, n: int | tuple) -> np.ndarray:
        return self._gen.standard_normal(n)

    def integers(self, high: int, size=None):
        return self._gen.integers(0, high, size=size)

    def shuffle(self, seq) -> list:
        """Return a shuffled copy of ``seq`` (Fisher-Yates on a list copy)."""
        out = list(seq)
        perm = self._gen.permutation(len(out))
        return [out[i] for i in perm]

    def sample_without_replacement(self, seq, k: int) -> list:
        seq = list(seq)
        if k > len(seq):
            raise UsageError(f"cannot draw {k} items from {len(seq)}")
        idx = self._gen.permutation(len(seq))[:k]
        return [seq[i] for i in idx]

    def choice_weighted(self, weights) -> int:
        """Draw index i with probability w_i / sum(w)."""
        return int(self.choice_weighted_many(weights, 1)[0])

    def choice_weighted_many(self, weights, n: int) -> np.ndarray:
        w = np.asarray(weights, dtype=np.float64)
        if w.ndim != 1 or w.size == 0:
            raise UsageError("weights must be a non-empty 1-D sequence")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise UsageError("weights must be finite and non-negative")
        cdf = np.cumsum(w)
        total = cdf[-1]
        if total <= 0:
            raise UsageError("weights must not all be zero")
        u = self._gen.random(n) * total
        # side="right" never lands on a zero-weight slot; the clamp guards
        # against u * total rounding up to total
        idx = np.searchsorted(cdf, u, side="right")
        return np.minimum(idx, np.flatnonzero(w > 0)[-1])

    def choice_weighted_rows(self, weights) -> np.ndarray:
        """One weighted draw per row of a (R, M) weight matrix.

        Consumes exactly R uniforms; row r yields column j with probability
        w[r, j] / sum(w[r]).
        """
        w = np.asarray(weights, dtype=np.float64)
        if w.ndim != 2 or w.shape[1] == 0:
            raise UsageError("weights must be a non-empty 2-D array")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise UsageError("weights must be finite and non-negative")
        cdf = np.cumsum(w, axis=1)
        total = cdf[:, -1]
        if np.any(total <= 0):
            raise UsageError("every row needs a positive weight")
        u = self._gen.random(w.shape[0]) * total
        idx = np.sum(cdf <= u[:, None], axis=1)
        last = w.shape[1] - 1 - np.argmax((w > 0)[:, ::-1], axis=1)
        return np.minimum(idx, last)
