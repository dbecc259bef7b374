"""Polynomial k-wise independent hashing and the nested universe subsampler."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MERSENNE_31 = (1 << 31) - 1
MERSENNE_61 = (1 << 61) - 1


def prime_for(n: int) -> int:
    """Smallest supported Mersenne prime strictly above the universe size."""
    if n < MERSENNE_31:
        return MERSENNE_31
    if n < MERSENNE_61:
        return MERSENNE_61
    raise ValueError(f"universe of size {n} is too large")


@dataclass(frozen=True)
class KWiseHash:
    """h(x) = (c_0 + c_1 x + ... + c_{k-1} x^{k-1} mod p) mod R.

    ``coefficients`` has shape (k,) for a single function or (rows, k) for a
    stack of independent functions evaluated together.
    """

    k: int
    p: int
    coefficients: np.ndarray
    R: int

    def __post_init__(self):
        coeffs = np.asarray(self.coefficients, dtype=np.uint64)
        if self.k < 1 or coeffs.shape[-1] != self.k:
            raise ValueError("coefficient count must equal the degree k")
        if np.any(coeffs >= np.uint64(self.p)):
            raise ValueError("coefficients must lie in [0, p)")
        if self.R < 1:
            raise ValueError("range R must be positive")
        object.__setattr__(self, "coefficients", coeffs)

    @classmethod
    def random(cls, k: int, R: int, rng: np.random.Generator, n: int, rows: int | None = None):
        p = prime_for(n)
        shape = (k,) if rows is None else (rows, k)
        coeffs = rng.integers(0, p, size=shape, dtype=np.uint64)
        return cls(k, p, coeffs, R)

    @property
    def rows(self) -> int:
        return 1 if self.coefficients.ndim == 1 else self.coefficients.shape[0]

    def __call__(self, x):
        """Evaluate on an int or array of ints.

        Returns shape ``x.shape`` for a single function, (rows,) + x.shape for a stack.
        """
        scalar = np.ndim(x) == 0
        xs = np.atleast_1d(np.asarray(x, dtype=np.int64))
        if xs.size and (xs.min() < 0 or xs.max() >= self.p):
            raise ValueError("hash input out of range")
        coeffs = self.coefficients.reshape(-1, self.k)
        if self.p <= MERSENNE_31:
            out = self._horner_int64(coeffs, xs)
        else:
            out = self._horner_object(coeffs, xs)
        out = out % self.R
        if self.coefficients.ndim == 1:
            out = out[0]
            return int(out[0]) if scalar else out
        return out[:, 0] if scalar else out

    def _horner_int64(self, coeffs, xs):
        c = coeffs.astype(np.int64)
        x = xs[None, :]
        acc = np.zeros((c.shape[0], xs.size), dtype=np.int64)
        # every intermediate stays below p^2 < 2^62
        for d in range(self.k - 1, -1, -1):
            acc = (acc * x + c[:, d : d + 1]) % self.p
        return acc

    def _horner_object(self, coeffs, xs):
        c = coeffs.astype(object)
        x = xs.astype(object)[None, :]
        acc = np.zeros((c.shape[0], xs.size), dtype=object)
        for d in range(self.k - 1, -1, -1):
            acc = (acc * x + c[:, d : d + 1]) % self.p
        return acc.astype(np.int64)


def trailing_zeros(values: np.ndarray, cap: int) -> np.ndarray:
    """Number of trailing zero bits of each value, with zero mapped to ``cap``."""
    v = np.asarray(values, dtype=np.int64)
    out = np.full(v.shape, cap, dtype=np.int64)
    nz = v != 0
    low = v[nz] & -v[nz]
    out[nz] = np.minimum(np.log2(low.astype(np.float64)).astype(np.int64), cap)
    return out


class Subsampler:
    """Nested sampling of the universe: x is in S_j iff the j low bits of h(x) are 0.

    S_0 is the whole universe and S_{j+1} is a subset of S_j.
    """

    def __init__(self, hash_fn: KWiseHash, s: int):
        if s < 0:
            raise ValueError("s must be nonnegative")
        self.hash = hash_fn
        self.s = s

    @classmethod
    def random(cls, n: int, s: int, degree: int, rng: np.random.Generator) -> "Subsampler":
        return cls(KWiseHash.random(degree, 1 << max(s, 1), rng, n), s)

    def depth(self, x) -> np.ndarray:
        """Deepest level whose substream contains x (capped at s)."""
        return trailing_zeros(self.hash(x), self.s)

    def member(self, j: int, x) -> bool | np.ndarray:
        if not 0 <= j <= self.s:
            raise ValueError(f"substream level {j} outside [0, {self.s}]")
        d = self.depth(x)
        return bool(d >= j) if np.ndim(d) == 0 else d >= j

    def members(self, j: int, n: int) -> np.ndarray:
        """All items of the universe [0, n) that fall in S_j."""
        if not 0 <= j <= self.s:
            raise ValueError(f"substream level {j} outside [0, {self.s}]")
        return np.flatnonzero(self.depth(np.arange(n)) >= j)


def substream_member(sub: Subsampler, j: int, x) -> bool:
    return sub.member(j, x)


def hash_eval(h: KWiseHash, x):
    return h(x)
