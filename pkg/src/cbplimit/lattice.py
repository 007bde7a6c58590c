"""Probability laws on the non-negative integers.

Every law exposes its probability generating function (PGF), left derivatives
of the PGF at any point of [0, 1] (so factorial moments come out in closed
form), exact sampling, and a vectorised sampler for sums of i.i.d. copies.
Parametric laws can be materialised into an :class:`Explicit` pmf, which is
what :func:`convolve_power` works on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Union

import numpy as np
from scipy import signal, stats

from .errors import DomainError, TruncationError

ArrayLike = Union[float, np.ndarray]

#: parametric laws are cut where the cumulative mass first exceeds 1 - MATERIALIZE_TAIL
MATERIALIZE_TAIL = 1e-12
#: maximum mass a truncated convolution power may drop
CONVOLVE_TAIL = 1e-9
EXPLICIT_SUM_TOL = 1e-10


def _as_unit(s: ArrayLike) -> np.ndarray:
    arr = np.asarray(s, dtype=float)
    if np.any(~((arr >= 0.0) & (arr <= 1.0))):
        raise DomainError(f"PGF argument must lie in [0, 1], got {s!r}")
    return arr


def _out(arr: np.ndarray) -> ArrayLike:
    return float(arr) if arr.ndim == 0 else arr


def _falling(n: float, r: int) -> float:
    out = 1.0
    for i in range(r):
        out *= n - i
    return out


def _rising(x: float, r: int) -> float:
    out = 1.0
    for i in range(r):
        out *= x + i
    return out


class LatticeLaw:
    """Base class; concrete laws are frozen dataclasses below."""

    def pgf(self, s: ArrayLike) -> ArrayLike:
        s = _as_unit(s)
        val = np.clip(self._pgf(s), 0.0, 1.0)
        return _out(np.where(s == 1.0, 1.0, val))

    def one_minus_pgf(self, u: ArrayLike) -> ArrayLike:
        """``1 - g(1 - u)`` without cancellation for small ``u``."""
        u = _as_unit(u)
        return _out(np.clip(self._one_minus_pgf(u), 0.0, 1.0))

    def derivative(self, s: ArrayLike, order: int) -> ArrayLike:
        """Left derivative of the PGF of the given order at ``s``."""
        if order < 0:
            raise DomainError("derivative order must be non-negative")
        s = _as_unit(s)
        if order == 0:
            return self.pgf(s)
        return _out(np.asarray(self._derivative(s, order), dtype=float))

    def factorial_moment(self, order: int) -> float:
        return float(self.derivative(1.0, order))

    @cached_property
    def mean(self) -> float:
        return self.factorial_moment(1)

    def sample(self, rng: np.random.Generator, size=None):
        raise NotImplementedError

    def sample_sum(self, counts: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """For each entry ``c`` of ``counts`` draw the sum of ``c`` i.i.d. copies."""
        counts = np.asarray(counts, dtype=np.int64)
        return np.array([int(self.sample(rng, size=int(c)).sum()) for c in counts.ravel()],
                        dtype=np.int64).reshape(counts.shape)

    def aggregate(self, copies: int) -> Optional["LatticeLaw"]:
        """Parametric law of the sum of ``copies`` i.i.d. copies, if one exists."""
        return None

    def _pmf_array(self) -> np.ndarray:
        raise NotImplementedError

    def materialize(self) -> "Explicit":
        return Explicit(tuple(self._pmf_array()))


def _cut(pmf: np.ndarray) -> np.ndarray:
    cum = np.cumsum(pmf)
    idx = np.searchsorted(cum, 1.0 - MATERIALIZE_TAIL, side="left")
    return pmf[: min(idx, len(pmf) - 1) + 1]


def _scipy_pmf(dist) -> np.ndarray:
    hi = int(dist.ppf(1.0 - MATERIALIZE_TAIL / 100.0)) + 2
    return _cut(dist.pmf(np.arange(hi + 1)))


@dataclass(frozen=True)
class Dirac(LatticeLaw):
    n: int

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 0:
            raise DomainError(f"Dirac location must be a non-negative integer, got {self.n}")

    def _pgf(self, s):
        return s ** self.n

    def _one_minus_pgf(self, u):
        if self.n == 0:
            return np.zeros_like(u)
        with np.errstate(divide="ignore"):
            return -np.expm1(self.n * np.log1p(-u))

    def _derivative(self, s, order):
        if order > self.n:
            return np.zeros_like(s)
        return _falling(self.n, order) * s ** (self.n - order)

    def sample(self, rng, size=None):
        return self.n if size is None else np.full(size, self.n, dtype=np.int64)

    def sample_sum(self, counts, rng):
        return self.n * np.asarray(counts, dtype=np.int64)

    def aggregate(self, copies):
        return Dirac(self.n * copies)

    def _pmf_array(self):
        pmf = np.zeros(self.n + 1)
        pmf[self.n] = 1.0
        return pmf


@dataclass(frozen=True)
class Bernoulli(LatticeLaw):
    p: float

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise DomainError(f"Bernoulli p must lie in [0, 1], got {self.p}")

    def _pgf(self, s):
        return 1.0 - self.p * (1.0 - s)

    def _one_minus_pgf(self, u):
        return self.p * u

    def _derivative(self, s, order):
        return np.full_like(s, self.p if order == 1 else 0.0)

    def sample(self, rng, size=None):
        out = rng.binomial(1, self.p, size=size)
        return int(out) if size is None else out

    def sample_sum(self, counts, rng):
        return rng.binomial(np.asarray(counts, dtype=np.int64), self.p)

    def aggregate(self, copies):
        return Binomial(copies, self.p) if copies > 0 else Dirac(0)

    def _pmf_array(self):
        return np.array([1.0 - self.p, self.p]) if self.p > 0 else np.array([1.0])


@dataclass(frozen=True)
class Binomial(LatticeLaw):
    n: int
    p: float

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise DomainError(f"Binomial n must be a positive integer, got {self.n}")
        if not 0.0 <= self.p <= 1.0:
            raise DomainError(f"Binomial p must lie in [0, 1], got {self.p}")

    def _pgf(self, s):
        return (1.0 - self.p * (1.0 - s)) ** self.n

    def _one_minus_pgf(self, u):
        with np.errstate(divide="ignore"):
            return -np.expm1(self.n * np.log1p(-self.p * u))

    def _derivative(self, s, order):
        if order > self.n:
            return np.zeros_like(s)
        return _falling(self.n, order) * self.p ** order * (1.0 - self.p * (1.0 - s)) ** (self.n - order)

    def sample(self, rng, size=None):
        out = rng.binomial(self.n, self.p, size=size)
        return int(out) if size is None else out

    def sample_sum(self, counts, rng):
        return rng.binomial(self.n * np.asarray(counts, dtype=np.int64), self.p)

    def aggregate(self, copies):
        return Binomial(self.n * copies, self.p) if copies > 0 else Dirac(0)

    def _pmf_array(self):
        return _scipy_pmf(stats.binom(self.n, self.p))


@dataclass(frozen=True)
class Poisson(LatticeLaw):
    rate: float

    def __post_init__(self):
        if not self.rate >= 0.0 or not math.isfinite(self.rate):
            raise DomainError(f"Poisson rate must be a non-negative real, got {self.rate}")

    def _pgf(self, s):
        return np.exp(self.rate * (s - 1.0))

    def _one_minus_pgf(self, u):
        return -np.expm1(-self.rate * u)

    def _derivative(self, s, order):
        return self.rate ** order * np.exp(self.rate * (s - 1.0))

    def sample(self, rng, size=None):
        out = rng.poisson(self.rate, size=size)
        return int(out) if size is None else out

    def sample_sum(self, counts, rng):
        return rng.poisson(self.rate * np.asarray(counts, dtype=np.int64))

    def aggregate(self, copies):
        return Poisson(self.rate * copies)

    def _pmf_array(self):
        if self.rate == 0:
            return np.array([1.0])
        return _scipy_pmf(stats.poisson(self.rate))


@dataclass(frozen=True)
class NegativeBinomial(LatticeLaw):
    """Failures before the ``r``-th success, success probability ``p``."""

    r: float
    p: float

    def __post_init__(self):
        if not self.r > 0 or not math.isfinite(self.r):
            raise DomainError(f"NegativeBinomial r must be a positive real, got {self.r}")
        if not 0.0 < self.p <= 1.0:
            raise DomainError(f"NegativeBinomial p must lie in (0, 1], got {self.p}")

    @property
    def q(self) -> float:
        return 1.0 - self.p

    def _pgf(self, s):
        return (self.p / (self.p + self.q * (1.0 - s))) ** self.r

    def _one_minus_pgf(self, u):
        return -np.expm1(-self.r * np.log1p(self.q * u / self.p))

    def _derivative(self, s, order):
        base = self.p / (self.p + self.q * (1.0 - s))
        return _rising(self.r, order) * (self.q / self.p) ** order * base ** (self.r + order)

    def sample(self, rng, size=None):
        if self.p == 1.0:
            return 0 if size is None else np.zeros(size, dtype=np.int64)
        out = rng.negative_binomial(self.r, self.p, size=size)
        return int(out) if size is None else out

    def sample_sum(self, counts, rng):
        counts = np.asarray(counts, dtype=np.int64)
        out = np.zeros(counts.shape, dtype=np.int64)
        live = counts > 0
        if self.p < 1.0 and np.any(live):
            out[live] = rng.negative_binomial(self.r * counts[live], self.p)
        return out

    def aggregate(self, copies):
        return NegativeBinomial(self.r * copies, self.p) if copies > 0 else Dirac(0)

    def _pmf_array(self):
        if self.p == 1.0:
            return np.array([1.0])
        return _scipy_pmf(stats.nbinom(self.r, self.p))


@dataclass(frozen=True)
class Geometric(LatticeLaw):
    """Failures before the first success."""

    p: float

    def __post_init__(self):
        if not 0.0 < self.p <= 1.0:
            raise DomainError(f"Geometric p must lie in (0, 1], got {self.p}")

    @cached_property
    def _nb(self) -> NegativeBinomial:
        return NegativeBinomial(1.0, self.p)

    def _pgf(self, s):
        return self._nb._pgf(s)

    def _one_minus_pgf(self, u):
        return self._nb._one_minus_pgf(u)

    def _derivative(self, s, order):
        return self._nb._derivative(s, order)

    def sample(self, rng, size=None):
        return self._nb.sample(rng, size)

    def sample_sum(self, counts, rng):
        return self._nb.sample_sum(counts, rng)

    def aggregate(self, copies):
        return self._nb.aggregate(copies)

    def _pmf_array(self):
        return self._nb._pmf_array()


@dataclass(frozen=True)
class Explicit(LatticeLaw):
    pmf: tuple

    def __post_init__(self):
        arr = np.asarray(self.pmf, dtype=float)
        if arr.ndim != 1 or arr.size == 0:
            raise DomainError("Explicit pmf must be a non-empty 1-d sequence")
        if np.any(~(arr >= 0)):
            raise DomainError("Explicit pmf entries must be non-negative")
        if abs(arr.sum() - 1.0) > EXPLICIT_SUM_TOL:
            raise DomainError(f"Explicit pmf must sum to 1 (got {arr.sum()!r})")
        object.__setattr__(self, "pmf", tuple(float(x) for x in arr))

    @cached_property
    def _arr(self) -> np.ndarray:
        return np.asarray(self.pmf)

    @cached_property
    def _cdf(self) -> np.ndarray:
        return np.cumsum(self._arr)

    def _pgf(self, s):
        return np.polynomial.polynomial.polyval(s, self._arr)

    def _one_minus_pgf(self, u):
        idx = np.arange(self._arr.size)
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = -np.expm1(np.multiply.outer(np.log1p(-u), idx))
        terms = np.where(idx == 0, 0.0, terms)
        return terms @ self._arr

    def _derivative(self, s, order):
        coeffs = np.polynomial.polynomial.polyder(self._arr, order)
        return np.polynomial.polynomial.polyval(s, coeffs)

    def sample(self, rng, size=None):
        u = rng.random(size)
        idx = np.minimum(np.searchsorted(self._cdf, u, side="right"), self._arr.size - 1)
        return int(idx) if size is None else idx.astype(np.int64)

    def sample_sum(self, counts, rng):
        # sequential conditional binomials: an exact multinomial split per entry
        counts = np.asarray(counts, dtype=np.int64)
        remaining = counts.copy()
        total = np.zeros(counts.shape, dtype=np.int64)
        mass_left = 1.0
        for value, prob in enumerate(self._arr[:-1]):
            if prob > 0:
                share = min(1.0, prob / mass_left) if mass_left > 0 else 1.0
                drawn = rng.binomial(remaining, share)
                total += value * drawn
                remaining -= drawn
            mass_left -= prob
        total += (self._arr.size - 1) * remaining
        return total

    def _pmf_array(self):
        return self._arr.copy()

    def materialize(self) -> "Explicit":
        return self


def pgf_eval(law: LatticeLaw, s: ArrayLike) -> ArrayLike:
    return law.pgf(s)


def factorial_moment(law: LatticeLaw, order: int) -> float:
    """Mean (order 1) or ``E[Y(Y-1)]`` (order 2), the left PGF derivative at 1."""
    if order not in (1, 2):
        raise DomainError(f"factorial moment order must be 1 or 2, got {order}")
    return law.factorial_moment(order)


def sample(law: LatticeLaw, rng: np.random.Generator) -> int:
    return law.sample(rng)


def _convolve(a: np.ndarray, b: np.ndarray, keep: int) -> np.ndarray:
    if a.size * b.size <= 4_000_000:
        out = np.convolve(a, b)
    else:
        out = np.clip(signal.fftconvolve(a, b), 0.0, None)
    return out[:keep]


def convolve_power(law: LatticeLaw, j: int, truncation: int) -> Explicit:
    """Pmf of the sum of ``j`` i.i.d. copies of ``law`` on ``{0, ..., truncation}``.

    Raises :class:`TruncationError` when more than ``1e-9`` of the mass lies
    beyond ``truncation``.
    """
    if j < 0 or int(j) != j:
        raise DomainError(f"convolution power must be a non-negative integer, got {j}")
    if truncation < 1:
        raise DomainError("truncation must be a positive integer")
    if j == 0:
        return Explicit((1.0,))
    keep = truncation + 1
    base = np.asarray(law.materialize().pmf)[:keep]
    result = np.array([1.0])
    power = j
    while True:
        if power & 1:
            result = _convolve(result, base, keep)
        power >>= 1
        if not power:
            break
        base = _convolve(base, base, keep)
    tail = 1.0 - result.sum()
    if tail > CONVOLVE_TAIL:
        raise TruncationError(
            f"{j}-fold convolution leaves mass {tail:.3g} beyond index {truncation}")
    if tail > EXPLICIT_SUM_TOL:
        result = result / result.sum()
    last = np.flatnonzero(result)
    return Explicit(tuple(result[: last[-1] + 1]))


def total_variation(p: np.ndarray, q: np.ndarray) -> float:
    n = max(len(p), len(q))
    a = np.zeros(n)
    b = np.zeros(n)
    a[: len(p)] = p
    b[: len(q)] = q
    return 0.5 * float(np.abs(a - b).sum())


def empirical_pmf(draws: np.ndarray) -> np.ndarray:
    draws = np.asarray(draws, dtype=np.int64)
    return np.bincount(draws) / draws.size
