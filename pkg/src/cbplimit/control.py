"""Control variables split into a size-divisible part and an immigration part.

With ``j`` parents the control is ``phi(j) = varphi(j) + psi(j)`` where
``varphi(j)`` is a sum of ``j`` i.i.d. copies of a root law with PGF
``f^(j)`` and ``psi(j)`` has PGF ``h^(j)``.  The control PGF therefore
factorises as ``c^(j) = [f^(j)]^j h^(j)`` (and ``c^(0) = h^(0)``).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, NamedTuple, Optional, Union

import numpy as np

from . import lattice as lat
from .errors import DomainError
from .lattice import LatticeLaw

ParamFn = Union[float, Callable[[int, np.ndarray], np.ndarray]]

_KINDS = {
    "dirac": ("n",),
    "bernoulli": ("p",),
    "binomial": ("n", "p"),
    "poisson": ("rate",),
    "geometric": ("p",),
    "negbin": ("r", "p"),
}


class LawMap:
    """A map ``(k, j) -> LatticeLaw`` with a vectorised sum sampler."""

    def law(self, k: int, j: int) -> LatticeLaw:
        raise NotImplementedError

    def sample_sum(self, k: int, j: np.ndarray, copies: np.ndarray,
                   rng: np.random.Generator) -> np.ndarray:
        """Sum of ``copies[i]`` i.i.d. draws from ``law(k, j[i])`` for every ``i``."""
        j = np.asarray(j, dtype=np.int64)
        copies = np.asarray(copies, dtype=np.int64)
        out = np.zeros(j.shape, dtype=np.int64)
        for value in np.unique(j):
            mask = j == value
            out[mask] = self.law(k, int(value)).sample_sum(copies[mask], rng)
        return out


class FunctionMap(LawMap):
    """Wraps an arbitrary user callable; laws are memoised per ``(k, j)``."""

    def __init__(self, fn: Callable[[int, int], LatticeLaw]):
        self._fn = fn
        self._cached = lru_cache(maxsize=65536)(fn)

    def law(self, k, j):
        return self._cached(int(k), int(j))


class ConstantMap(LawMap):
    """The same law for every ``(k, j)``."""

    def __init__(self, law: LatticeLaw):
        self._law = law

    def law(self, k, j):
        return self._law

    def sample_sum(self, k, j, copies, rng):
        return self._law.sample_sum(np.asarray(copies, dtype=np.int64), rng)


class ParametricMap(LawMap):
    """A fixed parametric kind whose parameters are functions of ``(k, j)``.

    Parameter callables receive ``k`` and a numpy array of ``j`` values and
    must broadcast; constants are accepted as plain numbers.  Because sums of
    i.i.d. copies of these kinds stay in the same kind, sampling draws one
    aggregate variate per entry.
    """

    def __init__(self, kind: str, **params: ParamFn):
        if kind not in _KINDS:
            raise DomainError(f"unknown parametric kind {kind!r}; expected one of {sorted(_KINDS)}")
        missing = set(_KINDS[kind]) - set(params)
        extra = set(params) - set(_KINDS[kind])
        if missing or extra:
            raise DomainError(f"{kind} needs parameters {_KINDS[kind]}, got {sorted(params)}")
        self.kind = kind
        self.params = params
        self._cached = lru_cache(maxsize=65536)(self._build)

    def _eval(self, name: str, k: int, j: np.ndarray) -> np.ndarray:
        fn = self.params[name]
        val = fn(k, j) if callable(fn) else fn
        return np.broadcast_to(np.asarray(val, dtype=float), np.shape(j))

    def _build(self, k: int, j: int) -> LatticeLaw:
        jj = np.asarray(j, dtype=np.int64)
        vals = {name: float(self._eval(name, k, jj)) for name in _KINDS[self.kind]}
        if self.kind == "dirac":
            return lat.Dirac(_as_int(vals["n"]))
        if self.kind == "bernoulli":
            return lat.Bernoulli(vals["p"])
        if self.kind == "binomial":
            return lat.Binomial(_as_int(vals["n"]), vals["p"])
        if self.kind == "poisson":
            return lat.Poisson(vals["rate"])
        if self.kind == "geometric":
            return lat.Geometric(vals["p"])
        return lat.NegativeBinomial(vals["r"], vals["p"])

    def law(self, k, j):
        return self._cached(int(k), int(j))

    def sample_sum(self, k, j, copies, rng):
        j = np.asarray(j, dtype=np.int64)
        copies = np.asarray(copies, dtype=np.int64)
        ev = {name: self._eval(name, k, j) for name in _KINDS[self.kind]}
        if "p" in ev:
            p = ev["p"]
            lo_ok = p > 0 if self.kind in ("geometric", "negbin") else p >= 0
            if not np.all(lo_ok & (p <= 1)):
                raise DomainError(f"{self.kind} probability left its domain for k={k}")
        if self.kind == "dirac":
            return np.rint(ev["n"]).astype(np.int64) * copies
        if self.kind == "bernoulli":
            return rng.binomial(copies, ev["p"])
        if self.kind == "binomial":
            return rng.binomial(np.rint(ev["n"]).astype(np.int64) * copies, ev["p"])
        if self.kind == "poisson":
            return rng.poisson(ev["rate"] * copies)
        r = np.ones_like(ev["p"]) if self.kind == "geometric" else ev["r"]
        out = np.zeros(j.shape, dtype=np.int64)
        live = (copies > 0) & (ev["p"] < 1)
        if np.any(live):
            out[live] = rng.negative_binomial(r[live] * copies[live], ev["p"][live])
        return out


def _as_int(x: float) -> int:
    n = int(round(x))
    if abs(n - x) > 1e-9:
        raise DomainError(f"integer parameter expected, got {x}")
    return n


@dataclass(frozen=True)
class ControlFamily:
    """Root laws ``f_k^(j)`` and immigration laws ``h_k^(j)`` for every ``(k, j)``.

    ``declared_limits`` holds ``(rho0, sigma0)`` when they are known in closed form.
    """

    root: LawMap
    immigration: LawMap
    declared_limits: Optional[tuple] = None
    name: str = "custom"

    def root_law(self, k: int, j: int) -> LatticeLaw:
        return self.root.law(k, j)

    def immigration_law(self, k: int, j: int) -> LatticeLaw:
        return self.immigration.law(k, j)


def fixed_family(root: LatticeLaw, immigration: LatticeLaw, *,
                 declared_limits=None, name: str = "fixed") -> ControlFamily:
    return ControlFamily(ConstantMap(root), ConstantMap(immigration), declared_limits, name)


class ControlDraw(NamedTuple):
    divisible_part: int
    immigration_part: int
    total: int


def _check_j(j: int) -> None:
    if j < 0 or int(j) != j:
        raise DomainError(f"number of parents must be a non-negative integer, got {j}")


def control_pgf(family: ControlFamily, k: int, j: int, s):
    _check_j(j)
    h = family.immigration_law(k, j).pgf(s)
    if j == 0:
        return h
    return family.root_law(k, j).pgf(s) ** j * h


def log_control_pgf(family: ControlFamily, k: int, j: int, u):
    """``log c_k^(j)(1 - u)``, accurate when ``u`` is small."""
    _check_j(j)
    with np.errstate(divide="ignore"):
        out = np.log1p(-np.asarray(family.immigration_law(k, j).one_minus_pgf(u)))
        if j > 0:
            out = out + j * np.log1p(-np.asarray(family.root_law(k, j).one_minus_pgf(u)))
    return float(out) if np.ndim(out) == 0 else out


def sample_control(family: ControlFamily, k: int, j: int, rng: np.random.Generator,
                   fast: bool = False) -> ControlDraw:
    """One control draw with ``j`` parents.

    The divisible part is the sum of ``j`` individual root draws unless
    ``fast`` is set and the root law has a parametric ``j``-fold convolution.
    """
    _check_j(j)
    divisible = 0
    if j > 0:
        root = family.root_law(k, j)
        agg = root.aggregate(j) if fast else None
        divisible = int(agg.sample(rng)) if agg is not None else int(root.sample(rng, size=j).sum())
    immigration = int(family.immigration_law(k, j).sample(rng))
    return ControlDraw(divisible, immigration, divisible + immigration)


def sample_control_batch(family: ControlFamily, k: int, j: np.ndarray,
                         rng: np.random.Generator) -> tuple:
    """Vectorised control draws for an array of parent counts.

    Returns ``(divisible_parts, immigration_parts)``.
    """
    j = np.asarray(j, dtype=np.int64)
    divisible = family.root.sample_sum(k, j, j, rng)
    immigration = family.immigration.sample_sum(k, j, np.ones_like(j), rng)
    return divisible, immigration


def control_law(family: ControlFamily, k: int, j: int, truncation: int) -> lat.Explicit:
    """Exact pmf of the total control with ``j`` parents, via explicit convolutions."""
    _check_j(j)
    div = lat.convolve_power(family.root_law(k, j), j, truncation) if j > 0 else lat.Explicit((1.0,))
    imm = family.immigration_law(k, j).materialize()
    pmf = np.convolve(div.pmf, imm.pmf)[: truncation + 1]
    if 1.0 - pmf.sum() > lat.CONVOLVE_TAIL:
        raise lat.TruncationError(f"control law leaves mass beyond index {truncation}")
    return lat.Explicit(tuple(pmf / pmf.sum()))


__all__ = [
    "LawMap", "FunctionMap", "ConstantMap", "ParametricMap", "ControlFamily", "ControlDraw",
    "fixed_family", "control_pgf", "log_control_pgf", "sample_control", "sample_control_batch",
    "control_law",
]
