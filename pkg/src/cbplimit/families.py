"""Ready-made control families, reference models and assumption checkers.

The three divisible families (Poisson, binomial, negative binomial) take the
root law of the size-divisible part per ``(k, j)``; when no parameter
functions are given the worked instances with known ``(rho0, sigma0)`` are
used.  Immigration defaults to ``Poisson(beta k / gamma_k)`` for every ``j``,
whose immigration mechanism tends to ``H(x, l) = beta l``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from . import lattice as lat
from .cbp import ScaledModel
from .control import ControlFamily, LawMap, ParametricMap, fixed_family
from .errors import DomainError
from .mechanisms import LimitParams

_JTOL = 1e-9


@dataclass(frozen=True)
class GammaRule:
    """Time scaling ``gamma_k = c k^p`` with ``0 < p <= 1``."""

    c: float = 1.0
    p: float = 1.0

    def __post_init__(self):
        if not self.c > 0:
            raise DomainError("gamma rule needs c > 0")
        if not 0 < self.p <= 1:
            raise DomainError("gamma rule needs 0 < p <= 1 so that gamma_k / k converges")

    def __call__(self, k: int) -> float:
        return self.c * float(k) ** self.p

    @property
    def gamma0(self) -> float:
        return self.c if self.p == 1 else 0.0


def poisson_immigration(gamma: GammaRule, beta: float = 1.0) -> LawMap:
    """``Poisson(beta k / gamma_k)`` for every ``j``."""
    return ParametricMap("poisson", rate=lambda k, j: beta * k / gamma(k) + 0.0 * j)


def _jpos(j):
    return np.maximum(np.asarray(j, dtype=float), 1.0)


def poisson_family(m: float, gamma: GammaRule, rate: Optional[Callable] = None,
                   rho0: Optional[float] = None, immigration: Optional[LawMap] = None,
                   beta: float = 1.0) -> ControlFamily:
    """Root ``Poisson(r_k(j))``; the control's divisible part is ``Poisson(j r_k(j))``.

    Default ``r_k(j) = (1 - 2/k + 1/(j k log k)) / m`` with ``rho0 = 2 gamma0``.
    ``sigma0 = m^-2`` in every case.
    """
    if rate is None:
        def rate(k, j):
            if k < 2:
                raise DomainError("the worked Poisson instance needs k >= 2")
            return (1.0 - 2.0 / k + 1.0 / (_jpos(j) * k * math.log(k))) / m
        rho0 = 2.0 * gamma.gamma0
    if rho0 is None:
        raise DomainError("a custom Poisson rate needs a declared rho0")
    immigration = immigration or poisson_immigration(gamma, beta)
    return ControlFamily(ParametricMap("poisson", rate=rate), immigration,
                         (float(rho0), m ** -2), "poisson")


def binomial_family(m: float, gamma: GammaRule, N: Optional[Callable] = None,
                    p: Optional[Callable] = None, rho0: Optional[float] = None,
                    p0: Optional[float] = None, immigration: Optional[LawMap] = None,
                    beta: float = 1.0) -> ControlFamily:
    """Root ``Binomial(N_k(j), p_k(j))``; ``sigma0 = m^-1 (m^-1 - p0)``.

    Default ``N_k(j) = 1 + j k (k + 1)``, ``p_k(j) = 1 / (m j k^2)``, with
    ``rho0 = -gamma0`` and ``p0 = 0``.
    """
    if N is None and p is None:
        def N(k, j):
            return 1.0 + _jpos(j) * k * (k + 1)

        def p(k, j):
            val = 1.0 / (m * _jpos(j) * k ** 2)
            if np.any(val > 1):
                raise DomainError("worked binomial instance needs 1/(m j k^2) <= 1")
            return val
        rho0, p0 = -gamma.gamma0, 0.0
    if N is None or p is None or rho0 is None or p0 is None:
        raise DomainError("a custom binomial family needs N, p, rho0 and p0")
    immigration = immigration or poisson_immigration(gamma, beta)
    return ControlFamily(ParametricMap("binomial", n=N, p=p), immigration,
                         (float(rho0), (1.0 / m) * (1.0 / m - p0)), "binomial")


def negbin_family(m: float, gamma: GammaRule, N: Optional[Callable] = None,
                  p: Optional[Callable] = None, rho0: Optional[float] = None,
                  q0: Optional[float] = None, immigration: Optional[LawMap] = None,
                  beta: float = 1.0) -> ControlFamily:
    """Root ``NegativeBinomial(N_k(j), p_k(j))``; ``sigma0 = m^-1 (m^-1 + q0)``.

    Default is the geometric instance ``N = 1``,
    ``p_k(j) = m e^{(j+k)^-2} / (1 + m e^{(j+k)^-2})`` with ``rho0 = 0``, ``q0 = 1/m``.
    """
    if N is None and p is None:
        def N(k, j):
            return 1.0 + 0.0 * np.asarray(j, dtype=float)

        def p(k, j):
            w = m * np.exp((np.asarray(j, dtype=float) + k) ** -2.0)
            return w / (1.0 + w)
        rho0, q0 = 0.0, 1.0 / m
    if N is None or p is None or rho0 is None or q0 is None:
        raise DomainError("a custom negative binomial family needs N, p, rho0 and q0")
    immigration = immigration or poisson_immigration(gamma, beta)
    return ControlFamily(ParametricMap("negbin", r=N, p=p), immigration,
                         (float(rho0), (1.0 / m) * (1.0 / m + q0)), "negbin")


@dataclass(frozen=True)
class MomentRow:
    k: int
    gamma_k: float
    dev1: float
    dev2: float
    argmax_j1: int
    argmax_j2: int


@dataclass(frozen=True)
class MomentReport:
    rows: tuple
    mode: str
    monotone_dev1: bool
    monotone_dev2: bool


def _non_increasing(seq: Sequence[float]) -> bool:
    return all(b <= a * (1 + 1e-12) + 1e-15 for a, b in zip(seq, seq[1:]))


def verify_moment_assumption(family: ControlFamily, m: float, gamma: Callable[[int], float],
                             k_list: Iterable[int], j_max: int = 10_000) -> MomentReport:
    """Sup over ``j <= j_max`` of the first/second factorial-moment deviations.

    ``dev1 = sup_j |gamma_k [1 - m f'(1-)] - rho0|`` and
    ``dev2 = sup_j |f''(1-) - sigma0|`` with ``f = f_k^(j)``.
    """
    if family.declared_limits is None:
        raise DomainError("family has no declared (rho0, sigma0)")
    rho0, sigma0 = family.declared_limits
    rows = []
    for k in k_list:
        g = gamma(k)
        d1 = np.empty(j_max)
        d2 = np.empty(j_max)
        for idx, j in enumerate(range(1, j_max + 1)):
            root = family.root_law(k, j)
            d1[idx] = abs(g * (1.0 - m * root.factorial_moment(1)) - rho0)
            d2[idx] = abs(root.factorial_moment(2) - sigma0)
        rows.append(MomentRow(int(k), g, float(d1.max()), float(d2.max()),
                              int(d1.argmax()) + 1, int(d2.argmax()) + 1))
    return MomentReport(tuple(rows), f"grid j in 1..{j_max}",
                        _non_increasing([r.dev1 for r in rows]),
                        _non_increasing([r.dev2 for r in rows]))


@dataclass(frozen=True)
class GrowthReport:
    K1_hat: float
    argmax_x: float


def verify_immigration_growth(family: ControlFamily, k: int, gamma_k: float,
                              x_grid: Iterable[float]) -> GrowthReport:
    """Smallest ``K1`` with ``(gamma_k / k) h'(1-) <= K1 (1 + x)`` on ``x_grid``."""
    best, where = 0.0, 0.0
    for x in x_grid:
        if x < 0:
            raise DomainError("x must be non-negative")
        j = int(math.floor(k * x + _JTOL))
        ratio = gamma_k / k * family.immigration_law(k, j).mean / (1.0 + x)
        if ratio > best:
            best, where = ratio, float(x)
    return GrowthReport(best, where)


# reference models -----------------------------------------------------------

def binary_offspring(b: float = 1.0) -> lat.Explicit:
    """Critical law ``[b^2/2, 1 - b^2, b^2/2]``, PGF ``s + (b^2/2)(1 - s)^2``."""
    if not 0 <= b <= 1:
        raise DomainError("binary offspring law needs 0 <= b <= 1")
    half = 0.5 * b * b
    return lat.Explicit((half, 1.0 - 2 * half, half))


def identity_model(k: int) -> ScaledModel:
    """Deterministic model with ``Z(n+1) = Z(n)``."""
    return ScaledModel(k, float(k), lat.Dirac(1), fixed_family(lat.Dirac(1), lat.Dirac(0)), 1.0, 1.0)


def trivial_limit() -> LimitParams:
    return LimitParams(m=1.0, gamma0=1.0)


def binary_branching_model(k: int, b: float = 1.0, beta: float = 1.0) -> ScaledModel:
    """Binary branching, ``gamma_k = k``, root ``Dirac(1)``, immigration ``Poisson(beta)``."""
    family = fixed_family(lat.Dirac(1), lat.Poisson(beta), declared_limits=(0.0, 0.0))
    return ScaledModel(k, float(k), binary_offspring(b), family, 1.0, 1.0)


def binary_branching_limit(b: float = 1.0, beta: float = 1.0) -> LimitParams:
    """Feller diffusion with immigration: ``G = b^2 l^2 / 2``, ``H = beta l``."""
    return LimitParams(a=0.0, b=b, alpha=beta, m=1.0, gamma0=1.0, rho0=0.0, sigma0=0.0, K=beta)


def poisson_offspring_model(k: int, m: float = 1.0, beta: float = 1.0) -> ScaledModel:
    """``Poisson(m)`` offspring, ``gamma_k = k``; ``G_k -> m l^2 / 2``.

    The root law has mean ``1/m`` exactly (``Dirac(1)`` when ``m = 1``, else
    ``Poisson(1/m)``), so ``rho0 = 0``.
    """
    if m == 1.0:
        family = fixed_family(lat.Dirac(1), lat.Poisson(beta), declared_limits=(0.0, 0.0))
    else:
        family = fixed_family(lat.Poisson(1.0 / m), lat.Poisson(beta), declared_limits=(0.0, m ** -2))
    return ScaledModel(k, float(k), lat.Poisson(m), family, m, 1.0)


__all__ = [
    "GammaRule", "poisson_immigration", "poisson_family", "binomial_family", "negbin_family",
    "MomentRow", "MomentReport", "verify_moment_assumption", "GrowthReport",
    "verify_immigration_growth", "binary_offspring", "identity_model", "trivial_limit",
    "binary_branching_model", "binary_branching_limit", "poisson_offspring_model",
]
