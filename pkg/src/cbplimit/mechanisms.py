"""Branching and immigration mechanisms, generators on exponentials, diagnostics.

Discrete side (depends on a :class:`ScaledModel`):

* ``G_k(l)  = (k gamma_k / m) [g_k(1 - l/k) - (1 - m l/k)]``
* ``S_k(l)  = (k gamma_k / m) [g_k(exp(-l/k)) - (1 - m l/k)]``
* ``T_k(l)  = k [1 - g_k(exp(-l/k))]``
* ``H_k(x, l) = gamma_k [1 - h_k^(floor(kx))(1 - l/k)]``
* ``A_k e_l(x) = gamma_k [c_k^(kx)(g_k(exp(-l/k))) - exp(-l x)]``

Limit side (depends on :class:`LimitParams`): ``G``, ``H`` and
``A e_l(x) = exp(-l x) [x (G(l) + rho0 l + gamma0 sigma0 m^2 l^2 / 2) - H(x, m l)]``.

Every PGF difference is routed through ``one_minus_pgf`` so that the
``k``-fold amplification does not eat the significant digits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .cbp import ScaledModel
from .control import ControlFamily, log_control_pgf
from .errors import DomainError, InvariantViolation

_LATTICE_TOL = 1e-9


@dataclass(frozen=True)
class Affine:
    """``x -> intercept + slope * x``; also usable as ``r(x, u)`` (ignores ``u``)."""

    intercept: float = 0.0
    slope: float = 0.0

    def __call__(self, x, u=None):
        return self.intercept + self.slope * np.asarray(x, dtype=float)

    @property
    def is_constant(self) -> bool:
        return self.slope == 0.0


def _atoms(atoms) -> tuple:
    out = tuple((float(u), float(w)) for u, w in atoms)
    for u, w in out:
        if not (u > 0 and w > 0 and math.isfinite(u) and math.isfinite(w)):
            raise DomainError(f"atoms need positive finite location and weight, got {(u, w)}")
    return out


@dataclass(frozen=True)
class LimitParams:
    """Data of the limiting continuous-state process.

    ``mu_atoms`` and ``nu_atoms`` are ``(u, weight)`` pairs; ``nu_atoms`` and
    ``r`` are given before the ``m``-rescaling of the limit process, which is
    applied internally where needed.
    """

    a: float = 0.0
    b: float = 0.0
    mu_atoms: tuple = ()
    alpha: Callable = field(default_factory=Affine)
    nu_atoms: tuple = ()
    r: Callable = field(default_factory=lambda: Affine(1.0, 0.0))
    m: float = 1.0
    gamma0: float = 0.0
    rho0: float = 0.0
    sigma0: float = 0.0
    K: Optional[float] = None
    K1: Optional[float] = None

    def __post_init__(self):
        if self.b < 0 or self.sigma0 < 0 or self.gamma0 < 0:
            raise DomainError("b, sigma0 and gamma0 must be non-negative")
        if not self.m > 0:
            raise DomainError("m must be positive")
        if not callable(self.alpha):
            object.__setattr__(self, "alpha", Affine(float(self.alpha)))
        if not callable(self.r):
            object.__setattr__(self, "r", Affine(float(self.r)))
        object.__setattr__(self, "mu_atoms", _atoms(self.mu_atoms))
        object.__setattr__(self, "nu_atoms", _atoms(self.nu_atoms))

    @property
    def drift_rate(self) -> float:
        """``a + rho0``, the linear mean-reversion coefficient."""
        return self.a + self.rho0

    @property
    def diffusion_sq(self) -> float:
        """``b^2 + m^2 gamma0 sigma0``."""
        return self.b ** 2 + self.m ** 2 * self.gamma0 * self.sigma0

    @property
    def is_feller(self) -> bool:
        """No jumps and a constant immigration rate."""
        return (not self.mu_atoms and not self.nu_atoms
                and isinstance(self.alpha, Affine) and self.alpha.is_constant)

    def linear_growth_ok(self, x_grid: Iterable[float]) -> bool:
        if self.K is None:
            return True
        x = np.asarray(list(x_grid), dtype=float)
        lhs = np.asarray(self.alpha(x), dtype=float) + sum(
            w * u * np.asarray(self.r(x, u), dtype=float) for u, w in self.nu_atoms)
        return bool(np.all(lhs <= self.K * (1 + x) * (1 + 1e-12) + 1e-15))


def _lattice_index(k: int, x: float) -> int:
    kx = k * x
    j = int(round(kx))
    if abs(kx - j) > _LATTICE_TOL or j < 0:
        raise DomainError(f"x = {x} is not a point of the lattice k^-1 N0 for k = {k}")
    return j


def _exp_arg(k: int, lam) -> np.ndarray:
    """``1 - exp(-lam/k)``."""
    return -np.expm1(-np.asarray(lam, dtype=float) / k)


def _scalar(v):
    return float(v) if np.ndim(v) == 0 else v


def G_k_eval(model: ScaledModel, lam):
    lam = np.asarray(lam, dtype=float)
    k = model.k
    if np.any(~((lam >= 0) & (lam <= k))):
        raise DomainError(f"G_k is defined on [0, k] = [0, {k}]")
    deficit = model.offspring.one_minus_pgf(lam / k)
    return _scalar(k * model.gamma_k / model.m * (model.m * lam / k - deficit))


def S_k_eval(model: ScaledModel, lam):
    lam = np.asarray(lam, dtype=float)
    if np.any(lam < 0):
        raise DomainError("S_k needs lambda >= 0")
    k = model.k
    deficit = model.offspring.one_minus_pgf(_exp_arg(k, lam))
    return _scalar(k * model.gamma_k / model.m * (model.m * lam / k - deficit))


def T_k_eval(model: ScaledModel, lam):
    lam = np.asarray(lam, dtype=float)
    if np.any(lam < 0):
        raise DomainError("T_k needs lambda >= 0")
    return _scalar(model.k * np.asarray(model.offspring.one_minus_pgf(_exp_arg(model.k, lam))))


def H_k_eval(family: ControlFamily, k: int, gamma_k: float, x: float, lam):
    lam = np.asarray(lam, dtype=float)
    if np.any(~((lam >= 0) & (lam <= k))):
        raise DomainError(f"H_k is defined for lambda in [0, k] = [0, {k}]")
    if x < 0:
        raise DomainError("H_k needs x >= 0")
    j = int(math.floor(k * x + _LATTICE_TOL))
    return _scalar(gamma_k * np.asarray(family.immigration_law(k, j).one_minus_pgf(lam / k)))


def H_k_composed(model: ScaledModel, x: float, lam):
    """``gamma_k [1 - h_k^(floor(kx))(g_k(exp(-lam/k)))]``, equal to ``H_k(x, T_k(lam))``."""
    k = model.k
    j = int(math.floor(k * x + _LATTICE_TOL))
    u = model.offspring.one_minus_pgf(_exp_arg(k, lam))
    return _scalar(model.gamma_k * np.asarray(model.controls.immigration_law(k, j).one_minus_pgf(u)))


def limit_G(params: LimitParams, lam):
    lam = np.asarray(lam, dtype=float)
    out = params.a * lam + 0.5 * params.b ** 2 * lam ** 2
    for u, w in params.mu_atoms:
        out = out + w * (np.expm1(-lam * u) + lam * u)
    return _scalar(out)


def limit_H(params: LimitParams, x, lam):
    """Immigration mechanism; checks ``0 <= H <= K lam (1 + x)`` when ``K`` is set."""
    x = np.asarray(x, dtype=float)
    lam = np.asarray(lam, dtype=float)
    out = np.asarray(params.alpha(x), dtype=float) * lam
    for u, w in params.nu_atoms:
        out = out + w * (-np.expm1(-lam * u)) * np.asarray(params.r(x, u), dtype=float)
    if np.any(out < 0):
        raise InvariantViolation(f"immigration mechanism negative at x={x}, lambda={lam}")
    if params.K is not None and np.any(out > params.K * lam * (1 + x) * (1 + 1e-12) + 1e-15):
        raise InvariantViolation(
            f"linear-growth bound H <= K lam (1+x) fails at x={x}, lambda={lam} (K={params.K})")
    return _scalar(out)


def discrete_generator_exp(model: ScaledModel, x: float, lam: float) -> float:
    """Generator of the rescaled chain applied to ``exp(-lam x)``."""
    if lam < 0:
        raise DomainError("lambda must be non-negative")
    j = _lattice_index(model.k, x)
    x = j / model.k
    u = model.offspring.one_minus_pgf(float(_exp_arg(model.k, lam)))
    log_c = log_control_pgf(model.controls, model.k, j, u)
    return float(model.gamma_k * math.exp(-lam * x) * math.expm1(log_c + lam * x))


def limit_generator_exp(params: LimitParams, x: float, lam: float) -> float:
    branching = (limit_G(params, lam) + params.rho0 * lam
                 + 0.5 * params.gamma0 * params.sigma0 * params.m ** 2 * lam ** 2)
    return float(math.exp(-lam * x) * (x * branching - limit_H(params, x, params.m * lam)))


def default_x_grid(k: int, x_max: float = 20.0, max_points: int = 2000) -> np.ndarray:
    """Lattice points ``j/k`` in ``[0, x_max]`` thinned to at most ``max_points``."""
    top = int(math.floor(k * x_max + _LATTICE_TOL))
    stride = max(1, math.ceil(top / max(1, max_points - 1)))
    return np.arange(0, top + 1, stride) / k


def generator_gap(model: ScaledModel, params: LimitParams, lam: float,
                  x_grid: Optional[Sequence[float]] = None) -> float:
    """Max over ``x_grid`` of ``|A_k e_lam(x) - A e_lam(x)|``."""
    if x_grid is None:
        x_grid = default_x_grid(model.k)
    return max(abs(discrete_generator_exp(model, x, lam) - limit_generator_exp(params, x, lam))
               for x in x_grid)


@dataclass(frozen=True)
class MonotoneReport:
    holds: bool
    worst_violation: float
    worst_point: tuple


def complete_monotone_check(fn: Callable[[float], float], c: float, d: float, j_max: int,
                            lambda_grid: Iterable[float], tol: float = 1e-8,
                            L: float = math.inf) -> MonotoneReport:
    """Sign test ``(-1)^j D_d^j D_c^2 fn(lam) >= -tol`` for ``j <= j_max``.

    ``D_h`` is the forward difference with step ``h``; powers are built by the
    recursion ``D^j = D^(j-1) D``.  ``worst_violation`` is the smallest signed
    value ``(-1)^j D_d^j D_c^2 fn`` seen, at ``worst_point = (j, lam)``.
    """
    if c <= 0 or d <= 0:
        raise DomainError("difference steps c and d must be positive")
    grid = [float(v) for v in lambda_grid]
    for lam in grid:
        if lam < 0 or lam + j_max * d + 2 * c > L * (1 + 1e-12):
            raise DomainError(f"difference stencil at lambda={lam} leaves [0, {L}]")

    def second(lam: float) -> float:
        return fn(lam + 2 * c) - 2 * fn(lam + c) + fn(lam)

    def diff(j: int, lam: float) -> float:
        if j == 0:
            return second(lam)
        return diff(j - 1, lam + d) - diff(j - 1, lam)

    worst = math.inf
    where = (0, grid[0] if grid else 0.0)
    for lam in grid:
        for j in range(j_max + 1):
            signed = (-1) ** j * diff(j, lam)
            if signed < worst:
                worst, where = signed, (j, lam)
    return MonotoneReport(worst >= -tol, worst, where)


def st_identity_residual(model: ScaledModel, lam) -> float:
    """Max of ``|T_k - (m lam - (m / gamma_k) S_k)|`` over ``lam``."""
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    lhs = np.asarray(T_k_eval(model, lam))
    rhs = model.m * lam - model.m / model.gamma_k * np.asarray(S_k_eval(model, lam))
    return float(np.max(np.abs(lhs - rhs)))


def _one_minus_log_ratio(e: np.ndarray) -> np.ndarray:
    """``1 - log(1 + e) / e`` with a series for tiny ``|e|``."""
    e = np.asarray(e, dtype=float)
    small = np.abs(e) < 1e-6
    safe = np.where(small, 1.0, e)
    direct = 1.0 - np.log1p(safe) / safe
    series = e / 2 - e ** 2 / 3 + e ** 3 / 4
    return np.where(small, series, direct)


def log_f_deviation(model: ScaledModel, lam: float, j: int) -> float:
    """``gamma_k [1 - log f / (f - 1)] + gamma0 lam / 2`` with ``f = f^(j)(g(exp(-lam/k)))``."""
    u = model.offspring.one_minus_pgf(float(_exp_arg(model.k, lam)))
    e = -np.asarray(model.controls.root_law(model.k, j).one_minus_pgf(u))
    return float(model.gamma_k * _one_minus_log_ratio(e) + 0.5 * model.gamma0 * lam)


def second_derivative_gap(model: ScaledModel, lam: float, j: int) -> float:
    """``|f''(g(exp(-lam/k))) - f''(1-)|`` for the root law with ``j`` parents."""
    root = model.controls.root_law(model.k, j)
    s = 1.0 - float(model.offspring.one_minus_pgf(float(_exp_arg(model.k, lam))))
    return abs(float(root.derivative(s, 2)) - root.factorial_moment(2))


def branching_deviation(model: ScaledModel, params: LimitParams, lam_grid) -> tuple:
    """``(max |S_k - G - gamma0 lam^2/2|, max |T_k - m lam|)`` over ``lam_grid``."""
    lam = np.asarray(list(lam_grid), dtype=float)
    s_dev = np.abs(np.asarray(S_k_eval(model, lam)) - np.asarray(limit_G(params, lam))
                   - 0.5 * params.gamma0 * lam ** 2)
    t_dev = np.abs(np.asarray(T_k_eval(model, lam)) - params.m * lam)
    return float(s_dev.max()), float(t_dev.max())


def immigration_deviation(model: ScaledModel, params: LimitParams, x_grid, lam_grid) -> float:
    """Max of ``|H_k(x, T_k(lam)) - H(x, m lam)|`` over the product grid."""
    lam = np.asarray(list(lam_grid), dtype=float)
    worst = 0.0
    for x in x_grid:
        dev = np.abs(np.asarray(H_k_composed(model, x, lam)) - np.asarray(limit_H(params, x, params.m * lam)))
        worst = max(worst, float(dev.max()))
    return worst


def root_deviation(model: ScaledModel, lam_grid, j_values) -> tuple:
    """Sup over ``j`` and ``lam`` of the log-ratio and second-derivative diagnostics."""
    log_dev = 0.0
    d2_dev = 0.0
    for j in j_values:
        for lam in lam_grid:
            log_dev = max(log_dev, abs(log_f_deviation(model, lam, j)))
            d2_dev = max(d2_dev, second_derivative_gap(model, lam, j))
    return log_dev, d2_dev
