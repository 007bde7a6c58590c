"""Simulation and closed-form oracles for the limiting continuous-state process.

The limit solves

    dz = [m alpha(z) - (a + rho0) z] dt + sqrt((b^2 + m^2 gamma0 sigma0) z) dW
         + compensated branching jumps (atoms of mu, rate w z)
         + immigration jumps (atoms of nu moved to m u, rate w r(z, u)).

Paths use Euler-Maruyama with full truncation and per-step Poisson jump
counts.  Without atoms and with constant ``alpha`` the process is a Feller
diffusion with immigration, whose moments and Laplace transform are known.
"""

from __future__ import annotations

import math
from typing import Iterable

import numpy as np
from scipy.integrate import solve_ivp

from .cbp import PathSample, time_grid
from .errors import ConfigError, DomainError, NumericError
from .mechanisms import Affine, LimitParams, limit_G

#: per-step jump probability budget for the thinning scheme
MAX_RATE_DT = 0.1


def _check_horizon(horizon_T: float, dt: float) -> int:
    if not dt > 0 or not horizon_T > 0:
        raise DomainError("horizon_T and dt must be positive")
    if dt > horizon_T * (1 + 1e-12):
        raise DomainError("dt must not exceed horizon_T")
    n = int(round(horizon_T / dt))
    if abs(n * dt - horizon_T) > 1e-9 * max(1.0, horizon_T):
        raise DomainError("horizon_T must be an integer multiple of dt")
    return n


def simulate_csbpdi_paths(params: LimitParams, z0, horizon_T: float, dt: float, n_paths: int,
                          rng: np.random.Generator, record_dt: float | None = None) -> tuple:
    """Vectorised Euler-Maruyama paths; returns ``(times, values)``.

    ``record_dt`` (default ``dt``) must be a multiple of ``dt``.
    """
    n_steps = _check_horizon(horizon_T, dt)
    record_dt = dt if record_dt is None else record_dt
    stride = int(round(record_dt / dt))
    if stride < 1 or abs(stride * dt - record_dt) > 1e-9 * record_dt:
        raise DomainError("record_dt must be a positive multiple of dt")
    times = time_grid(horizon_T, record_dt)
    z = np.broadcast_to(np.asarray(z0, dtype=float), (n_paths,)).copy()
    if np.any(z < 0):
        raise DomainError("initial state must be non-negative")
    values = np.empty((n_paths, times.size))
    values[:, 0] = z
    m = params.m
    theta = params.drift_rate
    c = math.sqrt(params.diffusion_sq)
    mu_comp = sum(u * w for u, w in params.mu_atoms)
    mu_rate = sum(w for _, w in params.mu_atoms)
    sqdt = math.sqrt(dt)
    col = 1
    for step in range(1, n_steps + 1):
        zp = np.maximum(z, 0.0)
        imm_rates = [w * np.asarray(params.r(zp, u), dtype=float) for u, w in params.nu_atoms]
        total_rate = mu_rate * zp + sum(imm_rates) if (imm_rates or mu_rate) else None
        if total_rate is not None and dt * float(np.max(total_rate)) > MAX_RATE_DT:
            raise ConfigError(
                f"dt * jump rate = {dt * float(np.max(total_rate)):.3g} exceeds {MAX_RATE_DT}; reduce dt")
        drift = m * np.asarray(params.alpha(zp), dtype=float) - theta * zp - mu_comp * zp
        z = z + drift * dt
        if c > 0:
            z = z + c * np.sqrt(zp) * sqdt * rng.standard_normal(n_paths)
        for u, w in params.mu_atoms:
            z = z + u * rng.poisson(w * zp * dt)
        for (u, _), rate in zip(params.nu_atoms, imm_rates):
            z = z + m * u * rng.poisson(rate * dt)
        z = np.maximum(z, 0.0)
        if np.any(np.isnan(z)):
            raise NumericError(f"NaN state at step {step}")
        if step % stride == 0:
            values[:, col] = z
            col += 1
    return times, values


def simulate_csbpdi_path(params: LimitParams, z0: float, horizon_T: float, dt: float,
                         rng: np.random.Generator, seed: object = None) -> PathSample:
    times, values = simulate_csbpdi_paths(params, z0, horizon_T, dt, 1, rng)
    return PathSample(times, values[0], seed)


def _feller_coefficients(params: LimitParams) -> tuple:
    if not params.is_feller:
        raise DomainError("closed-form moments need no atoms and a constant immigration rate")
    return params.alpha.intercept * params.m, params.drift_rate, params.diffusion_sq


def _phi(theta: float, t: float) -> float:
    """``(1 - exp(-theta t)) / theta``, equal to ``t`` at ``theta = 0``."""
    return t if theta == 0 else -math.expm1(-theta * t) / theta


def feller_moments(params: LimitParams, z0: float, t: float) -> tuple:
    """Mean and variance at time ``t`` of the Feller diffusion with immigration.

    With ``A = m alpha``, ``theta = a + rho0`` and ``c^2 = b^2 + m^2 gamma0 sigma0``
    the mean solves ``M' = A - theta M`` and the variance ``V' = c^2 M - 2 theta V``;
    with ``phi = (1 - exp(-theta t)) / theta`` the solutions are
    ``M = z0 exp(-theta t) + A phi`` and ``V = c^2 [z0 exp(-theta t) phi + A phi^2 / 2]``.
    """
    A, theta, c2 = _feller_coefficients(params)
    if t < 0:
        raise DomainError("t must be non-negative")
    phi = _phi(theta, t)
    decay = math.exp(-theta * t)
    return z0 * decay + A * phi, c2 * (z0 * decay * phi + 0.5 * A * phi ** 2)


def feller_laplace(params: LimitParams, z0: float, t: float, lam: float) -> float:
    """Closed-form ``E[exp(-lam z(t))]`` for the Feller diffusion with immigration."""
    A, theta, c2 = _feller_coefficients(params)
    phi = _phi(theta, t)
    denom = 1.0 + 0.5 * c2 * lam * phi
    v = lam * math.exp(-theta * t) / denom
    if c2 == 0:
        integral = A * lam * phi
    else:
        integral = 2.0 * A / c2 * math.log1p(0.5 * c2 * lam * phi)
    return math.exp(-z0 * v - integral)


def riccati_laplace(params: LimitParams, z0: float, t: float, lam: float,
                    rtol: float = 1e-11, atol: float = 1e-13) -> float:
    """``E[exp(-lam z(t))]`` by numerically solving the Riccati system.

    Valid when ``alpha`` and ``r`` are affine in the state (an affine process):
    ``H(x, l) = H0(l) + x H1(l)`` and
    ``v' = -[Psi(v) - H1(m v)]``, ``I' = H0(m v)``, ``v(0) = lam``, ``I(0) = 0``
    with ``Psi(l) = G(l) + rho0 l + gamma0 sigma0 m^2 l^2 / 2``.
    """
    if not isinstance(params.alpha, Affine) or not isinstance(params.r, Affine):
        raise DomainError("Riccati oracle needs affine alpha and r")
    m = params.m

    def psi(v):
        return (limit_G(params, v) + params.rho0 * v
                + 0.5 * params.gamma0 * params.sigma0 * m ** 2 * v ** 2)

    def h_parts(l):
        h0 = params.alpha.intercept * l
        h1 = params.alpha.slope * l
        for u, w in params.nu_atoms:
            jump = w * -math.expm1(-l * u)
            h0 += jump * params.r.intercept
            h1 += jump * params.r.slope
        return h0, h1

    def rhs(_, y):
        v = y[0]
        h0, h1 = h_parts(m * v)
        return [-(psi(v) - h1), h0]

    if t == 0:
        return math.exp(-z0 * lam)
    sol = solve_ivp(rhs, (0.0, t), [lam, 0.0], method="DOP853", rtol=rtol, atol=atol)
    if not sol.success:
        raise NumericError(f"Riccati solve failed: {sol.message}")
    v_t, integral = sol.y[:, -1]
    return math.exp(-z0 * v_t - integral)


def mean_with_se(samples: np.ndarray) -> tuple:
    samples = np.asarray(samples, dtype=float)
    n = samples.size
    if n < 2 or np.all(samples == samples.flat[0]):
        return float(samples.flat[0]) if n else math.nan, 0.0
    return float(samples.mean()), float(samples.std(ddof=1) / math.sqrt(n))


def variance_with_se(samples: np.ndarray) -> tuple:
    """Unbiased variance and its large-sample standard error ``sqrt((m4 - s^4) / n)``."""
    samples = np.asarray(samples, dtype=float)
    n = samples.size
    if n < 2 or np.all(samples == samples.flat[0]):
        return 0.0, 0.0
    centred = samples - samples.mean()
    var = float(centred @ centred / (n - 1))
    m4 = float(np.mean(centred ** 4))
    return var, math.sqrt(max(m4 - var ** 2, 0.0) / n)


def laplace_from_values(values: np.ndarray, lam: float) -> tuple:
    if lam < 0:
        raise DomainError("lambda must be non-negative")
    if lam == 0:
        return 1.0, 0.0
    return mean_with_se(np.exp(-lam * np.asarray(values, dtype=float)))


def laplace_mc(paths: Iterable[PathSample], t: float, lam: float) -> tuple:
    """Monte-Carlo ``E[exp(-lam z(t))]`` and its standard error across paths."""
    values = []
    for path in paths:
        try:
            values.append(path.at(t))
        except DomainError as exc:
            raise DomainError(f"grid mismatch: {exc}") from None
    if not values:
        raise DomainError("no paths supplied")
    return laplace_from_values(np.asarray(values), lam)
