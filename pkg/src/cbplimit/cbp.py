"""Controlled branching process recursion and its rescaled path.

``Z(n+1)`` is the sum of ``phi(Z(n))`` i.i.d. offspring counts, where the
control ``phi`` comes from a :class:`ControlFamily`.  The rescaled process is
``z_k(t) = Z_k(floor(gamma_k t)) / k`` recorded on a uniform grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import lattice as lat
from .control import ControlFamily, control_law, control_pgf, sample_control, sample_control_batch
from .errors import DomainError, NumericError
from .lattice import LatticeLaw

#: largest population the integer state may hold before the step reports overflow
SAFE_MAX = 2 ** 62
_GRID_EPS = 1e-9
# below this many parents individual draws are cheaper than the aggregate sampler
_SMALL_BATCH = 32


@dataclass(frozen=True)
class ScaledModel:
    k: int
    gamma_k: float
    offspring: LatticeLaw
    controls: ControlFamily
    m: float = 1.0
    gamma0: float = 0.0

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 1:
            raise DomainError(f"k must be a positive integer, got {self.k}")
        if not self.gamma_k > 0:
            raise DomainError(f"gamma_k must be positive, got {self.gamma_k}")
        if not self.m > 0:
            raise DomainError(f"m must be positive, got {self.m}")
        if not self.gamma0 >= 0:
            raise DomainError(f"gamma0 must be non-negative, got {self.gamma0}")
        if not math.isfinite(self.offspring.mean):
            raise DomainError("offspring law must have a finite mean")


@dataclass(frozen=True)
class PathSample:
    times: np.ndarray
    values: np.ndarray
    seed: object = None

    def __post_init__(self):
        if len(self.times) != len(self.values):
            raise DomainError("times and values must have equal length")
        if len(self.times) > 1 and np.any(np.diff(self.times) <= 0):
            raise DomainError("times must be strictly increasing")
        if np.any(self.values < 0):
            raise DomainError("path values must be non-negative")

    def at(self, t: float) -> float:
        idx = np.flatnonzero(np.isclose(self.times, t, rtol=0, atol=1e-9))
        if idx.size == 0:
            raise DomainError(f"time {t} is not on the path grid")
        return float(self.values[idx[0]])


def time_grid(horizon_T: float, grid_dt: float) -> np.ndarray:
    if not grid_dt > 0:
        raise DomainError("grid_dt must be positive")
    if horizon_T < grid_dt * (1 - _GRID_EPS):
        raise DomainError("horizon_T must be at least grid_dt")
    n = int(math.floor(horizon_T / grid_dt + _GRID_EPS))
    return grid_dt * np.arange(n + 1)


def chain_steps(gamma_k: float, times: np.ndarray) -> np.ndarray:
    """Chain generation ``floor(gamma_k t)`` shown at each grid time."""
    return np.floor(gamma_k * np.asarray(times) + _GRID_EPS).astype(np.int64)


def _guard(values: np.ndarray, what: str) -> None:
    if values.size and (values.max() > SAFE_MAX or values.min() < 0):
        raise NumericError(f"{what} exceeded the safe integer range {SAFE_MAX}")


def _offspring_sum(law: LatticeLaw, parents: np.ndarray, rng) -> np.ndarray:
    if parents.size and law.mean * float(parents.max()) > SAFE_MAX / 2:
        raise NumericError("expected next generation exceeds the safe integer range")
    out = law.sample_sum(parents, rng)
    _guard(out, "population")
    return out


def cbp_step(model: ScaledModel, z: int, rng: np.random.Generator, fast: bool = True) -> int:
    """One generation from ``z`` individuals.

    With ``fast`` the offspring of more than a few parents are drawn as one
    aggregate variate; otherwise one draw per parent.  Both are exact.
    """
    if z < 0 or int(z) != z:
        raise DomainError(f"state must be a non-negative integer, got {z}")
    phi = sample_control(model.controls, model.k, int(z), rng, fast=fast).total
    _guard(np.asarray([phi]), "number of parents")
    if phi == 0:
        return 0
    if fast and phi > _SMALL_BATCH:
        return int(_offspring_sum(model.offspring, np.asarray([phi], dtype=np.int64), rng)[0])
    if model.offspring.mean * phi > SAFE_MAX / 2:
        raise NumericError("expected next generation exceeds the safe integer range")
    return int(model.offspring.sample(rng, size=phi).sum())


def simulate_scaled_path(model: ScaledModel, z0: int, horizon_T: float, grid_dt: float,
                         rng: np.random.Generator, fast: bool = True,
                         seed: object = None) -> PathSample:
    """One rescaled path, right-continuous and piecewise constant between generations."""
    times = time_grid(horizon_T, grid_dt)
    steps = chain_steps(model.gamma_k, times)
    values = np.empty(times.size)
    z = int(z0)
    gen = 0
    for i, target in enumerate(steps):
        while gen < target:
            z = cbp_step(model, z, rng, fast=fast)
            gen += 1
        values[i] = z / model.k
    return PathSample(times, values, seed)


def simulate_scaled_paths(model: ScaledModel, z0, horizon_T: float, grid_dt: float,
                          n_paths: int, rng: np.random.Generator) -> tuple:
    """Vectorised batch of ``n_paths`` paths sharing one stream.

    ``z0`` may be a scalar or an array of initial populations.  Returns
    ``(times, values)`` with ``values`` of shape ``(n_paths, len(times))``.
    """
    if n_paths < 1:
        raise DomainError("n_paths must be at least 1")
    times = time_grid(horizon_T, grid_dt)
    steps = chain_steps(model.gamma_k, times)
    z = np.broadcast_to(np.asarray(z0, dtype=np.int64), (n_paths,)).copy()
    if np.any(z < 0):
        raise DomainError("initial populations must be non-negative")
    values = np.empty((n_paths, times.size))
    gen = 0
    for i, target in enumerate(steps):
        while gen < target:
            divisible, immigration = sample_control_batch(model.controls, model.k, z, rng)
            phi = divisible + immigration
            _guard(phi, "number of parents")
            z = _offspring_sum(model.offspring, phi, rng)
            gen += 1
        values[:, i] = z / model.k
    return times, values


def transition_pgf(model: ScaledModel, i: int, s):
    """Exact one-step PGF ``E[s^Z(n+1) | Z(n) = i] = c^(i)(g(s))``."""
    return control_pgf(model.controls, model.k, i, model.offspring.pgf(s))


def transition_law(model: ScaledModel, i: int, truncation: int) -> lat.Explicit:
    """One-step pmf from state ``i``, expanded through explicit convolutions."""
    ctrl = np.asarray(control_law(model.controls, model.k, i, truncation).pmf)
    keep = truncation + 1
    g = np.asarray(model.offspring.materialize().pmf)[:keep]
    # Horner in the convolution algebra: sum_n ctrl[n] * g^{*n}
    acc = np.array([ctrl[-1]])
    for coef in ctrl[-2::-1]:
        acc = np.convolve(acc, g)[:keep]
        acc[0] += coef
    if 1.0 - acc.sum() > lat.CONVOLVE_TAIL:
        raise lat.TruncationError(f"transition law leaves mass beyond index {truncation}")
    return lat.Explicit(tuple(acc / acc.sum()))


def expected_next(model: ScaledModel, j: int) -> float:
    """Mean of the next generation from ``j`` parents (Wald's identity)."""
    ctrl_mean = model.controls.immigration_law(model.k, j).mean
    if j > 0:
        ctrl_mean += j * model.controls.root_law(model.k, j).mean
    return model.offspring.mean * ctrl_mean


__all__ = [
    "ScaledModel", "PathSample", "SAFE_MAX", "time_grid", "chain_steps", "cbp_step",
    "simulate_scaled_path", "simulate_scaled_paths", "transition_pgf", "transition_law",
    "expected_next",
]
