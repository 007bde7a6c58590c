"""Controlled branching processes and their continuous-state scaling limits.

Submodules: :mod:`lattice` (offspring laws), :mod:`control` (divisible control
families), :mod:`cbp` (chain simulation), :mod:`mechanisms` (discrete and limit
mechanisms, generator gaps), :mod:`csbpdi` (limit SDE and oracles),
:mod:`families` (ready-made families and checkers), :mod:`harness` and
:mod:`cli` (config-driven studies).
"""

from .cbp import PathSample, ScaledModel, simulate_scaled_path, simulate_scaled_paths
from .control import ControlFamily, fixed_family, sample_control
from .errors import ConfigError, DomainError, InvariantViolation, NumericError, TruncationError
from .mechanisms import Affine, LimitParams, generator_gap

__version__ = "0.1.0"

__all__ = [
    "PathSample", "ScaledModel", "simulate_scaled_path", "simulate_scaled_paths",
    "ControlFamily", "fixed_family", "sample_control", "ConfigError", "DomainError",
    "InvariantViolation", "NumericError", "TruncationError", "Affine", "LimitParams",
    "generator_gap",
]
