"""Experiment configuration: an INI file with ``[model]``, ``[limit]``, ``[study]``
and ``[output]`` sections.

Parameters that vary with the scaling index accept arithmetic expressions in
``k`` (and ``j`` for root laws, ``gamma`` for immigration laws), e.g.
``root.rate = (1 - 2/k + 1/(j*k*log(k))) / m``.  See ``docs/config.md``.
"""

from __future__ import annotations

import configparser
import hashlib
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import sympy

from . import lattice as lat
from .cbp import ScaledModel
from .control import ConstantMap, ControlFamily, LawMap, ParametricMap
from .errors import ConfigError, DomainError
from .families import (GammaRule, binary_offspring, binomial_family, negbin_family, poisson_family,
                       poisson_immigration)
from .mechanisms import Affine, LimitParams

_SYMBOLS = {name: sympy.Symbol(name) for name in ("k", "j", "gamma", "m")}
_LAW_PARAMS = {
    "dirac": ("n",), "bernoulli": ("p",), "binomial": ("n", "p"), "poisson": ("rate",),
    "geometric": ("p",), "negbin": ("r", "p"),
}


class _Source:
    """Config text plus a lookup from ``(section, key)`` to its line number."""

    def __init__(self, text: str, name: str):
        self.text = text
        self.name = name
        self.lines: dict = {}
        section = None
        for no, line in enumerate(text.splitlines(), 1):
            stripped = line.strip()
            head = re.match(r"\[(.+)\]", stripped)
            if head:
                section = head.group(1).strip().lower()
                continue
            key = re.match(r"([^=:;#]+?)\s*[=:]", stripped)
            if section and key:
                self.lines[(section, key.group(1).strip().lower())] = no

    def error(self, section: str, key: Optional[str], message: str) -> ConfigError:
        no = self.lines.get((section, key)) if key else None
        where = f"{self.name}:{no}" if no else f"{self.name} [{section}]"
        label = f" {key}" if key else ""
        return ConfigError(f"{where}:{label} {message}")


def _expr(text: str, variables: tuple, src: _Source, section: str, key: str) -> Callable:
    """Compile ``text`` to a numpy function of ``variables``."""
    try:
        value = float(text)
        return lambda *args: value + 0.0 * np.asarray(args[-1] if args else 0.0, dtype=float)
    except ValueError:
        pass
    try:
        parsed = sympy.sympify(text, locals=_SYMBOLS)
    except (sympy.SympifyError, SyntaxError, TypeError) as exc:
        raise src.error(section, key, f"cannot parse expression {text!r}: {exc}") from None
    allowed = {_SYMBOLS[v] for v in variables}
    unknown = parsed.free_symbols - allowed
    if unknown:
        raise src.error(section, key, f"unknown symbols {sorted(map(str, unknown))}; "
                                      f"allowed: {list(variables)}")
    fn = sympy.lambdify([_SYMBOLS[v] for v in variables], parsed, modules="numpy")
    return lambda *args: np.asarray(fn(*args), dtype=float) + 0.0 * np.asarray(args[-1], dtype=float)


def _floats(text: str) -> list:
    return [float(v) for v in re.split(r"[,\s]+", text.strip()) if v]


def _atoms(text: str) -> tuple:
    """``u:w, u:w`` pairs."""
    out = []
    for item in re.split(r"[,\s]+", text.strip()):
        if not item:
            continue
        u, w = item.split(":")
        out.append((float(u), float(w)))
    return tuple(out)


@dataclass(frozen=True)
class StudySpec:
    k_list: tuple
    lambda_grid: tuple
    x_max: float
    x_points: int
    t_grid: tuple
    horizon: float
    grid_dt: float
    dt: float
    path_count: int
    z0: float
    z0_law: str
    j_max: int
    moment_j_max: int
    limit_mode: str
    block_size: int
    monotone_c: float
    monotone_d: float
    monotone_j_max: int
    monotone_grid: tuple


@dataclass
class ExperimentConfig:
    """Parsed configuration; ``build_model(k)`` gives the k-th scaled CBP."""

    source: _Source
    parser: configparser.ConfigParser
    m: float
    gamma: GammaRule
    offspring_fn: Callable[[int], lat.LatticeLaw]
    family: ControlFamily
    limit: LimitParams
    study: StudySpec
    seed: int
    output: Optional[str]

    def build_model(self, k: int) -> ScaledModel:
        try:
            return ScaledModel(int(k), self.gamma(k), self.offspring_fn(int(k)), self.family,
                               self.m, self.gamma.gamma0)
        except DomainError as exc:
            raise self.source.error("model", None, f"k={k}: {exc}") from None

    def initial_population(self, k: int) -> int:
        return int(round(self.study.z0 * k))

    def config_hash(self) -> str:
        """Hash of the normalised configuration (sections and keys sorted) and seed."""
        parts = [f"seed={self.seed}"]
        for section in sorted(self.parser.sections()):
            if section == "output":
                continue
            for key in sorted(self.parser[section]):
                value = " ".join(self.parser[section][key].split())
                parts.append(f"{section}.{key}={value}")
        return hashlib.sha256("\n".join(parts).encode()).hexdigest()[:16]


def _get(parser, section, key, default=None):
    if parser.has_option(section, key):
        return parser.get(section, key).strip()
    return default


def _num(src, parser, section, key, default=None, cast=float):
    raw = _get(parser, section, key)
    if raw is None or raw == "":
        if default is None:
            raise src.error(section, key, "is required")
        return default
    try:
        return cast(float(raw)) if cast is int else cast(raw)
    except ValueError:
        raise src.error(section, key, f"expected a number, got {raw!r}") from None


def _law_from_params(kind: str, params: dict) -> lat.LatticeLaw:
    if kind == "dirac":
        return lat.Dirac(int(round(params["n"])))
    if kind == "bernoulli":
        return lat.Bernoulli(params["p"])
    if kind == "binomial":
        return lat.Binomial(int(round(params["n"])), params["p"])
    if kind == "poisson":
        return lat.Poisson(params["rate"])
    if kind == "geometric":
        return lat.Geometric(params["p"])
    return lat.NegativeBinomial(params["r"], params["p"])


def _offspring(src, parser, m) -> Callable[[int], lat.LatticeLaw]:
    kind = _get(parser, "model", "offspring", "binary").lower()
    if kind == "binary":
        b = _num(src, parser, "model", "offspring.b", 1.0)
        law = binary_offspring(b)
        return lambda k: law
    if kind == "explicit":
        raw = _get(parser, "model", "offspring.pmf")
        if not raw:
            raise src.error("model", "offspring.pmf", "is required for explicit offspring")
        fns = [_expr(v, ("k", "m"), src, "model", "offspring.pmf") for v in raw.split(",")]
        return lambda k: lat.Explicit(tuple(float(f(k, m)) for f in fns))
    if kind not in _LAW_PARAMS:
        raise src.error("model", "offspring", f"unknown law {kind!r}")
    fns = {}
    for name in _LAW_PARAMS[kind]:
        raw = _get(parser, "model", f"offspring.{name}")
        if raw is None:
            raise src.error("model", f"offspring.{name}", "is required")
        fns[name] = _expr(raw, ("k", "m"), src, "model", f"offspring.{name}")
    return lambda k: _law_from_params(kind, {n: float(f(k, m)) for n, f in fns.items()})


def _law_map(src, parser, prefix: str, variables: tuple, m: float, gamma: GammaRule) -> Optional[LawMap]:
    kind = _get(parser, "model", prefix)
    if kind is None:
        return None
    kind = kind.lower()
    if kind not in _LAW_PARAMS:
        raise src.error("model", prefix, f"unknown law {kind!r}")
    params = {}
    for name in _LAW_PARAMS[kind]:
        key = f"{prefix}.{name}"
        raw = _get(parser, "model", key)
        if raw is None:
            raise src.error("model", key, "is required")
        fn = _expr(raw, variables, src, "model", key)
        if variables == ("k", "j", "m"):
            params[name] = (lambda f: lambda k, j: f(k, np.asarray(j, dtype=float), m))(fn)
        else:
            params[name] = (lambda f: lambda k, j: f(k, gamma(k), m, np.asarray(j, dtype=float)))(fn)
    return ParametricMap(kind, **params)


def _family(src, parser, m: float, gamma: GammaRule) -> ControlFamily:
    imm = _law_map(src, parser, "immigration", ("k", "gamma", "m", "j"), m, gamma)
    beta = _num(src, parser, "model", "immigration.beta", 1.0)
    name = _get(parser, "model", "family", "fixed").lower()
    try:
        if name == "poisson":
            return poisson_family(m, gamma, immigration=imm, beta=beta)
        if name == "binomial":
            return binomial_family(m, gamma, immigration=imm, beta=beta)
        if name == "negbin":
            return negbin_family(m, gamma, immigration=imm, beta=beta)
    except DomainError as exc:
        raise src.error("model", "family", str(exc)) from None
    if name != "fixed":
        raise src.error("model", "family", f"unknown family {name!r}")
    root = _law_map(src, parser, "root", ("k", "j", "m"), m, gamma)
    if root is None:
        root = ConstantMap(lat.Dirac(1))
    if imm is None:
        imm = poisson_immigration(gamma, beta)
    declared = None
    if parser.has_option("limit", "rho0") and parser.has_option("limit", "sigma0"):
        declared = (_num(src, parser, "limit", "rho0"), _num(src, parser, "limit", "sigma0"))
    return ControlFamily(root, imm, declared, "fixed")


def _limit(src, parser, m, gamma, family) -> LimitParams:
    declared = family.declared_limits or (None, None)
    rho0 = _num(src, parser, "limit", "rho0", declared[0])
    sigma0 = _num(src, parser, "limit", "sigma0", declared[1])
    if rho0 is None or sigma0 is None:
        raise src.error("limit", "rho0", "rho0 and sigma0 are required when the family declares none")
    K = _get(parser, "limit", "k")
    K1 = _get(parser, "limit", "k1")
    try:
        return LimitParams(
            a=_num(src, parser, "limit", "a", 0.0),
            b=_num(src, parser, "limit", "b", 0.0),
            mu_atoms=_atoms(_get(parser, "limit", "mu_atoms", "")),
            alpha=Affine(_num(src, parser, "limit", "alpha", 0.0),
                         _num(src, parser, "limit", "alpha_slope", 0.0)),
            nu_atoms=_atoms(_get(parser, "limit", "nu_atoms", "")),
            r=Affine(_num(src, parser, "limit", "r", 1.0), _num(src, parser, "limit", "r_slope", 0.0)),
            m=m, gamma0=gamma.gamma0, rho0=rho0, sigma0=sigma0,
            K=float(K) if K else None, K1=float(K1) if K1 else None,
        )
    except (DomainError, ValueError) as exc:
        raise src.error("limit", None, str(exc)) from None


def _study(src, parser) -> StudySpec:
    sec = "study"

    def floats(key, default=None):
        raw = _get(parser, sec, key)
        if raw is None:
            if default is None:
                raise src.error(sec, key, "is required")
            return tuple(default)
        try:
            return tuple(_floats(raw))
        except ValueError:
            raise src.error(sec, key, f"expected a comma-separated list of numbers, got {raw!r}") from None

    k_raw = floats("k_list")
    if not k_raw:
        raise src.error(sec, "k_list", "must not be empty")
    if any(k != int(k) or k < 1 for k in k_raw):
        raise src.error(sec, "k_list", "entries must be positive integers")
    k_list = tuple(int(k) for k in k_raw)
    if any(b <= a for a, b in zip(k_list, k_list[1:])):
        raise src.error(sec, "k_list", "must be strictly increasing")
    lambda_grid = floats("lambda_grid", (0.5, 1.0, 2.0))
    if any(v < 0 for v in lambda_grid):
        raise src.error(sec, "lambda_grid", "entries must be non-negative")
    t_grid = floats("t_grid", (1.0,))
    if any(v < 0 for v in t_grid):
        raise src.error(sec, "t_grid", "entries must be non-negative")
    path_count = _num(src, parser, sec, "path_count", 1000, int)
    if path_count < 1:
        raise src.error(sec, "path_count", "must be at least 1")
    grid_dt = _num(src, parser, sec, "grid_dt", 0.01)
    dt = _num(src, parser, sec, "dt", 0.001)
    if grid_dt <= 0 or dt <= 0:
        raise src.error(sec, "dt" if dt <= 0 else "grid_dt", "must be positive")
    horizon = _num(src, parser, sec, "horizon", max(max(t_grid), grid_dt))
    for t in t_grid:
        if abs(round(t / grid_dt) * grid_dt - t) > 1e-9:
            raise src.error(sec, "t_grid", f"time {t} is not a multiple of grid_dt={grid_dt}")
    if abs(round(grid_dt / dt) * dt - grid_dt) > 1e-9 * grid_dt:
        raise src.error(sec, "dt", "grid_dt must be a multiple of dt")
    z0_law = (_get(parser, sec, "z0_law", "fixed") or "fixed").lower()
    if z0_law not in ("fixed", "poisson"):
        raise src.error(sec, "z0_law", "must be 'fixed' or 'poisson'")
    limit_mode = (_get(parser, sec, "limit_mode", "auto") or "auto").lower()
    if limit_mode not in ("auto", "closed", "simulate"):
        raise src.error(sec, "limit_mode", "must be auto, closed or simulate")
    return StudySpec(
        k_list=k_list, lambda_grid=lambda_grid,
        x_max=_num(src, parser, sec, "x_max", 20.0),
        x_points=_num(src, parser, sec, "x_points", 2000, int),
        t_grid=t_grid, horizon=horizon, grid_dt=grid_dt, dt=dt, path_count=path_count,
        z0=_num(src, parser, sec, "z0", 1.0), z0_law=z0_law,
        j_max=_num(src, parser, sec, "j_max", 1000, int),
        moment_j_max=_num(src, parser, sec, "moment_j_max", 10_000, int),
        limit_mode=limit_mode,
        block_size=_num(src, parser, sec, "block_size", 1024, int),
        monotone_c=_num(src, parser, sec, "monotone_c", 0.25),
        monotone_d=_num(src, parser, sec, "monotone_d", 0.25),
        monotone_j_max=_num(src, parser, sec, "monotone_j_max", 4, int),
        monotone_grid=floats("monotone_grid", tuple(np.linspace(0.0, 5.0, 51))),
    )


def _check_gamma(src, gamma: GammaRule, k_list) -> None:
    gaps = [abs(gamma(k) / k - gamma.gamma0) for k in k_list]
    if any(b > a * (1 + 1e-12) + 1e-15 for a, b in zip(gaps, gaps[1:])):
        raise src.error("model", "gamma_p", "|gamma_k/k - gamma0| must be non-increasing along k_list")


def parse_config(text: str, name: str = "<config>") -> ExperimentConfig:
    src = _Source(text, name)
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        parser.read_string(text, source=name)
    except configparser.Error as exc:
        raise ConfigError(f"{name}: {exc}") from None
    for section in ("model", "study"):
        if not parser.has_section(section):
            raise ConfigError(f"{name}: missing [{section}] section")
    if not parser.has_section("limit"):
        parser.add_section("limit")
    m = _num(src, parser, "model", "m", 1.0)
    if not m > 0:
        raise src.error("model", "m", "must be positive")
    try:
        gamma = GammaRule(_num(src, parser, "model", "gamma_c", 1.0),
                          _num(src, parser, "model", "gamma_p", 1.0))
    except DomainError as exc:
        raise src.error("model", "gamma_p", str(exc)) from None
    offspring = _offspring(src, parser, m)
    family = _family(src, parser, m, gamma)
    limit = _limit(src, parser, m, gamma, family)
    study = _study(src, parser)
    _check_gamma(src, gamma, study.k_list)
    seed = int(_get(parser, "output", "seed", "0") or 0) if parser.has_section("output") else 0
    output = _get(parser, "output", "path") if parser.has_section("output") else None
    return ExperimentConfig(src, parser, m, gamma, offspring, family, limit, study, seed, output)


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, str(path))


__all__ = ["ExperimentConfig", "StudySpec", "parse_config", "load_config"]
