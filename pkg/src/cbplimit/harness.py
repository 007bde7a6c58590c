"""Config-driven studies producing CSV reports.

Every run is a deterministic function of the configuration and seed.  Random
work is split into fixed-size blocks of paths; block ``b`` for scaling index
``i`` draws from ``SeedSequence(seed, spawn_key=(stream, i, b))``, so the
worker count never changes a single draw.  Results are gathered in canonical
(k, block) order before any reduction.
"""

from __future__ import annotations

import csv
import logging
import math
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .cbp import simulate_scaled_paths
from .config import ExperimentConfig
from .csbpdi import (feller_laplace, feller_moments, laplace_from_values, mean_with_se,
                     simulate_csbpdi_paths, variance_with_se)
from .errors import ConfigError, NumericError
from .families import verify_immigration_growth, verify_moment_assumption
from .mechanisms import (G_k_eval, branching_deviation, complete_monotone_check, default_x_grid,
                         generator_gap, immigration_deviation, root_deviation, st_identity_residual)

log = logging.getLogger("cbplimit")

CBP_STREAM = 0
LIMIT_STREAM = 1
INIT_STREAM = 2

# exact-versus-exact differences below this are rounding, not signal
_ROUNDING = 1e-12

CONVERGE_COLUMNS = ("config_hash", "k", "gamma_k", "diagnostic_name", "lambda", "value")
COMPARE_COLUMNS = ("config_hash", "k", "gamma_k", "t", "quantity", "lambda", "cbp_estimate",
                   "cbp_se", "limit_estimate", "limit_se", "difference", "z_score")
SIMULATE_COLUMNS = ("config_hash", "process", "k", "path", "t", "value")
CHECK_COLUMNS = ("config_hash", "k", "gamma_k", "check", "value")
MONOTONE_COLUMNS = ("config_hash", "k", "gamma_k", "holds", "worst_violation", "worst_j",
                    "worst_lambda")


@dataclass(frozen=True)
class Report:
    columns: tuple
    rows: list
    ok: bool = True
    message: str = ""


def fmt(value) -> str:
    """CSV cell: floats with 17 significant digits, ``None`` as empty."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return str(value)


def write_csv(report: Report, path: str | Path) -> None:
    """Write atomically so a failed run never leaves a partial file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(report.columns)
            for row in report.rows:
                writer.writerow([fmt(v) for v in row])
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def block_rng(seed: int, stream: int, index: int, block: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(stream, index, block)))


def _map(fn: Callable, items: Sequence, threads: int) -> list:
    """Ordered map; results come back in input order for any worker count."""
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _blocks(n_paths: int, size: int) -> list:
    return [(b, min(size, n_paths - b * size)) for b in range(math.ceil(n_paths / size))]


# convergence ----------------------------------------------------------------

def _converge_one(cfg: ExperimentConfig, k: int) -> list:
    st = cfg.study
    model = cfg.build_model(k)
    params = cfg.limit
    x_grid = default_x_grid(k, st.x_max, st.x_points)
    j_values = range(1, st.j_max + 1)
    out = []
    for lam in st.lambda_grid:
        out.append(("generator_gap", lam, generator_gap(model, params, lam, x_grid)))
    for lam in st.lambda_grid:
        s_dev, t_dev = branching_deviation(model, params, [lam])
        out.append(("S_deviation", lam, s_dev))
        out.append(("T_deviation", lam, t_dev))
        out.append(("ST_identity_residual", lam, st_identity_residual(model, lam)))
        out.append(("H_composition_deviation", lam,
                    immigration_deviation(model, params, x_grid, [lam])))
        log_dev, d2_dev = root_deviation(model, [lam], j_values)
        out.append(("log_f_deviation", lam, log_dev))
        out.append(("second_derivative_gap", lam, d2_dev))
    if cfg.family.declared_limits is not None:
        row = verify_moment_assumption(cfg.family, cfg.m, cfg.gamma, [k], st.moment_j_max).rows[0]
        out.append(("moment_dev1", None, row.dev1))
        out.append(("moment_dev2", None, row.dev2))
    return [(k, model.gamma_k, name, lam, value) for name, lam, value in out]


def run_convergence_study(cfg: ExperimentConfig, threads: int = 1) -> Report:
    """Generator gap and mechanism diagnostics for every ``k``."""
    h = cfg.config_hash()
    per_k = _map(lambda k: _converge_one(cfg, k), list(cfg.study.k_list), threads)
    rows = [(h, *row) for chunk in per_k for row in chunk]
    for row in rows:
        if not math.isfinite(row[-1]):
            raise NumericError(f"non-finite diagnostic {row[3]} at k={row[1]}")
    log.info("convergence study: %d rows", len(rows))
    return Report(CONVERGE_COLUMNS, rows)


# path simulation ------------------------------------------------------------

def _initial_states(cfg: ExperimentConfig, k: int, k_index: int, block: int, n: int) -> np.ndarray:
    if cfg.study.z0_law == "poisson":
        rng = block_rng(cfg.seed, INIT_STREAM, k_index, block)
        return rng.poisson(cfg.study.z0 * k, size=n).astype(np.int64)
    return np.full(n, cfg.initial_population(k), dtype=np.int64)


def cbp_paths(cfg: ExperimentConfig, k_index: int, threads: int = 1) -> tuple:
    """All CBP paths for ``k_list[k_index]``, concatenated in block order."""
    st = cfg.study
    k = st.k_list[k_index]
    model = cfg.build_model(k)

    def run(block):
        b, n = block
        z0 = _initial_states(cfg, k, k_index, b, n)
        return simulate_scaled_paths(model, z0, st.horizon, st.grid_dt, n,
                                     block_rng(cfg.seed, CBP_STREAM, k_index, b))

    parts = _map(run, _blocks(st.path_count, st.block_size), threads)
    return parts[0][0], np.vstack([v for _, v in parts])


def limit_paths(cfg: ExperimentConfig, threads: int = 1) -> tuple:
    st = cfg.study

    def run(block):
        b, n = block
        return simulate_csbpdi_paths(cfg.limit, st.z0, st.horizon, st.dt, n,
                                     block_rng(cfg.seed, LIMIT_STREAM, 0, b), record_dt=st.grid_dt)

    parts = _map(run, _blocks(st.path_count, st.block_size), threads)
    return parts[0][0], np.vstack([v for _, v in parts])


def run_simulation(cfg: ExperimentConfig, threads: int = 1, include_limit: bool = True) -> Report:
    """Rescaled CBP paths for every ``k`` and, optionally, limit paths."""
    h = cfg.config_hash()
    rows = []
    for idx, k in enumerate(cfg.study.k_list):
        times, values = cbp_paths(cfg, idx, threads)
        gamma_k = cfg.gamma(k)
        for p in range(values.shape[0]):
            rows.extend((h, "cbp", k, p, t, v) for t, v in zip(times, values[p]))
        log.info("simulated %d paths at k=%d (gamma_k=%g)", values.shape[0], k, gamma_k)
    if include_limit:
        times, values = limit_paths(cfg, threads)
        for p in range(values.shape[0]):
            rows.extend((h, "limit", None, p, t, v) for t, v in zip(times, values[p]))
    return Report(SIMULATE_COLUMNS, rows)


# distribution comparison ----------------------------------------------------

def _column(times: np.ndarray, values: np.ndarray, t: float) -> np.ndarray:
    idx = np.flatnonzero(np.isclose(times, t, rtol=0, atol=1e-9))
    if idx.size == 0:
        raise ConfigError(f"time {t} is not on the recording grid")
    return values[:, idx[0]]


def _limit_mode(cfg: ExperimentConfig) -> str:
    mode = cfg.study.limit_mode
    if mode == "closed" and not cfg.limit.is_feller:
        raise ConfigError("limit_mode = closed needs a Feller limit (no atoms, constant alpha)")
    if mode == "auto":
        return "closed" if cfg.limit.is_feller else "simulate"
    return mode


def _compare_row(h, k, gamma_k, t, quantity, lam, cbp, limit) -> tuple:
    diff = cbp[0] - limit[0]
    se = math.hypot(cbp[1], limit[1])
    if se > 0:
        z = diff / se
    elif abs(diff) <= _ROUNDING * max(1.0, abs(limit[0])):
        z = 0.0
    else:
        z = math.copysign(math.inf, diff)
    return (h, k, gamma_k, t, quantity, lam, cbp[0], cbp[1], limit[0], limit[1], diff, z)


def run_distribution_comparison(cfg: ExperimentConfig, threads: int = 1) -> Report:
    """Laplace transform, mean and variance of ``z_k(t)`` against the limit."""
    st = cfg.study
    h = cfg.config_hash()
    mode = _limit_mode(cfg)
    if mode == "simulate":
        times, limit_vals = limit_paths(cfg, threads)
        limit_cols = {t: _column(times, limit_vals, t) for t in st.t_grid}

    def limit_estimates(t):
        if mode == "closed":
            mean, var = feller_moments(cfg.limit, st.z0, t)
            lap = {lam: (feller_laplace(cfg.limit, st.z0, t, lam), 0.0) for lam in st.lambda_grid}
            return lap, (mean, 0.0), (var, 0.0)
        col = limit_cols[t]
        lap = {lam: laplace_from_values(col, lam) for lam in st.lambda_grid}
        return lap, mean_with_se(col), variance_with_se(col)

    limits = {t: limit_estimates(t) for t in st.t_grid}
    rows = []
    for idx, k in enumerate(st.k_list):
        times, values = cbp_paths(cfg, idx, threads)
        gamma_k = cfg.gamma(k)
        for t in st.t_grid:
            col = _column(times, values, t)
            lap, mean, var = limits[t]
            for lam in st.lambda_grid:
                rows.append(_compare_row(h, k, gamma_k, t, "laplace", lam,
                                         laplace_from_values(col, lam), lap[lam]))
            rows.append(_compare_row(h, k, gamma_k, t, "mean", None, mean_with_se(col), mean))
            rows.append(_compare_row(h, k, gamma_k, t, "variance", None, variance_with_se(col), var))
        log.info("compared k=%d over %d paths", k, values.shape[0])
    return Report(COMPARE_COLUMNS, rows)


# assumption checks ----------------------------------------------------------

def run_checks(cfg: ExperimentConfig, threads: int = 1) -> Report:
    """Moment and immigration-growth verifiers for the configured family."""
    st = cfg.study
    h = cfg.config_hash()
    rows = []
    ok = True
    problems = []
    if cfg.family.declared_limits is not None:
        reports = _map(lambda k: verify_moment_assumption(cfg.family, cfg.m, cfg.gamma, [k],
                                                          st.moment_j_max).rows[0],
                       list(st.k_list), threads)
        for r in reports:
            rows += [(h, r.k, r.gamma_k, "moment_dev1", r.dev1),
                     (h, r.k, r.gamma_k, "moment_dev2", r.dev2),
                     (h, r.k, r.gamma_k, "moment_argmax_j1", r.argmax_j1),
                     (h, r.k, r.gamma_k, "moment_argmax_j2", r.argmax_j2)]
        for name, seq in (("dev1", [r.dev1 for r in reports]), ("dev2", [r.dev2 for r in reports])):
            mono = all(b <= a * (1 + 1e-12) + 1e-15 for a, b in zip(seq, seq[1:]))
            rows.append((h, None, None, f"{name}_non_increasing", mono))
            if not mono:
                ok = False
                problems.append(f"{name} is not non-increasing in k")
    for k in st.k_list:
        gamma_k = cfg.gamma(k)
        growth = verify_immigration_growth(cfg.family, k, gamma_k, default_x_grid(k, st.x_max, st.x_points))
        rows.append((h, k, gamma_k, "immigration_K1_hat", growth.K1_hat))
        rows.append((h, k, gamma_k, "immigration_K1_argmax_x", growth.argmax_x))
        rows.append((h, k, gamma_k, "gamma_ratio_gap", abs(gamma_k / k - cfg.gamma.gamma0)))
        if cfg.limit.K1 is not None and growth.K1_hat > cfg.limit.K1 * (1 + 1e-12):
            ok = False
            problems.append(f"K1_hat={growth.K1_hat:g} exceeds declared K1={cfg.limit.K1:g} at k={k}")
    return Report(CHECK_COLUMNS, rows, ok, "; ".join(problems))


def run_monotone(cfg: ExperimentConfig, threads: int = 1) -> Report:
    """Complete-monotonicity sign test of ``G_k`` for every ``k``."""
    st = cfg.study
    h = cfg.config_hash()

    def one(k):
        model = cfg.build_model(k)
        rep = complete_monotone_check(lambda lam: float(G_k_eval(model, lam)), st.monotone_c,
                                      st.monotone_d, st.monotone_j_max, st.monotone_grid, L=k)
        return (h, k, model.gamma_k, rep.holds, rep.worst_violation, rep.worst_point[0],
                rep.worst_point[1])

    rows = _map(one, list(st.k_list), threads)
    failed = [r[1] for r in rows if not r[3]]
    msg = f"complete monotonicity fails at k={failed}" if failed else ""
    return Report(MONOTONE_COLUMNS, rows, not failed, msg)


__all__ = [
    "Report", "fmt", "write_csv", "block_rng", "run_convergence_study", "run_simulation",
    "run_distribution_comparison", "run_checks", "run_monotone", "cbp_paths", "limit_paths",
    "CONVERGE_COLUMNS", "COMPARE_COLUMNS", "SIMULATE_COLUMNS",
    "CHECK_COLUMNS", "MONOTONE_COLUMNS",
]
