import csv
import math
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from cbplimit import harness
from cbplimit.cli import run
from cbplimit.config import load_config, parse_config
from cbplimit.errors import ConfigError

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

BINARY = """
[model]
offspring = binary
offspring.b = 1
family = fixed
root = dirac
root.n = 1
immigration = poisson
immigration.rate = 1

[limit]
b = 1
alpha = 1
rho0 = 0
sigma0 = 0
K = 1

[study]
k_list = 20, 80
lambda_grid = 0, 0.5, 2
x_max = 4
x_points = 100
t_grid = 0.5, 1
grid_dt = 0.05
dt = 0.005
path_count = 300
block_size = 64
j_max = 20
moment_j_max = 50

[output]
seed = 99
"""

IDENTITY = (CONFIGS / "identity.ini").read_text()


def write(tmp_path, text, name="exp.ini"):
    p = tmp_path / name
    p.write_text(text)
    return p


def read_rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def replace_line(text, key, new):
    lines = [new if ln.split("=")[0].strip() == key else ln for ln in text.splitlines()]
    return "\n".join(lines) + "\n"


# configuration ------------------------------------------------------------

def test_parse_binary_config():
    cfg = parse_config(BINARY)
    model = cfg.build_model(80)
    assert model.k == 80 and model.gamma_k == 80.0 and model.gamma0 == 1.0
    assert model.offspring.pmf == (0.5, 0.0, 0.5)
    assert model.controls.immigration_law(80, 3).mean == 1.0
    assert cfg.limit.is_feller and cfg.limit.K == 1.0
    assert cfg.study.k_list == (20, 80) and cfg.seed == 99
    assert cfg.initial_population(80) == 80


def test_expression_parameters():
    text = BINARY.replace("immigration.rate = 1", "immigration.rate = 2*k/gamma + j/k")
    cfg = parse_config(text)
    assert cfg.family.immigration_law(20, 5).mean == pytest.approx(2 + 5 / 20)


def test_worked_family_config():
    cfg = load_config(CONFIGS / "poisson_family.ini")
    assert cfg.limit.rho0 == 2.0 and cfg.limit.sigma0 == 0.25
    assert cfg.family.root_law(100, 1).mean == pytest.approx((1 - 0.02 + 1 / (100 * math.log(100))) / 2)


@pytest.mark.parametrize("key,value,match", [
    ("k_list", "k_list =", "k_list"),
    ("k_list", "k_list = 80, 20", "strictly increasing"),
    ("k_list", "k_list = 10, 2.5", "positive integers"),
    ("path_count", "path_count = 0", "path_count"),
    ("offspring", "offspring = cauchy", "unknown law"),
    ("immigration.rate", "immigration.rate = 2*(k", "cannot parse"),
    ("immigration.rate", "immigration.rate = q*k", "unknown symbols"),
    ("t_grid", "t_grid = 0.33", "not a multiple"),
    ("gamma_p", "gamma_p = 1.5", "gamma"),
    ("b", "b = -1", "non-negative"),
])
def test_validation_errors(key, value, match):
    text = BINARY
    if key == "gamma_p":
        text = text.replace("offspring.b = 1", "offspring.b = 1\ngamma_p = 1")
    with pytest.raises(ConfigError, match=match):
        parse_config(replace_line(text, key, value), "exp.ini")


def test_error_carries_line_number():
    text = replace_line(BINARY, "path_count", "path_count = 0")
    line = next(i for i, ln in enumerate(text.splitlines(), 1) if ln.startswith("path_count"))
    with pytest.raises(ConfigError, match=rf"exp.ini:{line}:"):
        parse_config(text, "exp.ini")


def test_missing_sections():
    with pytest.raises(ConfigError, match="study"):
        parse_config("[model]\noffspring = binary\n")
    with pytest.raises(ConfigError):
        parse_config("not an ini file")


def test_config_hash():
    a = parse_config(BINARY)
    b = parse_config(BINARY.replace("path_count = 300", "path_count   =   300"))
    c = parse_config(BINARY.replace("seed = 99", "seed = 100"))
    d = parse_config(BINARY.replace("b = 1\nalpha", "b = 0.5\nalpha"))
    assert a.config_hash() == b.config_hash()
    assert a.config_hash() != c.config_hash()
    assert a.config_hash() != d.config_hash()


# studies ------------------------------------------------------------------

def test_converge_identity_gaps_vanish():
    rep = harness.run_convergence_study(parse_config(IDENTITY))
    gaps = [r[-1] for r in rep.rows if r[3] == "generator_gap"]
    assert len(gaps) == 10 and max(gaps) <= 1e-9


def test_converge_binary_gaps_decrease():
    text = replace_line(BINARY, "k_list", "k_list = 100, 400, 1600")
    text = replace_line(text, "x_max", "x_max = 20")
    text = replace_line(text, "x_points", "x_points = 2000")
    text = replace_line(text, "lambda_grid", "lambda_grid = 0.5, 1, 2")
    rep = harness.run_convergence_study(parse_config(text))
    for lam in (0.5, 1.0, 2.0):
        gaps = [r[-1] for r in rep.rows if r[3] == "generator_gap" and r[4] == lam]
        assert gaps[0] > gaps[1] > gaps[2]
    names = {r[3] for r in rep.rows}
    assert {"S_deviation", "T_deviation", "H_composition_deviation", "log_f_deviation",
            "second_derivative_gap", "moment_dev1", "moment_dev2"} <= names


def test_compare_zero_lambda_and_identity():
    rep = harness.run_distribution_comparison(parse_config(BINARY))
    zero = [r for r in rep.rows if r[4] == "laplace" and r[5] == 0.0]
    assert zero and all(r[6] == 1.0 and r[8] == 1.0 and r[10] == 0.0 for r in zero)
    ident = harness.run_distribution_comparison(parse_config(IDENTITY))
    for r in ident.rows:
        if r[4] == "laplace":
            assert r[6] == r[8] == pytest.approx(math.exp(-r[5]), abs=1e-15)
            assert r[7] == 0.0 and r[11] == 0.0


def test_compare_simulated_limit_agrees():
    text = BINARY.replace("moment_j_max = 50", "moment_j_max = 50\nlimit_mode = simulate")
    rep = harness.run_distribution_comparison(parse_config(text))
    assert all(r[9] > 0 or r[5] == 0.0 for r in rep.rows if r[4] == "laplace")
    zs = [abs(r[11]) for r in rep.rows]
    # 20 correlated cells; 4.5 keeps the family-wise false alarm rate negligible
    assert max(zs) < 4.5


def test_closed_mode_requires_feller():
    text = BINARY.replace("K = 1", "K = 5\nmu_atoms = 0.5:1").replace(
        "moment_j_max = 50", "moment_j_max = 50\nlimit_mode = closed")
    with pytest.raises(ConfigError):
        harness.run_distribution_comparison(parse_config(text))


@pytest.mark.parametrize("fn", [harness.run_distribution_comparison, harness.run_simulation,
                                harness.run_convergence_study])
def test_thread_count_does_not_change_results(fn):
    cfg = parse_config(BINARY)
    a = fn(cfg, threads=1).rows
    b = fn(cfg, threads=6).rows
    assert a == b


def test_poisson_initial_law_reproducible():
    cfg = parse_config(BINARY.replace("moment_j_max = 50", "moment_j_max = 50\nz0_law = poisson"))
    t1, v1 = harness.cbp_paths(cfg, 1, threads=1)
    t2, v2 = harness.cbp_paths(cfg, 1, threads=3)
    assert np.array_equal(v1, v2)
    assert len(set(v1[:, 0])) > 1


def test_checks_and_monotone():
    cfg = load_config(CONFIGS / "poisson_family.ini")
    rep = harness.run_checks(cfg)
    vals = {(r[1], r[3]): r[4] for r in rep.rows}
    assert rep.ok
    assert vals[(100, "moment_dev1")] == pytest.approx(1 / math.log(100), abs=1e-10)
    assert vals[(None, "dev1_non_increasing")] is True
    mono = harness.run_monotone(cfg)
    assert mono.ok and all(r[3] for r in mono.rows)


def test_fmt():
    assert harness.fmt(0.1) == "0.10000000000000001"
    assert float(harness.fmt(1 / 3)) == 1 / 3
    assert harness.fmt(None) == "" and harness.fmt(7) == "7" and harness.fmt(True) == "1"
    assert harness.fmt(np.float64(2.5)) == "2.5"


# command line -------------------------------------------------------------

def test_cli_converge_writes_csv(tmp_path):
    cfg = write(tmp_path, BINARY)
    out = tmp_path / "res" / "conv.csv"
    assert run(["converge", "--config", str(cfg), "--out", str(out), "--quiet"]) == 0
    rows = read_rows(out)
    h = parse_config(BINARY).config_hash()
    assert rows and all(r["config_hash"] == h for r in rows)
    assert list(rows[0]) == list(harness.CONVERGE_COLUMNS)


def test_cli_threads_byte_identical(tmp_path):
    cfg = write(tmp_path, BINARY)
    outs = []
    for threads in ("1", "8"):
        out = tmp_path / f"c{threads}.csv"
        assert run(["compare", "--config", str(cfg), "--out", str(out), "--threads", threads, "--quiet"]) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]


def test_cli_seed_override(tmp_path):
    cfg = write(tmp_path, BINARY)
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    run(["simulate", "--config", str(cfg), "--out", str(a), "--quiet"])
    run(["simulate", "--config", str(cfg), "--out", str(b), "--quiet", "--seed", "5"])
    assert a.read_bytes() != b.read_bytes()
    assert read_rows(b)[0]["config_hash"] == parse_config(BINARY.replace("seed = 99", "seed = 5")).config_hash()


def test_cli_validation_error_writes_nothing(tmp_path, caplog):
    cfg = write(tmp_path, replace_line(BINARY, "k_list", "k_list ="))
    out = tmp_path / "never.csv"
    assert run(["converge", "--config", str(cfg), "--out", str(out), "--quiet"]) == 1
    assert not out.exists()
    assert "k_list" in caplog.text
    assert run(["converge", "--config", str(tmp_path / "missing.ini"), "--out", str(out)]) == 1
    assert run(["converge", "--config", str(write(tmp_path, BINARY))]) == 1


def test_cli_numeric_failure(tmp_path):
    text = BINARY.replace("offspring = binary", "offspring = dirac\noffspring.n = 1000000000000")
    cfg = write(tmp_path, text.replace("offspring.b = 1\n", ""))
    out = tmp_path / "x.csv"
    assert run(["simulate", "--config", str(cfg), "--out", str(out), "--quiet"]) == 2
    assert not out.exists()


def test_cli_invariant_violation(tmp_path):
    cfg = write(tmp_path, BINARY.replace("K = 1", "K = 1\nK1 = 0.5"))
    assert run(["check", "--config", str(cfg), "--out", str(tmp_path / "c.csv"), "--quiet"]) == 3
    bad_k = write(tmp_path, BINARY.replace("K = 1", "K = 0.5"), "k.ini")
    assert run(["converge", "--config", str(bad_k), "--out", str(tmp_path / "k.csv"), "--quiet"]) == 3


def test_cli_plots(tmp_path):
    cfg = write(tmp_path, BINARY)
    for command in ("converge", "compare", "simulate", "monotone"):
        out = tmp_path / f"{command}.csv"
        assert run([command, "--config", str(cfg), "--out", str(out), "--quiet", "--plot"]) == 0
        pngs = list(tmp_path.glob(f"{command}_*.png"))
        assert pngs and all(p.stat().st_size > 1000 for p in pngs)


def test_module_entry_point(tmp_path):
    cfg = write(tmp_path, IDENTITY)
    out = tmp_path / "m.csv"
    proc = subprocess.run([sys.executable, "-m", "cbplimit", "monotone", "--config", str(cfg),
                           "--out", str(out), "--quiet"], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert read_rows(out)[0]["holds"] == "1"
