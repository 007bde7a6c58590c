import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cbplimit import lattice as lat
from cbplimit.cbp import (PathSample, ScaledModel, cbp_step, chain_steps, expected_next,
                          simulate_scaled_path, simulate_scaled_paths, time_grid, transition_law,
                          transition_pgf)
from cbplimit.control import fixed_family
from cbplimit.csbpdi import feller_moments, mean_with_se
from cbplimit.errors import DomainError, NumericError
from cbplimit.families import (binary_branching_limit, binary_branching_model, identity_model,
                               poisson_family, GammaRule)


def small_model(offspring=lat.Explicit((0.3, 0.3, 0.4)), root=lat.Bernoulli(0.6),
                imm=lat.Poisson(0.5), k=4):
    return ScaledModel(k, float(k), offspring, fixed_family(root, imm), 1.1, 1.0)


def test_model_validation():
    fam = fixed_family(lat.Dirac(1), lat.Dirac(0))
    with pytest.raises(DomainError):
        ScaledModel(0, 1.0, lat.Dirac(1), fam)
    with pytest.raises(DomainError):
        ScaledModel(3, 0.0, lat.Dirac(1), fam)
    with pytest.raises(DomainError):
        ScaledModel(3, 1.0, lat.Dirac(1), fam, m=0.0)


def test_step_examples(rng):
    zero_imm = small_model(imm=lat.Dirac(0))
    assert cbp_step(zero_imm, 0, rng) == 0
    assert cbp_step(identity_model(10), 42, rng) == 42
    assert cbp_step(identity_model(10), 42, rng, fast=False) == 42


def test_step_wald_identity(rng):
    model = small_model()
    j = 6
    draws = np.array([cbp_step(model, j, rng) for _ in range(100_000)], dtype=float)
    mean, se = mean_with_se(draws)
    assert abs(mean - expected_next(model, j)) < 3 * se
    assert expected_next(model, j) == pytest.approx(1.1 * (6 * 0.6 + 0.5))


def test_overflow_is_reported(rng):
    huge = ScaledModel(1, 1.0, lat.Dirac(2 ** 40), fixed_family(lat.Dirac(1), lat.Dirac(0)))
    with pytest.raises(NumericError):
        cbp_step(huge, 2 ** 30, rng)
    with pytest.raises(NumericError):
        simulate_scaled_paths(huge, 2 ** 30, 1.0, 1.0, 3, rng)


def test_identity_path_constant(rng):
    k = 50
    path = simulate_scaled_path(identity_model(k), k, 2.0, 0.01, rng)
    assert np.all(path.values == 1.0)
    times, values = simulate_scaled_paths(identity_model(k), k, 2.0, 0.01, 5, rng)
    assert np.all(values == 1.0)


def test_short_horizon_takes_no_step(rng):
    model = binary_branching_model(100)
    path = simulate_scaled_path(model, 37, 0.009, 0.003, rng)
    assert np.all(path.values == 0.37)


def test_binary_mean_matches_moment_ode():
    k = 100
    model = binary_branching_model(k)
    _, values = simulate_scaled_paths(model, k, 1.0, 0.01, 10_000, np.random.default_rng(11))
    mean, se = mean_with_se(values[:, -1])
    exact, _ = feller_moments(binary_branching_limit(), 1.0, 1.0)
    assert abs(mean - exact) < 3 * se


def test_transition_pgf_examples():
    zero = small_model(imm=lat.Dirac(0))
    for s in (0.0, 0.5, 1.0):
        assert transition_pgf(zero, 0, s) == 1.0
        assert transition_pgf(identity_model(5), 7, s) == pytest.approx(s ** 7, abs=1e-15)


def test_transition_pgf_monte_carlo(rng):
    model = ScaledModel(100, 100.0, lat.Poisson(1.0), poisson_family(1.0, GammaRule()), 1.0, 1.0)
    s = 0.8
    draws = np.array([cbp_step(model, 5, rng) for _ in range(100_000)])
    est, se = mean_with_se(s ** draws)
    assert abs(est - transition_pgf(model, 5, s)) < 3 * se


@pytest.mark.parametrize("i", [0, 1, 3, 7, 10])
def test_transition_law_matches_steps(i):
    model = small_model()
    rng = np.random.default_rng(i)
    exact = np.asarray(transition_law(model, i, 80).pmf)
    for fast in (True, False):
        draws = np.array([cbp_step(model, i, rng, fast=fast) for _ in range(100_000)])
        assert lat.total_variation(lat.empirical_pmf(draws), exact) < 0.02


def test_batch_transition_matches_exact(rng):
    model = small_model()
    _, values = simulate_scaled_paths(model, 5, 1.0 / model.gamma_k, 1.0 / model.gamma_k, 100_000, rng)
    draws = np.rint(values[:, -1] * model.k).astype(int)
    exact = np.asarray(transition_law(model, 5, 80).pmf)
    assert lat.total_variation(lat.empirical_pmf(draws), exact) < 0.02


@given(st.integers(0, 2 ** 32), st.integers(0, 30))
def test_determinism_and_lattice(seed, z0):
    model = small_model()
    a = simulate_scaled_path(model, z0, 2.0, 0.25, np.random.default_rng(seed))
    b = simulate_scaled_path(model, z0, 2.0, 0.25, np.random.default_rng(seed))
    assert np.array_equal(a.values, b.values)
    assert np.all(a.values >= 0)
    np.testing.assert_allclose(a.values * model.k, np.rint(a.values * model.k), atol=1e-9)
    _, v1 = simulate_scaled_paths(model, z0, 2.0, 0.25, 4, np.random.default_rng(seed))
    _, v2 = simulate_scaled_paths(model, z0, 2.0, 0.25, 4, np.random.default_rng(seed))
    assert np.array_equal(v1, v2)


def test_grid_helpers():
    np.testing.assert_allclose(time_grid(1.0, 0.1), np.arange(11) * 0.1)
    # 0.3 / 0.1 is 2.9999999999999996 in floating point
    assert chain_steps(10.0, np.array([0.3]))[0] == 3
    with pytest.raises(DomainError):
        time_grid(1.0, 0.0)


def test_path_sample_invariants():
    with pytest.raises(DomainError):
        PathSample(np.array([0.0, 1.0]), np.array([1.0]))
    with pytest.raises(DomainError):
        PathSample(np.array([0.0, 0.0]), np.array([1.0, 1.0]))
    with pytest.raises(DomainError):
        PathSample(np.array([0.0, 1.0]), np.array([1.0, -1.0]))
    p = PathSample(np.array([0.0, 0.5]), np.array([1.0, 2.0]))
    assert p.at(0.5) == 2.0
    with pytest.raises(DomainError):
        p.at(0.25)


def test_negative_state_rejected(rng):
    with pytest.raises(DomainError):
        cbp_step(small_model(), -1, rng)


def test_aggregate_offspring_path_matches_exact(rng):
    # 8 parents with root Dirac(5) give at least 40 > 32 parents, so the aggregate sampler runs
    model = small_model(root=lat.Dirac(5), imm=lat.Poisson(0.5))
    exact = np.asarray(transition_law(model, 8, 300).pmf)
    draws = np.array([cbp_step(model, 8, rng, fast=True) for _ in range(50_000)])
    assert lat.total_variation(lat.empirical_pmf(draws), exact) < 0.03
