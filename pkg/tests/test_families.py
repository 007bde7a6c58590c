import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from cbplimit import lattice as lat
from cbplimit.control import ConstantMap, ControlFamily, ParametricMap, control_pgf, fixed_family
from cbplimit.errors import DomainError
from cbplimit.families import (GammaRule, binary_offspring, binomial_family, negbin_family,
                               poisson_family, verify_immigration_growth, verify_moment_assumption)

ID = GammaRule()


def r_k(k, j, m=1.0):
    return (1 - 2 / k + 1 / (j * k * math.log(k))) / m


def test_poisson_dev1_grid_scan():
    fam = poisson_family(1.0, ID)
    for k in (100, 1000):
        devs = [abs(k * (1 - fam.root_law(k, j).mean) - 2.0) for j in range(1, 10_001)]
        assert int(np.argmax(devs)) == 0
        assert max(devs) == pytest.approx(1 / math.log(k), abs=1e-10)


@given(st.integers(2, 1000), st.integers(1, 10 ** 6), st.floats(0.2, 5.0))
def test_poisson_rho_identity(k, j, m):
    fam = poisson_family(m, ID)
    lhs = k * (1 - m * fam.root_law(k, j).mean) - 2 * k / k
    assert lhs == pytest.approx(-1 / (j * math.log(k)), abs=1e-12)


@given(st.integers(1000, 10 ** 7), st.integers(1, 10 ** 6))
def test_poisson_rho_identity_large_k(k, j):
    # k (1 - m r_k(j)) carries a rounding error of a few k * eps
    fam = poisson_family(1.0, ID)
    lhs = k * (1 - fam.root_law(k, j).mean) - 2.0
    assert lhs == pytest.approx(-1 / (j * math.log(k)), abs=8 * k * np.finfo(float).eps)


def test_poisson_family_examples():
    fam = poisson_family(1.3, ID)
    for j in (0, 1, 10):
        assert control_pgf(fam, 50, j, 1.0) == 1.0
    k, j = 100, 10
    conv = np.asarray(lat.convolve_power(fam.root_law(k, j), j, 200).pmf)
    oracle = stats.poisson.pmf(np.arange(conv.size), r_k(k, j, 1.3) * j)
    assert np.max(np.abs(conv - oracle)) < 1e-10


def test_poisson_family_needs_k_at_least_two():
    with pytest.raises(DomainError):
        poisson_family(1.0, ID).root_law(1, 3)
    with pytest.raises(DomainError):
        poisson_family(1.0, ID, rate=lambda k, j: 1.0)


def test_binomial_and_negbin_domain_errors():
    with pytest.raises(DomainError):
        binomial_family(0.1, ID).root_law(1, 1)
    bad_p = binomial_family(1.0, ID, N=lambda k, j: 3, p=lambda k, j: 1.5, rho0=0.0, p0=0.0)
    with pytest.raises(DomainError):
        bad_p.root_law(10, 2)
    bad_nb = negbin_family(1.0, ID, N=lambda k, j: 1, p=lambda k, j: 0.0, rho0=0.0, q0=1.0)
    with pytest.raises(DomainError):
        bad_nb.root_law(10, 2)
    with pytest.raises(DomainError):
        binomial_family(1.0, ID, N=lambda k, j: 3)


@pytest.mark.parametrize("make", [poisson_family, binomial_family, negbin_family])
@pytest.mark.parametrize("m", [1.0, 2.0])
def test_worked_instances(make, m):
    fam = make(m, ID)
    rep = verify_moment_assumption(fam, m, ID, [100, 1000, 10_000], j_max=2000)
    assert rep.monotone_dev1 and rep.monotone_dev2
    assert rep.rows[-1].dev1 < 0.25 and rep.rows[-1].dev2 < 0.25
    assert "1..2000" in rep.mode


def test_worked_declared_limits():
    g = GammaRule(2.0)
    assert poisson_family(2.0, g).declared_limits == (4.0, 0.25)
    assert binomial_family(2.0, g).declared_limits == (-2.0, 0.25)
    assert negbin_family(2.0, g).declared_limits == (0.0, 0.5)


def test_poisson_dev2_closed_form():
    m = 1.5
    fam = poisson_family(m, ID)
    rep = verify_moment_assumption(fam, m, ID, [100, 1000], j_max=500)
    for row in rep.rows:
        want = max(abs(r_k(row.k, j, m) ** 2 - m ** -2) for j in range(1, 501))
        assert row.dev2 == pytest.approx(want, rel=1e-12)
    assert rep.rows[1].dev2 < rep.rows[0].dev2


def test_dirac_root_moments():
    fam = fixed_family(lat.Dirac(1), lat.Poisson(1.0), declared_limits=(0.3, 0.2))
    row = verify_moment_assumption(fam, 1.0, ID, [50], j_max=20).rows[0]
    assert row.dev1 == pytest.approx(0.3) and row.dev2 == pytest.approx(0.2)
    zero = fixed_family(lat.Dirac(1), lat.Poisson(1.0), declared_limits=(0.0, 0.0))
    row = verify_moment_assumption(zero, 1.0, ID, [50], j_max=20).rows[0]
    assert row.dev1 == 0.0 and row.dev2 == 0.0
    with pytest.raises(DomainError):
        verify_moment_assumption(fixed_family(lat.Dirac(1), lat.Dirac(0)), 1.0, ID, [10])


def test_immigration_growth_examples():
    xs = np.linspace(0, 5, 21)
    none = fixed_family(lat.Dirac(1), lat.Dirac(0))
    assert verify_immigration_growth(none, 10, 10.0, xs).K1_hat == 0.0
    fam = poisson_family(1.0, ID, beta=2.5)
    rep = verify_immigration_growth(fam, 100, 100.0, xs)
    assert rep.K1_hat == pytest.approx(2.5) and rep.argmax_x == 0.0


def test_immigration_growth_hand_computation():
    k, gamma_k = 10, 5.0
    imm = ParametricMap("poisson", rate=lambda kk, j: np.asarray(j, dtype=float) * kk / gamma_k)
    fam = ControlFamily(ConstantMap(lat.Dirac(1)), imm)
    xs = [0.5, 1.0, 3.0]
    # (gamma/k) * floor(kx) * k / gamma / (1 + x) = floor(kx) / (1 + x)
    hand = {0.5: 5 / 1.5, 1.0: 10 / 2.0, 3.0: 30 / 4.0}
    rep = verify_immigration_growth(fam, k, gamma_k, xs)
    assert rep.K1_hat == pytest.approx(max(hand.values()))
    assert rep.argmax_x == 3.0
    for x in xs:
        assert verify_immigration_growth(fam, k, gamma_k, [x]).K1_hat == pytest.approx(hand[x])


def test_gamma_rule():
    assert GammaRule(2.0)(10) == 20.0 and GammaRule(2.0).gamma0 == 2.0
    assert GammaRule(1.0, 0.5)(100) == pytest.approx(10.0) and GammaRule(1.0, 0.5).gamma0 == 0.0
    for bad in ((0.0, 1.0), (1.0, 1.5), (1.0, 0.0)):
        with pytest.raises(DomainError):
            GammaRule(*bad)


def test_binary_offspring():
    law = binary_offspring(0.6)
    assert law.mean == pytest.approx(1.0)
    assert law.factorial_moment(2) == pytest.approx(0.36)
    with pytest.raises(DomainError):
        binary_offspring(1.5)
