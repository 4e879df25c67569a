import math

import numpy as np
import pytest
import scipy.special
from hypothesis import given, settings
from hypothesis import strategies as st

from qsdlab import oracles
from qsdlab.errors import DomainError
from qsdlab.oracles import Oracle, oracle_eval


def test_mm1_lambda():
    assert oracle_eval("mm1_lambda", p=1, q=4) == 1.0


def test_mm1_lcd_values():
    assert oracle_eval(Oracle.MM1_LCD, j=2, p=1, q=4) == 0.25
    np.testing.assert_allclose(oracles.mm1_lcd([1, 2, 3, 4], 1, 4), [0.25, 0.25, 0.1875, 0.125])


def test_lcd_sums_to_one():
    j = np.arange(1, 400)
    assert oracles.mm1_lcd(j, 1, 4).sum() == pytest.approx(1.0, abs=1e-14)


def test_critbd_p10():
    assert oracle_eval("critbd_p10", t=1.0, rho=1.0) == 0.5


def test_rw_p00_at_zero():
    assert oracle_eval("rw_p00", t=0.0, p=1, q=1) == 1.0


@pytest.mark.parametrize("t", [0.1, 1.0, 3.0, 17.0])
def test_critbd_laws_form_distribution(t):
    j = np.arange(1, 4000)
    total = oracles.critbd_p10(t) + oracles.critbd_p1j(j, t).sum()
    assert total == pytest.approx(1.0, abs=1e-12)


def test_critbd_survival_from_one():
    assert oracles.critbd_survival(2.0) == pytest.approx(1 / 3, abs=1e-15)


def test_resolvent_recurrence():
    p, q = 1.0, 4.0
    theta = 2 * math.sqrt(p * q)
    for j in range(1, 11):
        G = lambda i: 0.0 if i == 0 else float(oracles.mm1_resolvent(i, j, p, q))
        for i in range(1, 11):
            lhs = theta * G(i)
            rhs = p * G(i + 1) + q * G(i - 1) + (1.0 if i == j else 0.0)
            assert lhs == pytest.approx(rhs, rel=1e-13, abs=1e-13)


def test_resolvent_agrees_with_displayed_form_on_diagonal():
    i = np.arange(1, 8)
    np.testing.assert_allclose(oracles.mm1_resolvent(i, i, 1, 4), oracles.mm1_potential_diagonal(i, 1, 4))


@settings(max_examples=50, deadline=None)
@given(i=st.integers(1, 12), j=st.integers(1, 12), t=st.floats(0.5, 20), p=st.floats(0.1, 5), ratio=st.floats(1.1, 10))
def test_asymptotic_ratio_is_lcd(i, j, t, p, ratio):
    q = p * ratio
    r = oracles.mm1_asymptotic_p(i, j, t, p, q) / oracles.mm1_asymptotic_survival(i, t, p, q)
    assert r == pytest.approx(oracles.mm1_lcd(j, p, q), rel=1e-12)


def test_asymptotic_constants():
    assert oracles.mm1_asymptotic_p(1, 1, 1.0, 1, 4) * math.e == pytest.approx(2 / (4 * math.sqrt(8 * math.pi)))
    assert oracles.mm1_asymptotic_survival(1, 1.0, 1, 4) * math.e == pytest.approx(2 / math.sqrt(8 * math.pi))


def test_invariant_vectors_normalized():
    np.testing.assert_allclose(oracles.mm1_m([1, 2, 3], 1, 4, normalized=True), [1.0, 1.0, 0.75])
    np.testing.assert_allclose(oracles.mm1_x([1, 2, 3], 1, 4, normalized=True), [1.0, 4.0, 12.0])


@pytest.mark.parametrize("z", [0.0, 1e-3, 0.5, 3.0, 25.0, 80.0, 99.9, 100.1, 250.0, 1e4])
def test_bessel_against_scipy(z):
    assert oracles.bessel_i0e(z) == pytest.approx(scipy.special.i0e(z), rel=2e-15)


def test_bessel_crossover_consistent():
    assert oracles.bessel_i0e_series(100.0) == pytest.approx(oracles.bessel_i0e_asymptotic(100.0), rel=1e-15)


@pytest.mark.parametrize(
    "call",
    [
        lambda: oracles.mm1_lambda(4, 1),
        lambda: oracles.mm1_lcd(0, 1, 4),
        lambda: oracles.mm1_asymptotic_p(1, 1, 0.0, 1, 4),
        lambda: oracles.critbd_p10(1.0, rho=-1),
        lambda: oracles.rw_p00(-1.0),
        lambda: oracle_eval("mm1_lcd", p=1, q=4),
    ],
)
def test_domain_errors(call):
    with pytest.raises(DomainError):
        call()
