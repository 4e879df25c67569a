import numpy as np
import pytest

from conftest import tv
from qsdlab import oracles
from qsdlab.chain import CriticalLinearBD, CustomTridiagonal, KilledMM1, RandomWalkZ, build_generator
from qsdlab.errors import DomainError
from qsdlab.kernel import decompose
from qsdlab.spectral import (
    analytic_decay_parameter,
    classify,
    decay_parameter,
    interior_count,
    invariant_pair,
    pair_from_logs,
    ratio_residuals,
    row_residuals,
    verify_semigroup_invariance,
)


def test_decay_parameter_mm1(mm1):
    est = decay_parameter(mm1, [500, 1000, 2000])
    assert abs(est.extrapolated - 1.0) <= 1e-8
    assert est.analytic == 1.0
    values = [v for _, v in est.per_N]
    assert all(b <= a for a, b in zip(values, values[1:]))
    assert all(v > 1.0 for v in values)


def test_decay_parameter_matches_toeplitz(mm1):
    est = decay_parameter(mm1, [100, 200])
    for N, v in est.per_N:
        assert v == pytest.approx(5 - 4 * np.cos(np.pi / (N + 1)), rel=1e-12)


def test_decay_parameter_single_state():
    est = decay_parameter(CustomTridiagonal((0.0,), (3.0,)), [1, 2])
    assert est.extrapolated == 3.0


def test_decay_parameter_critical():
    est = decay_parameter(CriticalLinearBD(1.0), [1000, 2000])
    assert est.analytic == 0.0
    assert abs(est.extrapolated) <= 1e-2


@pytest.mark.parametrize("schedule", [[500, 500], [1000, 500], [100]])
def test_decay_parameter_bad_schedule(mm1, schedule):
    with pytest.raises(DomainError):
        decay_parameter(mm1, schedule)


def test_analytic_decay_parameter():
    assert analytic_decay_parameter(KilledMM1(2, 3)) == pytest.approx(5 - 2 * np.sqrt(6))
    assert analytic_decay_parameter(RandomWalkZ(1, 1.5)) == pytest.approx(2.5 - 2 * np.sqrt(1.5))
    assert analytic_decay_parameter(CustomTridiagonal((1, 0), (1, 1))) is None


def test_interior_count():
    assert interior_count(2000) == 1900
    assert interior_count(1) == 1


def test_invariant_pair_values(g2000):
    pair = invariant_pair(g2000, 1.0)
    assert pair.m[0] == 1.0 and pair.x[0] == 1.0
    assert pair.m[1] == pytest.approx(1.0, rel=1e-3)
    assert pair.m[2] == pytest.approx(0.75, rel=1e-3)
    assert pair.x[1] == pytest.approx(4.0, rel=1e-3)
    j = np.arange(1, 50)
    np.testing.assert_allclose(pair.m[:49], oracles.mm1_m(j, 1, 4, normalized=True), rtol=1.1e-3)
    np.testing.assert_allclose(pair.x[:49], oracles.mm1_x(j, 1, 4, normalized=True), rtol=1.1e-3)
    assert pair.lcd_defined
    assert pair.lcd.sum() == pytest.approx(1.0, abs=1e-12)
    assert tv(pair.lcd[:100], oracles.mm1_lcd(np.arange(1, 101), 1, 4)) <= 1e-3


def test_invariant_pair_residuals(g2000):
    pair = invariant_pair(g2000)
    assert pair.lambda_used == decompose(g2000).lambda1
    assert pair.residual_m <= 1e-10 * g2000.max_rate
    assert pair.residual_x <= 1e-10 * g2000.max_rate
    assert pair.residual_m_requested == pytest.approx(pair.residual_m)


def test_invariant_pair_negative_lambda(g500):
    with pytest.raises(DomainError):
        invariant_pair(g500, -1.0)


def test_row_one_residual_by_hand():
    g = build_generator(KilledMM1(1, 4), 50)
    pair = invariant_pair(g)
    m, x, lam = pair.m, pair.x, pair.lambda_used
    # left: m_1 (-5) + m_2 * 4 = -lam m_1; right: -5 x_1 + x_2 = -lam x_1
    assert (-5 * m[0] + 4 * m[1] + lam * m[0]) / m[0] == pytest.approx(0, abs=1e-12)
    assert (-5 * x[0] + x[1] + lam * x[0]) / x[0] == pytest.approx(0, abs=1e-12)


def test_analytic_ratios_solve_equations_exactly():
    g = build_generator(KilledMM1(1, 4), 300)
    k = np.arange(1, g.n, dtype=float)
    m_up = (k + 1) / k * 0.5
    x_up = (k + 1) / k * 2.0
    rm, rx = ratio_residuals(g, m_up, x_up, 1.0)
    assert np.max(np.abs(rm[:-1])) <= 1e-12 * g.max_rate
    assert np.max(np.abs(rx[:-1])) <= 1e-12 * g.max_rate


def test_row_residuals_agree_with_ratio_form():
    g = build_generator(KilledMM1(2, 3), 40)
    pair = invariant_pair(g)
    a = row_residuals(g, pair.log_m, pair.log_x, pair.lambda_used)
    b = ratio_residuals(g, np.exp(np.diff(pair.log_m)), np.exp(np.diff(pair.log_x)), pair.lambda_used)
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])


def test_pair_from_logs_normalizes():
    g = build_generator(KilledMM1(1, 4), 100)
    j = np.arange(1, 101)
    pair = pair_from_logs(g, np.log(oracles.mm1_m(j, 1, 4)) + 7.0, np.log(oracles.mm1_x(j, 1, 4)), 1.0)
    assert pair.log_m[0] == 0.0 and pair.log_x[0] == 0.0
    assert pair.lambda_requested == 1.0


def test_semigroup_invariance(g500):
    pair = invariant_pair(g500)
    rep = verify_semigroup_invariance(pair, g500, [0.0, 1.0, 5.0], n_check=20)
    assert rep.residual_m[0] == 0.0 and rep.residual_x[0] == 0.0
    assert rep.max_m <= 1e-6 and rep.max_x <= 1e-6
    assert rep.checked == 20
    assert rep.flagged[0] == 476


def test_semigroup_single_state():
    g = build_generator(CustomTridiagonal((0.0,), (3.0,)), 1)
    pair = invariant_pair(g)
    assert pair.lambda_used == pytest.approx(3.0)
    rep = verify_semigroup_invariance(pair, g, [0.5, 2.0])
    assert rep.max_m <= 1e-12 and rep.max_x <= 1e-12


def test_lcd_sums_to_one_for_zoo_member():
    g = build_generator(KilledMM1(2, 3), 800)
    pair = invariant_pair(g)
    assert pair.lcd_defined
    assert pair.lcd.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(pair.lcd >= 0)


def test_lcd_undefined_for_critical_chain():
    pair = invariant_pair(build_generator(CriticalLinearBD(1.0), 1000))
    assert not pair.lcd_defined


def test_lcd_not_for_non_absorbing():
    pair = invariant_pair(build_generator(RandomWalkZ(1.0, 1.5), 200))
    assert pair.lcd is None


@pytest.mark.parametrize("c", [0.25, 3.7])
def test_scaling_invariance(c):
    spec = KilledMM1(1, 4)
    a = invariant_pair(build_generator(spec, 600))
    b = invariant_pair(build_generator(spec.scaled(c), 600))
    assert b.lambda_used == pytest.approx(c * a.lambda_used, rel=1e-12)
    np.testing.assert_allclose(b.lcd, a.lcd, rtol=1e-9, atol=1e-300)


def test_classify_mm1(mm1):
    res = classify(mm1, 1.0, 100.0, pairs=((1, 1), (1, 2)))
    assert res.verdict == "lambda-transient"
    assert res.positivity_verdict == "lambda-null-or-transient"
    for entry in res.pair_results:
        assert entry["tail_slope"] == pytest.approx(-1.5, abs=0.05)
        assert entry["potential"] == pytest.approx(entry["oracle_resolvent"], abs=1e-3)
    assert [d["T"] for d in res.potential_integrals[:4]] == [12.5, 25.0, 50.0, 100.0]
    js = res.to_json()
    assert js["verdict"] == "lambda-transient"


def test_classify_bad_arguments(mm1):
    with pytest.raises(DomainError):
        classify(mm1, -0.5, 100.0)
    with pytest.raises(DomainError):
        classify(mm1, 1.0, 0.0)
