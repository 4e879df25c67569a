import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qsdlab import oracles
from qsdlab.asymptotics import (
    ConjectureConfig,
    LogGSeries,
    conjecture_report,
    decay_series,
    estimate_kappa,
    oracle_series,
    rank1_factor_test,
)
from qsdlab.chain import CriticalLinearBD, CustomTridiagonal, KilledMM1, RandomWalkZ
from qsdlab.errors import DomainError, UnsupportedModelError


def series(t, log_g):
    t = np.asarray(t, dtype=float)
    return LogGSeries(1, 1, t, np.asarray(log_g, dtype=float), 0.0, "test", np.ones(len(t), bool))


def test_exact_power_law():
    t = np.geomspace(10, 1000, 30)
    k = estimate_kappa(series(t, math.log(2) - 2 * np.log(t)), window=(10, 1000))
    assert k.kappa == pytest.approx(2.0, abs=1e-10)
    assert k.constant == pytest.approx(2.0, rel=1e-10)
    assert k.stderr <= 1e-10
    assert k.r_squared == pytest.approx(1.0)
    assert k.plain_kappa == pytest.approx(2.0, abs=1e-10)
    assert k.rv_index == pytest.approx(0.5)
    assert not k.flagged


def test_correction_recovers_inverse_t_term():
    t = np.geomspace(20, 200, 40)
    k = estimate_kappa(series(t, 1.0 - 1.5 * np.log(t) + 3.0 / t))
    assert k.kappa == pytest.approx(1.5, abs=1e-9)
    assert k.correction_coef == pytest.approx(3.0, rel=1e-8)
    assert abs(k.plain_kappa - 1.5) > 1e-3


def test_default_window_is_last_three_quarters():
    t = np.linspace(1, 100, 200)
    k = estimate_kappa(series(t, -np.log(t)))
    assert k.window == (25.0, 100.0)


def test_too_few_points():
    t = np.geomspace(1, 10, 7)
    with pytest.raises(DomainError):
        estimate_kappa(series(t, -np.log(t)), window=(1, 10))


def test_unreliable_points_are_skipped():
    t = np.geomspace(1, 10, 12)
    s = LogGSeries(1, 1, t, -np.log(t), 0.0, "test", np.arange(12) < 6)
    with pytest.raises(DomainError):
        estimate_kappa(s, window=(1, 10))


def test_grid_must_increase():
    with pytest.raises(DomainError):
        series([1.0, 1.0, 2.0], [0.0, 0.0, 0.0])


def test_flat_series_has_no_correction():
    t = np.geomspace(10, 100, 20)
    k = estimate_kappa(series(t, np.zeros_like(t)))
    assert abs(k.kappa) < 1e-12
    assert any("no polynomial correction" in n for n in k.notes)


def test_rank1_exact_outer_product():
    i = np.arange(1, 5)[:, None]
    j = np.arange(1, 5)[None, :]
    rep = rank1_factor_test(3.0 * i * j, x=np.arange(1, 5), m=np.arange(1, 5))
    assert rep.deviation <= 1e-14
    assert rep.A == pytest.approx(3.0, rel=1e-14)
    assert rep.A_spread <= 1e-14
    assert rep.passed


def test_rank1_detects_perturbation():
    rep = rank1_factor_test([[1.0, 1.0], [1.0, 1.2]])
    assert rep.deviation == pytest.approx(0.2, rel=1e-12)
    assert not rep.passed
    assert rep.A is None


@pytest.mark.parametrize("L", [[[1.0, 0.0], [1.0, 1.0]], [[1.0, -1.0], [1.0, 1.0]], [1.0, 2.0]])
def test_rank1_rejects_bad_input(L):
    with pytest.raises(DomainError):
        rank1_factor_test(L)


@settings(max_examples=50, deadline=None)
@given(
    st.lists(st.floats(1e-3, 1e3), min_size=2, max_size=6),
    st.lists(st.floats(1e-3, 1e3), min_size=2, max_size=6),
    st.floats(1e-2, 1e2),
)
def test_rank1_random_outer_products(u, v, a):
    u, v = np.array(u), np.array(v)
    rep = rank1_factor_test(a * np.outer(u, v), x=u, m=v)
    assert rep.deviation <= 1e-12
    assert rep.A == pytest.approx(a, rel=1e-12)
    assert rep.passed


def test_single_state_series_is_flat():
    spec = CustomTridiagonal((0.0,), (3.0,))
    t = np.geomspace(1, 10, 20)
    s = decay_series(spec, 1, 1, 3.0, t, N=1, check_truncation=False)
    np.testing.assert_allclose(s.log_g, 0.0, atol=1e-12)
    rep = conjecture_report(spec, ConjectureConfig(states=(1,), window=(1, 10), n_points=20, N=1, check_truncation=False))
    assert rep.conjecture_i["status"] == "no polynomial correction"


def test_critical_survival_oracle():
    t = np.geomspace(1, 100, 20)
    s = oracle_series(CriticalLinearBD(1.0), 1, None, t)
    np.testing.assert_allclose(s.log_g, -np.log1p(t), rtol=1e-13)
    assert s.is_survival and s.lambda_used == 0.0
    k = estimate_kappa(s, window=(10, 100))
    assert k.kappa == pytest.approx(1.0, abs=5e-3)


def test_critical_kernel_matches_oracle():
    spec = CriticalLinearBD(1.0)
    t = np.geomspace(5, 20, 12)
    s = decay_series(spec, 1, 2, 0.0, t, N=1000, check_truncation=False)
    o = oracle_series(spec, 1, 2, t)
    np.testing.assert_allclose(s.log_g, o.log_g, atol=1e-8)


def test_oracle_series_unsupported():
    with pytest.raises(UnsupportedModelError):
        oracle_series(KilledMM1(1, 4), 1, 1, [1.0, 2.0])
    with pytest.raises(UnsupportedModelError):
        oracle_series(CriticalLinearBD(1.0), 2, 1, [1.0, 2.0])


def test_random_walk_oracle_kappa():
    t = np.geomspace(100, 400, 40)
    k = estimate_kappa(oracle_series(RandomWalkZ(1.0, 1.5), 0, 0, t))
    assert k.kappa == pytest.approx(0.5, abs=0.02)
    assert any("kappa < 1" in n for n in k.notes)


def test_time_unit_invariance():
    t = np.geomspace(50, 200, 30)
    a = estimate_kappa(decay_series(KilledMM1(1, 4), 1, 1, 1.0, t, N=1000, check_truncation=False))
    c = 3.0
    b = estimate_kappa(decay_series(KilledMM1(3, 12), 1, 1, c, t / c, N=1000, check_truncation=False))
    assert b.kappa == pytest.approx(a.kappa, abs=1e-6)


def test_state_outside_truncation():
    with pytest.raises(DomainError):
        decay_series(KilledMM1(1, 4), 1, 600, 1.0, [1.0, 2.0], N=500, check_truncation=False)


def test_mm1_kappa_and_constant():
    t = np.geomspace(100, 400, 40)
    s = decay_series(KilledMM1(1, 4), 1, 1, 1.0, t, N=2000)
    assert s.truncation_ok
    k = estimate_kappa(s)
    ref = float(oracles.mm1_asymptotic_p(1, 1, 1.0, 1, 4) * math.e)
    assert k.kappa == pytest.approx(1.5, abs=0.05)
    assert k.constant == pytest.approx(ref, rel=0.05)
    js = json.loads(json.dumps(k.to_json()))
    assert js["n_points"] == 40


def test_series_serialization():
    t = np.geomspace(1, 10, 10)
    s = decay_series(KilledMM1(1, 4), 1, None, 1.0, t, N=200, check_truncation=False)
    assert s.to_json()["j"] == "survival"
    lines = s.to_csv().splitlines()
    assert lines[0] == "t,log_g" and len(lines) == 11


@pytest.mark.slow
def test_conjecture_report_mm1():
    rep = conjecture_report(KilledMM1(1, 4))
    assert rep.conjecture_i["status"] == "pass"
    assert rep.conjecture_ii["status"] == "pass"
    assert rep.conjecture_iii["status"] == "pass"
    js = json.loads(json.dumps(rep.to_json()))
    assert js["states"] == [1, 2, 3, 4]
    csv_lines = rep.kappa_table_csv().splitlines()
    assert csv_lines[0] == "i,j,kappa,constant" and len(csv_lines) == 17
