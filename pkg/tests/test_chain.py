import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qsdlab.chain import (
    CriticalLinearBD,
    CustomTridiagonal,
    KilledBirthDeath,
    KilledMM1,
    RandomWalkZ,
    RateLaw,
    TruncatedGenerator,
    build_generator,
    model_from_json,
    model_to_json,
    validate_generator,
)
from qsdlab.errors import ParameterError, SizeError

rates = st.floats(0.05, 20.0)


def test_mm1_derived_constants():
    m = KilledMM1(1, 4)
    assert (m.a, m.b, m.theta) == (5.0, 0.5, 4.0)


def test_mm1_first_row():
    g = build_generator(KilledMM1(1, 4), 5)
    Q = g.q_matrix()
    assert Q[1, 0] == 4 and Q[1, 2] == 1 and Q[1, 1] == -5


def test_mm1_last_row_leaks_to_boundary():
    g = build_generator(KilledMM1(1, 4), 5)
    Q = g.q_matrix()
    assert Q[5, 4] == 4 and Q[5, 5] == -5
    assert g.kill_rates[-1] == 1 and g.boundary_leak == 1
    assert Q[5].sum() == pytest.approx(-1)


def test_critical_bd_linear_rates():
    Q = build_generator(CriticalLinearBD(1.0), 3).q_matrix()
    assert Q[2, 1] == 2 and Q[2, 3] == 2 and Q[2, 2] == -4


def test_validate_mm1():
    d = validate_generator(build_generator(KilledMM1(1, 4), 100))
    assert d.conservative and d.stable and d.irreducible_C and d.ok


def test_validate_random_walk_leak():
    d = validate_generator(build_generator(RandomWalkZ(1, 1), 50))
    assert d.boundary_leak == 2 and d.ok


def test_validate_reports_negative_entry():
    g = build_generator(KilledMM1(1, 4), 5)
    sup = np.array(g.sup)
    sup[1] = -1.0
    bad = TruncatedGenerator(g.N, g.states, g.sub, g.diag, sup, g.absorb_rates, g.kill_rates, g.model)
    d = validate_generator(bad)
    assert not d.conservative
    assert any("q[2,3]" in m and "negative" in m for m in d.messages)


def test_random_walk_states_and_kills():
    g = build_generator(RandomWalkZ(1.0, 2.0), 3)
    assert g.states.tolist() == [-3, -2, -1, 0, 1, 2, 3]
    assert g.kill_rates[0] == 2.0 and g.kill_rates[-1] == 1.0
    assert not g.absorbing


@pytest.mark.parametrize("N", [0, 1, None])
def test_small_truncation_rejected(N):
    with pytest.raises(SizeError):
        build_generator(KilledMM1(1, 4), N)


@pytest.mark.parametrize("p,q", [(0, 1), (-1, 1), (1, float("inf")), (float("nan"), 1)])
def test_bad_rates_rejected(p, q):
    with pytest.raises(ParameterError):
        KilledMM1(p, q)


def test_custom_chain_used_whole():
    spec = CustomTridiagonal((1.0, 2.0, 0.0), (3.0, 1.0, 2.0))
    g = build_generator(spec)
    assert g.n == 3 and g.boundary_leak == 0
    assert build_generator(spec, 10).n == 3
    assert validate_generator(g).ok


def test_rate_table_bounds_truncation():
    spec = KilledBirthDeath(RateLaw(values=(1, 1, 1)), RateLaw(values=(2, 2, 2)))
    build_generator(spec, 3)
    with pytest.raises(SizeError):
        build_generator(spec, 4)


def test_immigration_parameterization():
    spec = KilledBirthDeath(RateLaw(const=0.5, linear=1.0), RateLaw(linear=1.5))
    g = build_generator(spec, 4)
    assert np.allclose(g.sup, [1.5, 2.5, 3.5])
    assert np.allclose(g.sub, [3.0, 4.5, 6.0])
    assert g.absorb_rates[0] == 1.5


@pytest.mark.parametrize(
    "obj",
    [
        {"model": "killed_mm1", "p": 1.0, "q": 4.0},
        {"model": "critical_linear_bd", "rho": 2.0},
        {"model": "random_walk_z", "p": 1.0, "q": 1.0},
        {"model": "killed_birth_death", "birth": {"const": 0.5, "linear": 1.0}, "death": 2.0},
        {"model": "custom_tridiagonal", "birth": [1.0, 0.0], "death": [1.0, 2.0]},
    ],
)
def test_json_round_trip(obj):
    spec = model_from_json(json.dumps(obj))
    assert model_from_json(model_to_json(spec)) == spec
    assert model_to_json(spec) == obj


def test_json_ignores_n_trunc_and_rejects_unknown():
    assert model_from_json({"model": "killed_mm1", "p": 1, "q": 4, "n_trunc": 10}) == KilledMM1(1, 4)
    with pytest.raises(ParameterError):
        model_from_json({"model": "killed_mm1", "p": 1})
    with pytest.raises(ParameterError):
        model_from_json({"model": "mm2", "p": 1, "q": 2})


def test_generator_is_read_only():
    g = build_generator(KilledMM1(1, 4), 5)
    with pytest.raises(ValueError):
        g.diag[0] = 0.0


@settings(max_examples=40, deadline=None)
@given(p=rates, q=rates, N=st.integers(2, 60))
def test_generator_invariants(p, q, N):
    g = build_generator(KilledMM1(p, q), N)
    Q = g.q_matrix()
    off = Q - np.diag(np.diag(Q))
    assert np.all(off >= 0)
    rows = Q[1:].sum(axis=1)
    assert np.all(rows <= 1e-12 * (p + q))
    assert np.all(rows >= -g.kill_rates - 1e-12 * (p + q))
    assert validate_generator(g).ok


@settings(max_examples=30, deadline=None)
@given(rho=rates, N=st.integers(2, 40), extra=st.integers(1, 20))
def test_nesting(rho, N, extra):
    spec = CriticalLinearBD(rho)
    a, b = build_generator(spec, N), build_generator(spec, N + extra)
    Ta, Tb = a.transient_block(), b.transient_block()
    assert np.array_equal(Ta[: N - 1], Tb[: N - 1, :N])


def test_deterministic():
    a, b = build_generator(KilledMM1(1, 4), 30), build_generator(KilledMM1(1, 4), 30)
    assert np.array_equal(a.q_matrix(), b.q_matrix())
