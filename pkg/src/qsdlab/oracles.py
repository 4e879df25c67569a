"""Closed-form reference values used as independent test oracles.

Killed M/M/1 queue with arrival rate p < service rate q, writing
a = p + q, b = sqrt(p/q), theta = 2 sqrt(pq), lambda = a - theta:

    p_ij(t) ~ i j b^(j-i) * 2 / (theta sqrt(2 pi theta)) * t^(-3/2) e^(-lambda t)
    1 - p_i0(t) ~ i b^(-i) / (lambda sqrt(2 pi theta)) * t^(-3/2) e^(-lambda t)
    LCD_j = (1 - b)^2 j b^(j-1)
    m_j = j b^j,  x_i = i b^(-i)

and the lambda-potential int_0^inf e^(lambda t) p_ij(t) dt, the solution
of theta G_ij = p G_(i+1)j + q G_(i-1)j + delta_ij with G_0j = 0, which is
(2/theta) min(i, j) b^(j-i).

Critical linear birth-death process, per-capita rate rho, from one
individual:  p_10(t) = rho t / (1 + rho t),
p_1j(t) = (rho t)^(j-1) / (1 + rho t)^(j+1).

Continuous-time random walk on Z: p_00(t) = e^(-(p+q) t) I_0(2 sqrt(pq) t).
"""

from __future__ import annotations

import enum
import math

import numpy as np

from .errors import DomainError

__all__ = [
    "Oracle",
    "oracle_eval",
    "mm1_lambda",
    "mm1_m",
    "mm1_x",
    "mm1_lcd",
    "mm1_asymptotic_p",
    "mm1_asymptotic_survival",
    "mm1_resolvent",
    "mm1_potential_diagonal",
    "critbd_p10",
    "critbd_p1j",
    "critbd_survival",
    "rw_p00",
    "bessel_i0e",
    "bessel_i0e_series",
    "bessel_i0e_asymptotic",
]

SERIES_LIMIT = 100.0


def _mm1(p, q):
    p, q = float(p), float(q)
    if not (p > 0 and q > 0 and math.isfinite(p) and math.isfinite(q)):
        raise DomainError("M/M/1 rates must be finite and positive")
    if not p < q:
        raise DomainError(f"M/M/1 oracles need p < q (got p={p}, q={q})")
    b = math.sqrt(p / q)
    theta = 2.0 * math.sqrt(p * q)
    return b, theta, p + q - theta


def _state(k, name="state"):
    k = np.asarray(k)
    if np.any(k < 1) or np.any(k != np.floor(k)):
        raise DomainError(f"{name} must be an integer >= 1")
    return k.astype(float)


def _time(t):
    t = np.asarray(t, dtype=float)
    if np.any(~(t > 0)):
        raise DomainError("time must be > 0")
    return t


def mm1_lambda(p, q):
    return _mm1(p, q)[2]


def mm1_m(j, p, q, normalized=False):
    """lambda-invariant measure j b^j (or j b^(j-1), so that m_1 = 1)."""
    b, _, _ = _mm1(p, q)
    j = _state(j)
    return j * b ** (j - 1 if normalized else j)


def mm1_x(i, p, q, normalized=False):
    """lambda-invariant vector i b^(-i) (or i b^(1-i), so that x_1 = 1)."""
    b, _, _ = _mm1(p, q)
    i = _state(i)
    return i * b ** (1 - i if normalized else -i)


def mm1_lcd(j, p, q):
    b, _, _ = _mm1(p, q)
    j = _state(j)
    return (1 - b) ** 2 * j * b ** (j - 1)


def mm1_asymptotic_p(i, j, t, p, q):
    b, theta, lam = _mm1(p, q)
    i, j, t = _state(i), _state(j), _time(t)
    return i * j * b ** (j - i) * 2 / (theta * math.sqrt(2 * math.pi * theta)) * t ** -1.5 * np.exp(-lam * t)


def mm1_asymptotic_survival(i, t, p, q):
    b, theta, lam = _mm1(p, q)
    i, t = _state(i), _time(t)
    return i * b ** -i / (lam * math.sqrt(2 * math.pi * theta)) * t ** -1.5 * np.exp(-lam * t)


def mm1_resolvent(i, j, p, q):
    b, theta, _ = _mm1(p, q)
    i, j = _state(i), _state(j)
    return 2 / theta * np.minimum(i, j) * b ** (j - i)


def mm1_potential_diagonal(i, p, q):
    """2i/theta: the lambda-potential as displayed, which has no i != j factors."""
    _, theta, _ = _mm1(p, q)
    return 2 * _state(i) / theta


def _rho(rho):
    rho = float(rho)
    if not (rho > 0 and math.isfinite(rho)):
        raise DomainError("rho must be finite and positive")
    return rho


def critbd_p10(t, rho=1.0):
    x = _rho(rho) * _time(t)
    return x / (1 + x)


def critbd_survival(t, rho=1.0, i=1):
    """1 - p_i0(t) = 1 - (rho t / (1 + rho t))^i, from independence of the founders."""
    x = _rho(rho) * _time(t)
    i = _state(i)
    return -np.expm1(i * np.log(x / (1 + x)))


def critbd_p1j(j, t, rho=1.0):
    x = _rho(rho) * _time(t)
    j = _state(j)
    # (x / (1 + x))^(j-1) / (1 + x)^2 stays finite for large j
    return (x / (1 + x)) ** (j - 1) / (1 + x) ** 2


def bessel_i0e_series(z: float) -> float:
    """e^(-z) I_0(z) from the power series sum (z^2/4)^k / (k!)^2.

    Stops once the geometric bound on the remaining tail drops below
    1e-16 of the partial sum; the term ratio is (z/2)^2 / (k+1)^2.
    """
    z = abs(float(z))
    y = 0.25 * z * z
    term, total, k = 1.0, 1.0, 0
    while True:
        ratio = y / ((k + 1) ** 2)
        term *= ratio
        total += term
        k += 1
        r_next = y / ((k + 1) ** 2)
        if r_next < 0.5 and term * r_next / (1 - r_next) < 1e-16 * total:
            break
    return total * math.exp(-z)


def bessel_i0e_asymptotic(z: float) -> float:
    """e^(-z) I_0(z) from the large-z expansion sum ((2k-1)!!)^2 / (k! (8z)^k).

    Summation stops at the smallest term (the series is asymptotic).
    """
    z = float(z)
    if z <= 0:
        raise DomainError("asymptotic expansion needs z > 0")
    term, total, k = 1.0, 1.0, 0
    while True:
        k += 1
        nxt = term * (2 * k - 1) ** 2 / (k * 8 * z)
        if nxt >= term or nxt < 1e-17 * total:
            break
        term = nxt
        total += term
    return total / math.sqrt(2 * math.pi * z)


def bessel_i0e(z) -> np.ndarray:
    z = np.abs(np.asarray(z, dtype=float))
    out = np.array([bessel_i0e_series(v) if v <= SERIES_LIMIT else bessel_i0e_asymptotic(v) for v in z.ravel()])
    return out.reshape(z.shape) if z.shape else float(out[0])


def rw_p00(t, p=1.0, q=1.0):
    """p_00(t) for the walk stepping +1 at rate p and -1 at rate q."""
    p, q = float(p), float(q)
    if not (p > 0 and q > 0):
        raise DomainError("random-walk rates must be positive")
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise DomainError("time must be >= 0")
    theta = 2 * math.sqrt(p * q)
    # e^{-(p+q)t} I0(theta t) = e^{-(p+q-theta)t} * i0e(theta t)
    return np.exp(-(p + q - theta) * t) * bessel_i0e(theta * t)


class Oracle(enum.Enum):
    MM1_Lambda = "mm1_lambda"
    MM1_M = "mm1_m"
    MM1_X = "mm1_x"
    MM1_LCD = "mm1_lcd"
    MM1_AsymptoticP = "mm1_asymptotic_p"
    MM1_AsymptoticSurvival = "mm1_asymptotic_survival"
    MM1_Resolvent = "mm1_resolvent"
    CritBD_P10 = "critbd_p10"
    CritBD_P1j = "critbd_p1j"
    RW_P00 = "rw_p00"


_DISPATCH = {
    Oracle.MM1_Lambda: lambda a: mm1_lambda(a["p"], a["q"]),
    Oracle.MM1_M: lambda a: mm1_m(a["j"], a["p"], a["q"], a.get("normalized", False)),
    Oracle.MM1_X: lambda a: mm1_x(a["i"], a["p"], a["q"], a.get("normalized", False)),
    Oracle.MM1_LCD: lambda a: mm1_lcd(a["j"], a["p"], a["q"]),
    Oracle.MM1_AsymptoticP: lambda a: mm1_asymptotic_p(a["i"], a["j"], a["t"], a["p"], a["q"]),
    Oracle.MM1_AsymptoticSurvival: lambda a: mm1_asymptotic_survival(a["i"], a["t"], a["p"], a["q"]),
    Oracle.MM1_Resolvent: lambda a: mm1_resolvent(a["i"], a["j"], a["p"], a["q"]),
    Oracle.CritBD_P10: lambda a: critbd_p10(a["t"], a.get("rho", 1.0)),
    Oracle.CritBD_P1j: lambda a: critbd_p1j(a["j"], a["t"], a.get("rho", 1.0)),
    Oracle.RW_P00: lambda a: rw_p00(a["t"], a.get("p", 1.0), a.get("q", 1.0)),
}


def oracle_eval(quantity: Oracle | str, **params) -> float | np.ndarray:
    """Evaluate a named closed-form quantity, e.g. ``oracle_eval("mm1_lcd", j=2, p=1, q=4)``."""
    quantity = Oracle(quantity) if not isinstance(quantity, Oracle) else quantity
    try:
        value = _DISPATCH[quantity](params)
    except KeyError as exc:
        raise DomainError(f"{quantity.value} needs parameter {exc.args[0]!r}") from None
    value = np.asarray(value, dtype=float)
    return float(value) if value.ndim == 0 else value
