"""Decay parameter, lambda-invariant measure/vector and lambda-classification.

Under killing truncation the smallest eigenvalue lambda_1^(N) of minus
the transient block decreases to the decay parameter as N grows.  For
tridiagonal Toeplitz blocks lambda_1^(N) = a - theta cos(pi / (N + 1)),
so the bias is c / (N + 1)^2 to leading order and a two-level Richardson
step removes it.

The left and right Perron vectors of the truncated block solve the
q-matrix invariance equations

    sum_i m_i q_ij = -lambda m_j,      sum_j q_ij x_j = -lambda x_i

at lambda = lambda_1^(N).  They are stored as logarithms: on long
truncations m decays and x grows geometrically far beyond the float range.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np
from scipy.integrate import cumulative_simpson
from scipy.special import logsumexp

from .chain import CriticalLinearBD, KilledMM1, ModelSpec, RandomWalkZ, TruncatedGenerator, build_generator
from .errors import DomainError, StructureError
from .kernel import SpectralDecomposition, decompose, log_transition_series, smallest_eigenvalue, transition_matrix
from . import oracles

__all__ = [
    "LambdaEstimate",
    "InvariantPair",
    "SemigroupReport",
    "Classification",
    "analytic_decay_parameter",
    "decay_parameter",
    "invariant_pair",
    "pair_from_logs",
    "row_residuals",
    "ratio_residuals",
    "verify_semigroup_invariance",
    "classify",
    "interior_count",
]

log = logging.getLogger(__name__)

BOUNDARY_FRACTION = 0.05
LCD_TAIL_SHARE = 1e-8
TRANSIENT_SLOPE = -1.05
DIVERGENCE_THRESHOLD = 1e6
SLOPE_DRIFT_LIMIT = 0.1


def interior_count(n: int) -> int:
    """Number of leading rows kept once the top 5% near the boundary is dropped."""
    return max(1, int(np.floor((1 - BOUNDARY_FRACTION) * n)))


def analytic_decay_parameter(spec: ModelSpec) -> float | None:
    if isinstance(spec, (KilledMM1, RandomWalkZ)):
        return spec.p + spec.q - 2.0 * np.sqrt(spec.p * spec.q)
    if isinstance(spec, CriticalLinearBD):
        return 0.0
    return None


@dataclass(frozen=True)
class LambdaEstimate:
    per_N: tuple[tuple[int, float], ...]
    extrapolated: float
    error_estimate: float
    analytic: float | None = None

    def to_json(self) -> dict[str, Any]:
        return {
            "per_N": [[n, v] for n, v in self.per_N],
            "extrapolated": self.extrapolated,
            "error_estimate": self.error_estimate,
            "analytic": self.analytic,
        }


def decay_parameter(spec: ModelSpec, N_schedule: Sequence[int]) -> LambdaEstimate:
    """lambda_1^(N) along ``N_schedule`` and its Richardson limit.

    The extrapolation assumes lambda_1^(N) = lambda + c / n^2 with n one
    more than the number of retained states, the exact leading form for
    Toeplitz blocks.
    """
    Ns = [int(n) for n in N_schedule]
    if len(Ns) < 2:
        raise DomainError("need at least two truncation levels")
    if any(b <= a for a, b in zip(Ns, Ns[1:])):
        raise DomainError(f"truncation schedule must be strictly increasing, got {Ns}")
    sizes, values = [], []
    for N in Ns:
        g = build_generator(spec, N)
        sizes.append(g.n + 1)
        values.append(smallest_eigenvalue(g))
    for (n1, v1), (n2, v2) in zip(zip(Ns, values), zip(Ns[1:], values[1:])):
        if v2 > v1 + 64 * np.finfo(float).eps * max(abs(v1), 1.0):
            raise StructureError(f"lambda_1 increased from N={n1} ({v1!r}) to N={n2} ({v2!r})")
    s1, s2 = float(sizes[-2]), float(sizes[-1])
    v1, v2 = values[-2], values[-1]
    # finite chains stop growing once N exceeds their length
    extrapolated = v2 if s1 == s2 else v2 + (v2 - v1) * s1 * s1 / (s2 * s2 - s1 * s1)
    return LambdaEstimate(
        per_N=tuple(zip(Ns, values)),
        extrapolated=float(extrapolated),
        error_estimate=float(abs(extrapolated - v2)),
        analytic=analytic_decay_parameter(spec),
    )


def ratio_residuals(g: TruncatedGenerator, m_up: np.ndarray, x_up: np.ndarray, lam: float):
    """Row residuals from neighbour ratios m_up[k] = m_(k+1)/m_k and x_up[k] = x_(k+1)/x_k.

    Returns ((mQ)_j + lam m_j) / m_j and ((Qx)_i + lam x_i) / x_i per row.
    Supplying closed-form ratios checks an analytic pair without ever
    forming its (possibly unrepresentable) components.
    """
    rm = np.array(g.diag, dtype=float) + lam
    rx = rm.copy()
    if g.n > 1:
        rm[1:] += g.sup / m_up
        rm[:-1] += g.sub * m_up
        rx[1:] += g.sub / x_up
        rx[:-1] += g.sup * x_up
    return rm, rx


def row_residuals(g: TruncatedGenerator, log_m: np.ndarray, log_x: np.ndarray, lam: float):
    """Signed per-row residuals ((mQ)_j + lam m_j) / m_j and ((Qx)_i + lam x_i) / x_i.

    Evaluated through ratios of neighbouring components so that vectors
    outside the float range are handled.
    """
    return ratio_residuals(g, np.exp(np.diff(log_m)), np.exp(np.diff(log_x)), lam)


@dataclass(frozen=True, eq=False)
class InvariantPair:
    """lambda-invariant measure m and vector x, normalized m_1 = x_1 = 1.

    ``lambda_used`` is the eigenvalue the vectors satisfy; residuals are
    max |row residual| / component over interior rows, in rate units.
    ``lambda_requested`` is the caller's decay parameter, with residuals at
    that value kept alongside.
    """

    states: np.ndarray
    log_m: np.ndarray
    log_x: np.ndarray
    lambda_used: float
    lambda_requested: float
    residual_m: float
    residual_x: float
    residual_m_requested: float
    residual_x_requested: float
    interior: int
    lcd: np.ndarray | None
    lcd_tail_share: float
    messages: tuple[str, ...] = ()

    @property
    def m(self) -> np.ndarray:
        with np.errstate(over="ignore", under="ignore"):
            return np.exp(self.log_m)

    @property
    def x(self) -> np.ndarray:
        with np.errstate(over="ignore", under="ignore"):
            return np.exp(self.log_x)

    @property
    def lcd_defined(self) -> bool:
        return self.lcd is not None

    def to_json(self) -> dict[str, Any]:
        def fl(a):
            return [float(v) if np.isfinite(v) else None for v in a]

        return {
            "lambda": self.lambda_used,
            "lambda_requested": self.lambda_requested,
            "states": self.states.tolist(),
            "m": fl(self.m),
            "x": fl(self.x),
            "log_m": fl(self.log_m),
            "log_x": fl(self.log_x),
            "lcd": None if self.lcd is None else self.lcd.tolist(),
            "residual_m": self.residual_m,
            "residual_x": self.residual_x,
            "residual_m_requested": self.residual_m_requested,
            "residual_x_requested": self.residual_x_requested,
            "interior_rows": self.interior,
            "messages": list(self.messages),
        }


def pair_from_logs(
    g: TruncatedGenerator, log_m, log_x, lam: float, lam_requested: float | None = None, messages=()
) -> InvariantPair:
    """Wrap given log-vectors as an InvariantPair with residuals at ``lam``."""
    log_m = np.asarray(log_m, dtype=float) - float(log_m[0])
    log_x = np.asarray(log_x, dtype=float) - float(log_x[0])
    lam_requested = lam if lam_requested is None else lam_requested
    k = interior_count(g.n)
    rm, rx = row_residuals(g, log_m, log_x, lam)
    rm_q, rx_q = row_residuals(g, log_m, log_x, lam_requested)
    lcd, tail = None, float("nan")
    if g.absorbing:
        top = max(1, g.n // 4)
        total = logsumexp(log_m)
        tail = float(np.exp(logsumexp(log_m[-top:]) - total)) if g.n > 1 else 0.0
        if tail <= LCD_TAIL_SHARE:
            lcd = np.exp(log_m - total)
    return InvariantPair(
        states=g.states,
        log_m=log_m,
        log_x=log_x,
        lambda_used=float(lam),
        lambda_requested=float(lam_requested),
        residual_m=float(np.max(np.abs(rm[:k]))),
        residual_x=float(np.max(np.abs(rx[:k]))),
        residual_m_requested=float(np.max(np.abs(rm_q[:k]))),
        residual_x_requested=float(np.max(np.abs(rx_q[:k]))),
        interior=k,
        lcd=lcd,
        lcd_tail_share=tail,
        messages=tuple(messages),
    )


def invariant_pair(
    g: TruncatedGenerator, lam: float | None = None, decomposition: SpectralDecomposition | None = None
) -> InvariantPair:
    """Left/right Perron vectors of the truncated block at lambda_1^(N)."""
    if lam is not None and lam < 0:
        raise DomainError("decay parameter must be >= 0")
    dec = decomposition if decomposition is not None else decompose(g)
    u = dec.basis[:, 0]
    messages = []
    if np.any(u <= 0):
        messages.append(f"{int(np.sum(u <= 0))} ground-state components are not positive; magnitudes used")
    with np.errstate(divide="ignore"):
        log_u = np.log(np.abs(u))
    lw = dec.log_similarity
    lam1 = dec.lambda1
    return pair_from_logs(g, lw + log_u, log_u - lw, lam1, lam1 if lam is None else lam, messages)


@dataclass(frozen=True)
class SemigroupReport:
    """Relative residuals of sum_i m_i p_ij(t) = e^(-lambda t) m_j and its x analogue."""

    times: tuple[float, ...]
    lam: float
    checked: int
    residual_m: tuple[float, ...]
    residual_x: tuple[float, ...]
    flagged: tuple[int, ...] = ()

    @property
    def max_m(self) -> float:
        return max(self.residual_m)

    @property
    def max_x(self) -> float:
        return max(self.residual_x)

    def to_json(self) -> dict[str, Any]:
        return {
            "times": list(self.times),
            "lambda": self.lam,
            "checked_indices": self.checked,
            "residual_m": list(self.residual_m),
            "residual_x": list(self.residual_x),
            "flagged_states": list(self.flagged),
        }


def verify_semigroup_invariance(
    pair: InvariantPair,
    g: TruncatedGenerator,
    t_list: Sequence[float],
    n_check: int | None = None,
    method: str = "auto",
    decomposition: SpectralDecomposition | None = None,
) -> SemigroupReport:
    """Check the semigroup form of invariance at each time in ``t_list``.

    Residuals are max over the first ``n_check`` states (interior rows by
    default) of |sum_i m_i p_ij(t) / (e^(-lambda t) m_j) - 1|, and
    likewise for x, with lambda = ``pair.lambda_used``.
    """
    k = interior_count(g.n) if n_check is None else min(int(n_check), g.n)
    lam = pair.lambda_used
    res_m, res_x = [], []
    for t in t_list:
        K = transition_matrix(g, t, method=method, decomposition=decomposition)
        logP = K.log_probabilities
        lm = logsumexp(pair.log_m[:, None] + logP[:, :k], axis=0) - pair.log_m[:k]
        lx = logsumexp(logP[:k, :] + pair.log_x[None, :], axis=1) - pair.log_x[:k]
        res_m.append(float(np.max(np.abs(np.expm1(lm + lam * t)))))
        res_x.append(float(np.max(np.abs(np.expm1(lx + lam * t)))))
    flagged = tuple(int(s) for s in g.states[interior_count(g.n):])
    return SemigroupReport(tuple(float(t) for t in t_list), lam, k, tuple(res_m), tuple(res_x), flagged)


@dataclass(frozen=True)
class Classification:
    lambda_used: float
    potential_integrals: tuple[dict, ...]
    pair_results: tuple[dict, ...]
    verdict: str
    positivity_norm: float
    positivity_converged: bool
    positivity_verdict: str
    messages: tuple[str, ...] = field(default=())

    def to_json(self) -> dict[str, Any]:
        return {
            "lambda": self.lambda_used,
            "potential_integrals": list(self.potential_integrals),
            "pairs": list(self.pair_results),
            "verdict": self.verdict,
            "positivity_norm": self.positivity_norm,
            "positivity_converged": self.positivity_converged,
            "positivity_verdict": self.positivity_verdict,
            "messages": list(self.messages),
        }


def _integrand(dec: SpectralDecomposition, i: int, j: int, lam: float, t: np.ndarray) -> np.ndarray:
    out = np.empty_like(t)
    for s in range(0, len(t), 2048):
        chunk = t[s:s + 2048]
        _, log_h = log_transition_series(dec, i, j, chunk)
        out[s:s + 2048] = np.exp(np.nan_to_num(log_h, nan=-np.inf) + (lam - dec.lambda1) * chunk)
    return out


def _potential(dec, i, j, lam, T, rtol=1e-11, n0=2048, n_max=2 ** 17):
    """Cumulative Simpson integral of e^(lam t) p_ij(t) on [0, T], doubling the grid."""
    n = n0
    prev = None
    while True:
        t = np.linspace(0.0, T, n + 1)
        f = _integrand(dec, i, j, lam, t)
        cum = cumulative_simpson(f, x=t, initial=0.0)
        if prev is not None and abs(cum[-1] - prev) <= rtol * max(1.0, abs(cum[-1])):
            return t, cum
        if n >= n_max:
            log.warning("potential integral for (%d, %d) not converged at %d intervals", i, j, n)
            return t, cum
        prev = cum[-1]
        n *= 2


def _power_fit(t: np.ndarray, y: np.ndarray):
    """Least-squares fit log y = log c + s log t; returns (s, c, r^2)."""
    X = np.column_stack([np.ones_like(t), np.log(t)])
    ly = np.log(y)
    coef, *_ = np.linalg.lstsq(X, ly, rcond=None)
    resid = ly - X @ coef
    ss = np.sum((ly - ly.mean()) ** 2)
    r2 = 1.0 - np.sum(resid ** 2) / ss if ss > 0 else 1.0
    return float(coef[1]), float(np.exp(coef[0])), float(r2)


def classify(
    spec: ModelSpec,
    lam: float,
    T_max: float,
    pairs: Sequence[tuple[int, int]] = ((1, 1),),
    N: int = 2000,
) -> Classification:
    """Numerical lambda-classification from potentials and the invariant pair.

    Per pair, int_0^T e^(lam t) p_ij(t) dt is integrated on a refining
    Simpson grid.  The integrand tail on [T/4, T] is fitted to c t^s: the
    chain is called lambda-transient when s < -1.05 and lambda-recurrent
    when the integral exceeds 1e6; anything else is inconclusive.  The
    reported ``potential`` adds the fitted tail c T^(s+1) / (-s-1) when
    s < -1.  Positivity uses the partial sums of m_k x_k.
    """
    if lam < 0:
        raise DomainError("decay parameter must be >= 0")
    if not T_max > 0:
        raise DomainError("T_max must be > 0")
    g = build_generator(spec, N)
    dec = decompose(g)
    messages: list[str] = []
    integrals, results, verdicts = [], [], []
    for i, j in pairs:
        t, cum = _potential(dec, i, j, lam, T_max)
        n = len(t) - 1
        for frac in (8, 4, 2, 1):
            integrals.append({"i": i, "j": j, "T": T_max / frac, "integral": float(cum[n // frac])})
        tail_t = np.geomspace(T_max / 4, T_max, 64)
        f_tail = _integrand(dec, i, j, lam, tail_t)
        if np.all(f_tail > 0):
            s, c, r2 = _power_fit(tail_t, f_tail)
            s_lo, _, _ = _power_fit(tail_t[:32], f_tail[:32])
            s_hi, _, _ = _power_fit(tail_t[32:], f_tail[32:])
            drift = abs(s_hi - s_lo)
        else:
            s, c, r2, drift = float("nan"), float("nan"), float("nan"), float("inf")
        total = float(cum[-1])
        tail = c * T_max ** (s + 1) / (-s - 1) if s < -1 else float("inf")
        if total > DIVERGENCE_THRESHOLD:
            v = "lambda-recurrent"
        elif drift > SLOPE_DRIFT_LIMIT:
            v = "inconclusive"
            messages.append(f"({i},{j}): tail slope drifts by {drift:.3g}; T_max may be inside the transient regime")
        elif s < TRANSIENT_SLOPE:
            v = "lambda-transient"
        else:
            v = "inconclusive"
        verdicts.append(v)
        entry = {
            "i": i, "j": j, "T": T_max, "integral": total, "tail_estimate": tail,
            "potential": total + tail, "tail_slope": s, "tail_constant": c, "tail_r2": r2,
            "slope_drift": drift, "verdict": v,
        }
        if isinstance(spec, KilledMM1) and spec.p < spec.q:
            entry["oracle_resolvent"] = float(oracles.mm1_resolvent(i, j, spec.p, spec.q))
            entry["oracle_displayed_2i_over_theta"] = float(oracles.mm1_potential_diagonal(i, spec.p, spec.q))
        results.append(entry)

    if all(v == "lambda-transient" for v in verdicts):
        verdict = "lambda-transient"
    elif any(v == "lambda-recurrent" for v in verdicts):
        verdict = "lambda-recurrent"
    else:
        verdict = "inconclusive"

    pair = invariant_pair(g, lam, decomposition=dec)
    k = pair.interior
    log_terms = pair.log_m[:k] + pair.log_x[:k]
    total = logsumexp(log_terms)
    top = max(1, k // 4)
    tail_share = float(np.exp(logsumexp(log_terms[-top:]) - total)) if k > 1 else 0.0
    converged = tail_share <= LCD_TAIL_SHARE
    norm = float(np.exp(total))
    if not converged:
        positivity = "lambda-null-or-transient"
        messages.append(f"partial sums of m_k x_k keep growing (top-quarter share {tail_share:.3g})")
    elif verdict == "lambda-transient":
        positivity = "inconclusive"
        messages.append("sum m_k x_k converges although the potential converges")
    else:
        positivity = "lambda-positive"
    return Classification(
        lambda_used=float(lam),
        potential_integrals=tuple(integrals),
        pair_results=tuple(results),
        verdict=verdict,
        positivity_norm=norm,
        positivity_converged=converged,
        positivity_verdict=positivity,
        messages=tuple(messages),
    )
