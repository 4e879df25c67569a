"""Polynomial correction exponents and the conjecture harness.

For a chain with decay parameter lambda, write g_ij(t) = e^(lambda t) p_ij(t).
If t^kappa g_ij(t) tends to a positive limit L_ij, then kappa is the
slope of -log g against log t.  The fit used by default is

    log g(t) = log C - kappa log t + c1 / t

whose 1/t term absorbs the leading O(1/t) relative correction that would
otherwise bias a straight log-log fit over a finite window.  The plain
two-parameter fit is always reported alongside.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import asdict, dataclass, field
from typing import Any, Sequence

import numpy as np

from . import oracles
from .chain import (
    CriticalLinearBD,
    KilledMM1,
    ModelSpec,
    RandomWalkZ,
    TruncatedGenerator,
    build_generator,
    model_to_json,
)
from .errors import DomainError, UnsupportedModelError
from .kernel import decompose, log_survival_series, log_transition_series
from .spectral import InvariantPair, analytic_decay_parameter, decay_parameter, interior_count, invariant_pair, row_residuals

__all__ = [
    "SURVIVAL",
    "LogGSeries",
    "KappaEstimate",
    "Rank1Report",
    "ConjectureConfig",
    "ConjectureReport",
    "decay_series",
    "oracle_series",
    "estimate_kappa",
    "rank1_factor_test",
    "conjecture_report",
]

log = logging.getLogger(__name__)

SURVIVAL = "survival"
MIN_POINTS = 8
TRUNCATION_AGREEMENT = 1e-6
SLOW_VARIATION_DRIFT = 0.05


@dataclass(frozen=True, eq=False)
class LogGSeries:
    """log g over a time grid; ``j`` is None for the survival series."""

    i: int
    j: int | None
    t_grid: np.ndarray
    log_g: np.ndarray
    lambda_used: float
    source: str
    reliable: np.ndarray
    N: int | None = None
    truncation_gap: float | None = None

    def __post_init__(self):
        t = np.asarray(self.t_grid, dtype=float)
        if t.ndim != 1 or np.any(np.diff(t) <= 0):
            raise DomainError("t_grid must be strictly increasing")

    @property
    def is_survival(self) -> bool:
        return self.j is None

    @property
    def truncation_ok(self) -> bool:
        return self.truncation_gap is None or self.truncation_gap <= TRUNCATION_AGREEMENT

    def to_json(self) -> dict[str, Any]:
        return {
            "i": self.i,
            "j": SURVIVAL if self.j is None else self.j,
            "t": self.t_grid.tolist(),
            "log_g": [float(v) if np.isfinite(v) else None for v in self.log_g],
            "lambda": self.lambda_used,
            "source": self.source,
            "N": self.N,
            "truncation_gap": self.truncation_gap,
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["t", "log_g"])
        for t, v in zip(self.t_grid, self.log_g):
            w.writerow([repr(float(t)), repr(float(v))])
        return buf.getvalue()


def _log_p(g: TruncatedGenerator, i: int, j, t: np.ndarray) -> np.ndarray:
    for s in (i,) if j is None else (i, j):
        if not g.states[0] <= s <= g.states[-1]:
            raise DomainError(f"state {s} is not retained at N={g.N}")
    dec = decompose(g)
    if j is None or j == SURVIVAL:
        return log_survival_series(dec, i, t)[0]
    return log_transition_series(dec, i, int(j), t)[0]


def decay_series(
    spec: ModelSpec,
    i: int,
    j,
    lam: float,
    t_grid: Sequence[float],
    N: int = 2000,
    check_truncation: bool = True,
    generators: tuple[TruncatedGenerator, TruncatedGenerator | None] | None = None,
) -> LogGSeries:
    """log g_ij(t) = lam t + log p_ij(t) from the spectral kernel at truncation N.

    Pass ``j=None`` (or "survival") for lam t + log(1 - p_i0(t)).  With
    ``check_truncation`` the value at the largest t is recomputed at 2N and
    the absolute gap stored in ``truncation_gap``.  ``generators`` may
    supply the prebuilt (N, 2N) pair so repeated calls share decompositions.
    """
    t = np.asarray(t_grid, dtype=float)
    j = None if j is None or j == SURVIVAL else int(j)
    g, g2 = generators if generators is not None else (build_generator(spec, N), None)
    N = g.N
    log_g = lam * t + _log_p(g, i, j, t)
    gap = None
    if check_truncation:
        g2 = g2 if g2 is not None else build_generator(spec, 2 * N)
        ref = lam * t[-1] + _log_p(g2, i, j, t[-1:])[0]
        gap = float(abs(ref - log_g[-1]))
        if not gap <= TRUNCATION_AGREEMENT:
            log.warning("truncation at N=%d moves log g by %.3g at t=%g", N, gap, t[-1])
    return LogGSeries(i, j, t, log_g, float(lam), "spectral kernel", np.isfinite(log_g), N, gap)


def oracle_series(spec: ModelSpec, i: int, j, t_grid: Sequence[float], lam: float | None = None) -> LogGSeries:
    """log g from a closed-form law (critical linear birth-death, random walk)."""
    t = np.asarray(t_grid, dtype=float)
    j = None if j is None or j == SURVIVAL else int(j)
    lam = analytic_decay_parameter(spec) if lam is None else float(lam)
    if isinstance(spec, CriticalLinearBD):
        if j is None:
            log_p = np.log(oracles.critbd_survival(t, spec.rho, i))
        elif i == 1:
            log_p = np.log(oracles.critbd_p1j(j, t, spec.rho))
        else:
            raise UnsupportedModelError("closed-form p_ij(t) is available from state 1 only")
    elif isinstance(spec, RandomWalkZ) and i == 0 and j == 0:
        theta = 2.0 * np.sqrt(spec.p * spec.q)
        log_p = -(spec.p + spec.q - theta) * t + np.log(oracles.bessel_i0e(theta * t))
    else:
        raise UnsupportedModelError(f"no closed-form series for {type(spec).__name__} ({i}, {j})")
    log_g = lam * t + log_p
    return LogGSeries(i, j, t, log_g, lam, "analytic oracle", np.isfinite(log_g))


def _ols(X: np.ndarray, y: np.ndarray):
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ coef
    dof = len(y) - X.shape[1]
    sigma2 = float(resid @ resid) / dof if dof > 0 else 0.0
    cov = sigma2 * np.linalg.pinv(X.T @ X)
    ss = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(resid @ resid) / ss if ss > 0 else 1.0
    return coef, np.sqrt(np.maximum(np.diag(cov), 0.0)), r2


def _design(t: np.ndarray, correction: bool) -> np.ndarray:
    cols = [np.ones_like(t), -np.log(t)]
    if correction:
        cols.append(1.0 / t)
    return np.column_stack(cols)


@dataclass(frozen=True)
class KappaEstimate:
    kappa: float
    constant: float
    stderr: float
    window: tuple[float, float]
    r_squared: float
    rv_index: float
    n_points: int
    correction: bool
    correction_coef: float
    plain_kappa: float
    plain_constant: float
    plain_stderr: float
    slope_drift: float
    flagged: bool
    notes: tuple[str, ...] = ()

    def to_json(self) -> dict[str, Any]:
        out = asdict(self)
        out["window"] = list(self.window)
        out["notes"] = list(self.notes)
        return out


def estimate_kappa(series: LogGSeries, window: tuple[float, float] | None = None, correction: bool = True) -> KappaEstimate:
    """Fit kappa and the limit constant over ``window`` (default [T/4, T]).

    The slowly-varying diagnostic refits the same model on each half of the
    window; a drift in kappa above 0.05 flags the estimate.
    """
    t_all = np.asarray(series.t_grid, dtype=float)
    if window is None:
        window = (t_all[-1] / 4.0, t_all[-1])
    lo, hi = float(window[0]), float(window[1])
    sel = (t_all >= lo * (1 - 1e-12)) & (t_all <= hi * (1 + 1e-12)) & series.reliable & (t_all > 0)
    if int(sel.sum()) < MIN_POINTS:
        raise DomainError(f"need at least {MIN_POINTS} reliable points in window ({lo:g}, {hi:g}), have {int(sel.sum())}")
    t, y = t_all[sel], series.log_g[sel]

    coef, se, r2 = _ols(_design(t, correction), y)
    pcoef, pse, pr2 = _ols(_design(t, False), y)
    half = len(t) // 2
    k1 = _ols(_design(t[:half], correction), y[:half])[0][1]
    k2 = _ols(_design(t[half:], correction), y[half:])[0][1]
    drift = float(abs(k2 - k1))

    kappa = float(coef[1])
    notes = []
    if abs(kappa) < 0.05:
        notes.append("no polynomial correction: g(t) is asymptotically flat")
    elif kappa < 1:
        notes.append("kappa < 1 lies outside the kappa > 1 scope of the conjecture")
    flagged = drift > SLOW_VARIATION_DRIFT
    if flagged:
        notes.append(f"t^kappa g(t) not slowly varying over the window (drift {drift:.3g})")
    return KappaEstimate(
        kappa=kappa,
        constant=float(np.exp(coef[0])),
        stderr=float(se[1]),
        window=(lo, hi),
        r_squared=float(r2 if correction else pr2),
        rv_index=float(1.0 / kappa) if kappa != 0 else float("inf"),
        n_points=int(len(t)),
        correction=correction,
        correction_coef=float(coef[2]) if correction else 0.0,
        plain_kappa=float(pcoef[1]),
        plain_constant=float(np.exp(pcoef[0])),
        plain_stderr=float(pse[1]),
        slope_drift=drift,
        flagged=flagged,
        notes=tuple(notes),
    )


@dataclass(frozen=True)
class Rank1Report:
    deviation: float
    A: float | None
    A_spread: float | None
    A_entries: tuple[tuple[float, ...], ...] | None
    subinvariance_m: float | None
    subinvariance_x: float | None
    passed: bool

    def to_json(self) -> dict[str, Any]:
        out = asdict(self)
        if self.A_entries is not None:
            out["A_entries"] = [list(r) for r in self.A_entries]
        return out


def rank1_factor_test(
    L,
    pair: InvariantPair | None = None,
    rows: Sequence[int] | None = None,
    cols: Sequence[int] | None = None,
    x=None,
    m=None,
    g: TruncatedGenerator | None = None,
    lam: float | None = None,
    tol: float = 0.02,
    A_tol: float = 0.05,
) -> Rank1Report:
    """How far L is from an outer product, and from A x_i m_j in particular.

    ``deviation`` is the max over index quadruples of
    |L_ij L_kl - L_il L_kj| / (L_il L_kj).  Factors come either from
    ``pair`` (indexed by the states in ``rows``/``cols``) or as explicit
    ``x``/``m`` arrays.  A is the least-squares fit of log L_ij against
    log(x_i m_j).  With ``g``, the subinvariance residuals
    max_j ((mQ)_j + lam m_j) / m_j (and the x analogue) over interior
    rows are reported; non-positive values mean the inequality holds.
    """
    L = np.asarray(L, dtype=float)
    if L.ndim != 2 or not np.all(L > 0):
        raise DomainError("L must be a matrix with strictly positive entries")
    lL = np.log(L)
    cross = lL[:, None, :, None] + lL[None, :, None, :] - lL[:, None, None, :] - lL[None, :, :, None]
    deviation = float(np.max(np.abs(np.expm1(cross))))

    if pair is not None:
        r = np.arange(1, L.shape[0] + 1) if rows is None else np.asarray(rows)
        c = np.arange(1, L.shape[1] + 1) if cols is None else np.asarray(cols)
        base = int(pair.states[0])
        log_x = pair.log_x[r - base]
        log_m = pair.log_m[c - base]
    elif x is not None and m is not None:
        log_x = np.log(np.asarray(x, dtype=float))
        log_m = np.log(np.asarray(m, dtype=float))
    else:
        log_x = log_m = None

    A = A_spread = A_entries = None
    if log_x is not None:
        logA = lL - log_x[:, None] - log_m[None, :]
        A = float(np.exp(logA.mean()))
        A_spread = float(np.max(np.abs(np.expm1(logA - logA.mean()))))
        A_entries = tuple(tuple(float(v) for v in row) for row in np.exp(logA))

    sub_m = sub_x = None
    if g is not None and pair is not None:
        lam_c = pair.lambda_requested if lam is None else lam
        rm, rx = row_residuals(g, pair.log_m, pair.log_x, lam_c)
        k = interior_count(g.n)
        sub_m, sub_x = float(np.max(rm[:k])), float(np.max(rx[:k]))

    passed = deviation <= tol and (A_spread is None or A_spread <= A_tol)
    return Rank1Report(deviation, A, A_spread, A_entries, sub_m, sub_x, passed)


@dataclass(frozen=True)
class ConjectureConfig:
    states: tuple[int, ...] = (1, 2, 3, 4)
    window: tuple[float, float] = (100.0, 400.0)
    n_points: int = 40
    N: int = 2000
    lam: float | None = None
    correction: bool = True
    check_truncation: bool = True
    kappa_spread_tol: float = 0.05
    rank1_tol: float = 0.02
    A_tol: float = 0.05
    kappa0_slack: float = 0.02
    Bx_tol: float = 0.05
    subinvariance_tol: float = 1e-8

    @property
    def t_grid(self) -> np.ndarray:
        return np.geomspace(self.window[0], self.window[1], self.n_points)

    def to_json(self) -> dict[str, Any]:
        out = asdict(self)
        out["states"] = list(self.states)
        out["window"] = list(self.window)
        return out


@dataclass(frozen=True, eq=False)
class ConjectureReport:
    model: dict
    config: dict
    lambda_used: float
    states: tuple[int, ...]
    kappa_table: np.ndarray
    L_matrix: np.ndarray
    kappa0: np.ndarray | None
    survival_constants: np.ndarray | None
    conjecture_i: dict
    conjecture_ii: dict
    conjecture_iii: dict

    def to_json(self) -> dict[str, Any]:
        return {
            "model": self.model,
            "config": self.config,
            "lambda": self.lambda_used,
            "states": list(self.states),
            "conjecture_i": self.conjecture_i,
            "conjecture_ii": self.conjecture_ii,
            "conjecture_iii": self.conjecture_iii,
        }

    def kappa_table_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["i", "j", "kappa", "constant"])
        for a, i in enumerate(self.states):
            for b, j in enumerate(self.states):
                w.writerow([i, j, repr(float(self.kappa_table[a, b])), repr(float(self.L_matrix[a, b]))])
        return buf.getvalue()


def conjecture_report(spec: ModelSpec, config: ConjectureConfig | None = None) -> ConjectureReport:
    """Fit kappa over a state grid and assemble verdicts on conjectures (i)-(iii).

    (i)   the spread of kappa_ij over the grid is within ``kappa_spread_tol``;
    (ii)  the limit matrix is rank one and matches A x_i m_j for the
          truncated invariant pair, which must be subinvariant at lambda;
    (iii) kappa_0 <= kappa + slack and the survival constants are
          proportional to x_i.
    """
    cfg = config or ConjectureConfig()
    g = build_generator(spec, cfg.N)
    gens = (g, build_generator(spec, 2 * cfg.N) if cfg.check_truncation else None)
    states = tuple(s for s in cfg.states if g.states[0] <= s <= g.states[-1])
    if not states:
        raise DomainError("none of the requested states is retained by the truncation")
    lam = cfg.lam
    if lam is None:
        lam = analytic_decay_parameter(spec)
    if lam is None:
        lam = decay_parameter(spec, [max(cfg.N // 2, 1), max(cfg.N, 2)]).extrapolated
    t_grid = cfg.t_grid
    n = len(states)
    kap = np.empty((n, n))
    L = np.empty((n, n))
    fits = {}
    gaps = []
    for a, i in enumerate(states):
        for b, j in enumerate(states):
            s = decay_series(spec, i, j, lam, t_grid, cfg.N, cfg.check_truncation, gens)
            if s.truncation_gap is not None:
                gaps.append(s.truncation_gap)
            k = estimate_kappa(s, cfg.window, cfg.correction)
            kap[a, b], L[a, b] = k.kappa, k.constant
            fits[f"{i},{j}"] = k.to_json()
    max_gap = max(gaps) if gaps else None

    kbar = float(np.mean(kap))
    spread = float(kap.max() - kap.min())
    notes = []
    if all(abs(v) < 0.05 for v in kap.ravel()):
        status_i = "no polynomial correction"
        notes.append("g_ij(t) is asymptotically flat: no kappa > 1 exists, which the conjecture allows")
    else:
        status_i = "pass" if spread <= cfg.kappa_spread_tol else "fail"
        if kbar < 1:
            notes.append("fitted kappa < 1: outside the kappa > 1 scope of the conjecture")
    sec_i = {
        "status": status_i,
        "data": {
            "kappa_table": kap.tolist(),
            "kappa_mean": kbar,
            "spread": spread,
            "tolerance": cfg.kappa_spread_tol,
            "max_truncation_gap": max_gap,
            "fits": fits,
            "notes": notes,
        },
    }

    pair = invariant_pair(g, lam)
    rank = rank1_factor_test(L, pair, rows=states, cols=states, g=g, lam=lam, tol=cfg.rank1_tol, A_tol=cfg.A_tol)
    sub_tol = cfg.subinvariance_tol * g.max_rate
    subinv_ok = (rank.subinvariance_m is None or rank.subinvariance_m <= sub_tol) and (
        rank.subinvariance_x is None or rank.subinvariance_x <= sub_tol
    )
    sec_ii = {
        "status": "pass" if rank.passed and subinv_ok else "fail",
        "data": {
            "L_matrix": L.tolist(),
            "rank1": rank.to_json(),
            "subinvariance_tolerance": sub_tol,
            "pair_lambda": pair.lambda_used,
        },
    }

    kappa0 = consts = None
    if not g.absorbing:
        sec_iii = {"status": "not applicable", "data": {"reason": "model has no absorbing state"}}
    else:
        k0 = []
        for i in states:
            s = decay_series(spec, i, None, lam, t_grid, cfg.N, cfg.check_truncation, gens)
            k0.append(estimate_kappa(s, cfg.window, cfg.correction))
        kappa0 = np.array([k.kappa for k in k0])
        consts = np.array([k.constant for k in k0])
        base = int(pair.states[0])
        logB = np.log(consts) - pair.log_x[np.asarray(states) - base]
        B = float(np.exp(logB.mean()))
        B_spread = float(np.max(np.abs(np.expm1(logB - logB.mean()))))
        k0max = float(kappa0.max())
        ok = k0max <= kbar + cfg.kappa0_slack and B_spread <= cfg.Bx_tol
        rel = "strict" if k0max < kbar - cfg.kappa0_slack else "equal within slack"
        sec_iii = {
            "status": "pass" if ok else "fail",
            "data": {
                "kappa0": kappa0.tolist(),
                "kappa": kbar,
                "slack": cfg.kappa0_slack,
                "relation": rel,
                "survival_constants": consts.tolist(),
                "B": B,
                "B_spread": B_spread,
                "B_tolerance": cfg.Bx_tol,
            },
        }
    return ConjectureReport(
        model=model_to_json(spec),
        config=cfg.to_json(),
        lambda_used=float(lam),
        states=states,
        kappa_table=kap,
        L_matrix=L,
        kappa0=kappa0,
        survival_constants=consts,
        conjecture_i=sec_i,
        conjecture_ii=sec_ii,
        conjecture_iii=sec_iii,
    )
