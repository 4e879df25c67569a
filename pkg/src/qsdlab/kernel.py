"""Transition function of a truncated chain, in linear and log scale.

Two evaluation routes are provided.  Uniformization sums Poisson-weighted
powers of the discretized chain; every term is non-negative, so it is the
reference at small and moderate t.  The spectral route diagonalizes the
symmetrized transient block

    S = D^{1/2} T D^{-1/2},   D = diag(pi),

where pi is the potential-coefficient vector of the birth-death chain, and
evaluates the scaled kernel

    h_ij(t) = exp(lambda_1 t) p_ij(t)
            = sqrt(pi_j / pi_i) * sum_k U_ik U_jk exp(-(lambda_k - lambda_1) t)

in which every exponent is non-positive, so nothing underflows at large t.
The similarity weights are kept as logarithms because pi_j spans thousands
of orders of magnitude on long truncations.

The price is cancellation: when pi varies steeply, an entry far below the
diagonal is large while its symmetric counterpart S_ij sits beneath the
rounding floor of the sum.  Such entries are flagged as unresolved, and
the row shows a mass deficit 1 - (sum_j p_ij + p_i0 + boundary mass).
In "auto" mode rows with a deficit are recomputed by uniformization.
"""

from __future__ import annotations

import csv
import io
from collections import OrderedDict
from dataclasses import dataclass
from typing import Any

import numpy as np
from scipy.linalg import eigh_tridiagonal
from scipy.stats import poisson

from .chain import TruncatedGenerator
from .errors import DomainError, StructureError, UnsupportedModelError

__all__ = [
    "SpectralDecomposition",
    "Kernel",
    "ConditionalDistribution",
    "decompose",
    "check_decomposition",
    "smallest_eigenvalue",
    "transition_matrix",
    "survival_probability",
    "conditional_distribution",
    "log_transition_series",
    "log_survival_series",
]

EPS = np.finfo(float).eps
# uniformization work budget (terms x rows x states) for method="auto"
UNIFORMIZATION_BUDGET = 4e8
# rows whose spectral mass balance is off by more than this are recomputed
FALLBACK_DEFICIT = 1e-10
FALLBACK_BUDGET = 4e9


def _symmetrized(g: TruncatedGenerator):
    """Diagonals of -S and the log symmetrization weights 0.5 * log(pi)."""
    if np.any(g.sub <= 0) or np.any(g.sup <= 0):
        raise StructureError("cannot symmetrize: a retained sub/super-diagonal rate is not positive")
    d = -np.asarray(g.diag, dtype=float)
    e = -np.sqrt(g.sup * g.sub)
    log_pi = np.concatenate(([0.0], np.cumsum(np.log(g.sup) - np.log(g.sub))))
    return d, e, 0.5 * log_pi


def smallest_eigenvalue(g: TruncatedGenerator) -> float:
    """lambda_1 of -(transient block), without eigenvectors."""
    d, e, _ = _symmetrized(g)
    if g.n == 1:
        return float(d[0])
    w = eigh_tridiagonal(d, e, eigvals_only=True, select="i", select_range=(0, 0))
    return float(w[0])


def _ro(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SpectralDecomposition:
    """Eigen-decomposition of the symmetrized negated transient block.

    ``basis[:, k]`` is the unit eigenvector for ``eigenvalues[k]``.
    ``log_similarity[i]`` is 0.5 * log(pi_i) with pi_1 = 1.
    The ``*_proj`` pairs hold per-mode projections of a rate vector,
    sum_j r_j exp(log_similarity_j - shift) basis[j, k], with the shift
    chosen so the weights neither overflow nor underflow wholesale.
    """

    eigenvalues: np.ndarray
    basis: np.ndarray
    log_similarity: np.ndarray
    generator: TruncatedGenerator
    survival_proj: tuple[float, np.ndarray]
    absorb_proj: tuple[float, np.ndarray]
    kill_proj: tuple[float, np.ndarray]

    @property
    def n(self) -> int:
        return len(self.eigenvalues)

    @property
    def lambda1(self) -> float:
        return float(self.eigenvalues[0])

    @property
    def similarity(self) -> np.ndarray:
        return np.exp(self.log_similarity)


def _projection(lw: np.ndarray, U: np.ndarray, rates: np.ndarray) -> tuple[float, np.ndarray]:
    support = rates > 0
    if not np.any(support):
        return 0.0, np.zeros(U.shape[1])
    shift = float(np.max(lw[support]))
    weights = np.zeros_like(lw)
    weights[support] = rates[support] * np.exp(lw[support] - shift)
    return shift, _ro(weights @ U)


# a decomposition references its generator, so a weak-keyed map would never
# release entries; keep the most recent few instead
_CACHE_SIZE = 3
_CACHE: "OrderedDict[int, SpectralDecomposition]" = OrderedDict()


def decompose(g: TruncatedGenerator) -> SpectralDecomposition:
    """Full eigen-decomposition of the symmetrized block of ``g``.

    Eigenvectors are signed so that their first non-negligible component
    is positive.  The few most recent results are memoized per generator instance.
    """
    cached = _CACHE.get(id(g))
    if cached is not None and cached.generator is g:
        _CACHE.move_to_end(id(g))
        return cached
    d, e, lw = _symmetrized(g)
    if g.n == 1:
        w, U = d.copy(), np.ones((1, 1))
    else:
        w, U = eigh_tridiagonal(d, e, lapack_driver="stemr")
    cutoff = 64 * EPS * np.max(np.abs(U), axis=0)
    first = np.argmax(np.abs(U) > cutoff, axis=0)
    signs = np.sign(U[first, np.arange(U.shape[1])])
    U *= signs
    ones = np.ones(g.n)
    dec = SpectralDecomposition(
        eigenvalues=_ro(w),
        basis=_ro(U),
        log_similarity=_ro(lw),
        generator=g,
        survival_proj=_projection(lw, U, ones),
        absorb_proj=_projection(lw, U, np.asarray(g.absorb_rates)),
        kill_proj=_projection(lw, U, np.asarray(g.kill_rates)),
    )
    _CACHE[id(g)] = dec
    while len(_CACHE) > _CACHE_SIZE:
        _CACHE.popitem(last=False)
    return dec


def check_decomposition(dec: SpectralDecomposition) -> tuple[float, float]:
    """Return (max |U^T U - I|, max |S - U diag(w) U^T| / max rate)."""
    U, w = dec.basis, dec.eigenvalues
    orth = float(np.max(np.abs(U.T @ U - np.eye(dec.n))))
    d, e, _ = _symmetrized(dec.generator)
    S = np.diag(d)
    if dec.n > 1:
        S[np.arange(dec.n - 1), np.arange(1, dec.n)] = e
        S[np.arange(1, dec.n), np.arange(dec.n - 1)] = e
    recon = float(np.max(np.abs(S - (U * w) @ U.T)))
    return orth, recon / dec.generator.max_rate


@dataclass(frozen=True, eq=False)
class Kernel:
    """Rows of P(t) for the requested start states.

    ``probabilities[r, j]`` is p_{rows[r], states[j]}(t).  ``scaled`` is
    exp(lambda1 * t) times it, finite at any t for the spectral method.
    ``unresolved`` marks entries lost below the rounding floor of the
    spectral sum; they are reported as 0 (log -inf).  ``error_bound`` is
    the per-entry rounding bound n eps sum_k |terms| mapped back to p, or
    the Poisson tail tolerance for uniformized rows.
    """

    t: float
    rows: np.ndarray
    states: np.ndarray
    probabilities: np.ndarray
    log_probabilities: np.ndarray
    scaled: np.ndarray
    absorption: np.ndarray
    boundary: np.ndarray
    lambda1: float
    method: str
    cancellation: np.ndarray | None = None
    unresolved: np.ndarray | None = None
    terms: int = 0
    mass_deficit: np.ndarray | None = None
    recomputed_rows: tuple[int, ...] = ()
    error_bound: np.ndarray | None = None

    @property
    def row_sums(self) -> np.ndarray:
        return self.probabilities.sum(axis=1)

    def to_json(self) -> dict[str, Any]:
        return {
            "t": self.t,
            "method": self.method,
            "lambda1": self.lambda1,
            "rows": self.rows.tolist(),
            "states": self.states.tolist(),
            "p": self.probabilities.tolist(),
            "log_p": [[None if not np.isfinite(v) else float(v) for v in r] for r in self.log_probabilities],
            "p_absorbed": self.absorption.tolist(),
            "p_boundary": self.boundary.tolist(),
            "terms": self.terms,
            "mass_deficit": None if self.mass_deficit is None else self.mass_deficit.tolist(),
            "recomputed_rows": list(self.recomputed_rows),
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["i", "j", "t", "p", "log_p"])
        for r, i in enumerate(self.rows):
            w.writerow([int(i), 0, self.t, repr(float(self.absorption[r])), repr(float(np.log(self.absorption[r])))
                        if self.absorption[r] > 0 else "-inf"])
            for c, j in enumerate(self.states):
                w.writerow([int(i), int(j), self.t, repr(float(self.probabilities[r, c])),
                            repr(float(self.log_probabilities[r, c]))])
        return buf.getvalue()


def _row_indices(g: TruncatedGenerator, rows) -> np.ndarray:
    if rows is None:
        return np.arange(g.n)
    try:
        return np.array([g.index(s) for s in np.atleast_1d(rows)], dtype=np.int64)
    except IndexError as exc:
        raise DomainError(str(exc)) from None


def _uniformization_terms(rate_t: float, tol: float) -> int:
    if rate_t == 0:
        return 0
    return int(poisson.isf(tol, rate_t)) + 1


def _uniformized(g: TruncatedGenerator, idx: np.ndarray, t: float, tol: float):
    Lam = g.max_rate
    K = _uniformization_terms(Lam * t, tol)
    weights = poisson.pmf(np.arange(K + 1), Lam * t)
    stay = 1.0 + g.diag / Lam
    up, down = g.sup / Lam, g.sub / Lam
    to0, toc = g.absorb_rates / Lam, g.kill_rates / Lam

    V = np.zeros((len(idx), g.n))
    V[np.arange(len(idx)), idx] = 1.0
    absorbed = np.zeros(len(idx))
    killed = np.zeros(len(idx))
    P = weights[0] * V
    P0 = np.zeros(len(idx))
    Pc = np.zeros(len(idx))
    for k in range(1, K + 1):
        absorbed = absorbed + V @ to0
        killed = killed + V @ toc
        W = V * stay
        W[:, 1:] += V[:, :-1] * up
        W[:, :-1] += V[:, 1:] * down
        V = W
        P += weights[k] * V
        P0 += weights[k] * absorbed
        Pc += weights[k] * killed
    return P, P0, Pc, K


def _spectral_rows(dec: SpectralDecomposition, idx: np.ndarray, t: float):
    U, w, lw = dec.basis, dec.eigenvalues, dec.log_similarity
    decay = np.exp(-(w - w[0]) * t)
    Ur = U[idx] * decay
    S = Ur @ U.T
    A = np.abs(Ur) @ np.abs(U).T
    resolved = np.abs(S) > dec.n * EPS * A
    resolved &= S > 0
    with np.errstate(divide="ignore"):
        log_h = np.where(resolved, np.log(np.where(resolved, S, 1.0)), -np.inf)
    log_h = log_h + (lw[None, :] - lw[idx][:, None])
    with np.errstate(divide="ignore", invalid="ignore"):
        cancellation = np.where(resolved, A / np.abs(S), np.inf)
    with np.errstate(divide="ignore", over="ignore", under="ignore"):
        log_floor = np.log(dec.n * EPS * A) + (lw[None, :] - lw[idx][:, None]) - w[0] * t
        bound = np.exp(log_floor)
    return log_h, cancellation, ~resolved, bound


def _exit_mass(dec: SpectralDecomposition, proj: tuple[float, np.ndarray], idx: np.ndarray, t: float) -> np.ndarray:
    """sum_j r_j int_0^t p_ij(s) ds for the exit-rate vector behind ``proj``."""
    shift, weights = proj
    w = dec.eigenvalues
    integral = -np.expm1(-w * t) / w
    terms = dec.basis[idx] * (weights * integral)
    vals = terms.sum(axis=1)
    floor = dec.n * EPS * np.abs(terms).sum(axis=1)
    vals = np.where(vals > floor, vals, 0.0)
    with np.errstate(divide="ignore", over="ignore"):
        log_mass = shift - dec.log_similarity[idx] + np.log(vals)
        return np.minimum(np.exp(log_mass), 1.0)


def transition_matrix(
    g: TruncatedGenerator,
    t: float,
    method: str = "auto",
    tol: float = 1e-12,
    rows=None,
    decomposition: SpectralDecomposition | None = None,
) -> Kernel:
    """Evaluate rows of P(t) (all rows by default).

    ``method`` is "uniformization", "spectral" or "auto"; auto picks
    uniformization while its term count stays within budget, then falls
    back to it for any spectral row whose mass balance fails.  For
    uniformization ``tol`` bounds the neglected Poisson tail.
    """
    t = float(t)
    if not t >= 0:
        raise DomainError(f"time must be >= 0, got {t}")
    if not tol > 0:
        raise DomainError("tol must be > 0")
    if method not in ("auto", "uniformization", "spectral"):
        raise DomainError(f"unknown method {method!r}")
    idx = _row_indices(g, rows)
    r = len(idx)
    auto = method == "auto"
    if auto:
        terms = _uniformization_terms(g.max_rate * t, tol)
        method = "uniformization" if terms * r * g.n <= UNIFORMIZATION_BUDGET else "spectral"

    if t == 0.0:
        lam1 = decomposition.lambda1 if decomposition is not None else smallest_eigenvalue(g)
        P = np.zeros((r, g.n))
        P[np.arange(r), idx] = 1.0
        with np.errstate(divide="ignore"):
            logP = np.log(P)
        return Kernel(t, g.states[idx], g.states, P, logP, P.copy(), np.zeros(r), np.zeros(r), lam1, method,
                      unresolved=np.zeros_like(P, dtype=bool))

    if method == "uniformization":
        lam1 = decomposition.lambda1 if decomposition is not None else smallest_eigenvalue(g)
        P, P0, Pc, K = _uniformized(g, idx, t, tol)
        P = np.clip(P, 0.0, None)
        with np.errstate(divide="ignore"):
            logP = np.log(P)
        scaled = np.exp(logP + lam1 * t)
        return Kernel(t, g.states[idx], g.states, P, logP, scaled, P0, Pc, lam1, method,
                      unresolved=np.zeros_like(P, dtype=bool), terms=K,
                      mass_deficit=1.0 - (P.sum(axis=1) + P0 + Pc), error_bound=np.full_like(P, tol))

    dec = decomposition if decomposition is not None else decompose(g)
    log_h, cancellation, unresolved, bound = _spectral_rows(dec, idx, t)
    logP = log_h - dec.lambda1 * t
    with np.errstate(under="ignore"):
        P = np.exp(logP)
    scaled = np.exp(log_h)
    P0 = _exit_mass(dec, dec.absorb_proj, idx, t)
    Pc = _exit_mass(dec, dec.kill_proj, idx, t)
    deficit = 1.0 - (P.sum(axis=1) + P0 + Pc)
    redo = np.flatnonzero(np.abs(deficit) > FALLBACK_DEFICIT)
    recomputed: tuple[int, ...] = ()
    if auto and redo.size:
        terms = _uniformization_terms(g.max_rate * t, tol)
        if terms * redo.size * g.n <= FALLBACK_BUDGET:
            Pu, P0u, Pcu, _ = _uniformized(g, idx[redo], t, tol)
            Pu = np.clip(Pu, 0.0, None)
            P[redo], P0[redo], Pc[redo] = Pu, P0u, Pcu
            with np.errstate(divide="ignore"):
                logP[redo] = np.log(Pu)
            with np.errstate(over="ignore"):
                scaled[redo] = np.exp(logP[redo] + dec.lambda1 * t)
            unresolved[redo] = False
            cancellation[redo] = 1.0
            bound[redo] = tol
            deficit[redo] = 1.0 - (Pu.sum(axis=1) + P0u + Pcu)
            recomputed = tuple(int(s) for s in g.states[idx[redo]])
    return Kernel(t, g.states[idx], g.states, P, logP, scaled, P0, Pc, dec.lambda1, "spectral",
                  cancellation=cancellation, unresolved=unresolved, mass_deficit=deficit,
                  recomputed_rows=recomputed, error_bound=bound)


def _require_absorbing(g: TruncatedGenerator) -> None:
    if not g.absorbing:
        raise UnsupportedModelError("survival and conditional laws need a model with an absorbing state")


def log_transition_series(dec: SpectralDecomposition, i: int, j: int, t_grid) -> tuple[np.ndarray, np.ndarray]:
    """log p_ij(t) and log h_ij(t) over a time grid, from the spectral form.

    Entries below the rounding floor of the signed sum come back as NaN.
    """
    g = dec.generator
    a, b = g.index(i), g.index(j)
    t = np.asarray(t_grid, dtype=float)
    if np.any(t < 0):
        raise DomainError("times must be >= 0")
    U, w = dec.basis, dec.eigenvalues
    E = np.exp(-np.outer(t, w - w[0]))
    c = U[a] * U[b]
    S = E @ c
    A = E @ np.abs(c)
    ok = (S > dec.n * EPS * A) & (S > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        log_h = np.where(ok, np.log(np.where(ok, S, 1.0)), np.nan)
    log_h += dec.log_similarity[b] - dec.log_similarity[a]
    return log_h - w[0] * t, log_h


def log_survival_series(dec: SpectralDecomposition, i: int, t_grid) -> tuple[np.ndarray, np.ndarray]:
    """log(1 - p_i0(t) - boundary mass) and its scaled version over a grid."""
    g = dec.generator
    _require_absorbing(g)
    a = g.index(i)
    t = np.asarray(t_grid, dtype=float)
    U, w = dec.basis, dec.eigenvalues
    shift, sigma = dec.survival_proj
    E = np.exp(-np.outer(t, w - w[0]))
    c = U[a] * sigma
    S = E @ c
    A = E @ np.abs(c)
    ok = (S > dec.n * EPS * A) & (S > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        log_h = np.where(ok, np.log(np.where(ok, S, 1.0)), np.nan)
    log_h += shift - dec.log_similarity[a]
    return log_h - w[0] * t, log_h


def survival_probability(
    g: TruncatedGenerator, i: int, t: float, decomposition: SpectralDecomposition | None = None
) -> tuple[float, float]:
    """(1 - p_i0(t), its logarithm) on the truncated chain.

    Computed as sum_j p_ij(t) from the scaled field, so the logarithm
    stays finite long after the value itself underflows.  Mass killed at
    the truncation boundary is excluded.
    """
    _require_absorbing(g)
    t = float(t)
    if not t >= 0:
        raise DomainError(f"time must be >= 0, got {t}")
    try:
        g.index(i)
    except IndexError as exc:
        raise DomainError(str(exc)) from None
    if t == 0.0:
        return 1.0, 0.0
    dec = decomposition if decomposition is not None else decompose(g)
    log_s, _ = log_survival_series(dec, i, [t])
    log_s = float(log_s[0])
    return float(np.exp(log_s)), log_s


@dataclass(frozen=True, eq=False)
class ConditionalDistribution:
    """Law of X(t) given X(t) != 0 and no boundary kill, from X(0) = start."""

    t: float
    start: int
    states: np.ndarray
    probabilities: np.ndarray
    survival: float
    log_survival: float
    boundary_mass: float

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.probabilities, dtype=dtype)

    def to_json(self) -> dict[str, Any]:
        return {
            "t": self.t,
            "i": self.start,
            "states": self.states.tolist(),
            "probabilities": self.probabilities.tolist(),
            "survival": self.survival,
            "log_survival": self.log_survival,
            "boundary_mass": self.boundary_mass,
        }


def conditional_distribution(
    g: TruncatedGenerator,
    i: int,
    t: float,
    method: str = "auto",
    decomposition: SpectralDecomposition | None = None,
) -> ConditionalDistribution:
    """p_ij(t) / (1 - p_i0(t)) over the retained transient states.

    The ratio is formed from scaled values, so it is stable at any t.
    """
    _require_absorbing(g)
    try:
        g.index(i)
    except IndexError as exc:
        raise DomainError(str(exc)) from None
    K = transition_matrix(g, t, method=method, rows=[i], decomposition=decomposition)
    h = K.scaled[0]
    total = h.sum()
    probs = h / total
    log_s = float(np.log(total) - K.lambda1 * K.t)
    return ConditionalDistribution(
        t=K.t,
        start=int(i),
        states=g.states,
        probabilities=probs,
        survival=float(np.exp(log_s)),
        log_survival=log_s,
        boundary_mass=float(K.boundary[0]),
    )
