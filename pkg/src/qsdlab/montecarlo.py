"""Path-by-path simulation of killed birth-death chains.

Rates are generated on demand from the model, so there is no truncation.
Replicate r of a run with master seed s draws from its own Philox4x64-10
stream, keyed by s with r in the high word of the 256-bit counter.  Any
replicate can therefore be regenerated in isolation, and tallies from
disjoint replicate ranges merge into exactly the tallies of one long run.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .chain import ModelSpec, model_to_json
from .errors import DomainError, InfeasibleError, UnsupportedModelError

__all__ = [
    "RNG_NAME",
    "ABSORBED",
    "KILLED",
    "Path",
    "EmpiricalDistribution",
    "SurvivalEstimate",
    "replicate_rng",
    "sample_path",
    "estimate_conditional",
    "estimate_survival",
]

RNG_NAME = "Philox4x64-10"
ABSORBED = 0
KILLED = -1
PILOT_SIZE = 1000
MIN_SURVIVORS = 100
_BLOCK = 64


def replicate_rng(seed: int, replicate: int) -> np.random.Generator:
    seed, replicate = int(seed), int(replicate)
    if seed < 0 or replicate < 0:
        raise DomainError("seed and replicate index must be non-negative")
    return np.random.Generator(np.random.Philox(key=seed, counter=[0, 0, 0, replicate]))


def _check(spec: ModelSpec, i: int):
    if not getattr(spec, "absorbing", False):
        raise UnsupportedModelError(f"{type(spec).__name__} has no absorbing state to simulate against")
    if int(i) != i or i < 1:
        raise DomainError(f"start state must be an integer >= 1, got {i!r}")
    limit = getattr(spec, "limit", None)
    if limit is not None and i > limit:
        raise DomainError(f"start state {i} is outside the model's {limit} states")
    return limit


class _Rates:
    """Memoized (birth, death) per state, filled on demand."""

    def __init__(self, spec: ModelSpec):
        self.spec = spec
        self.cache: dict[int, tuple[float, float]] = {}

    def __call__(self, k: int) -> tuple[float, float]:
        r = self.cache.get(k)
        if r is None:
            n = np.array([k])
            r = (float(self.spec.birth_rates(n)[0]), float(self.spec.death_rates(n)[0]))
            self.cache[k] = r
        return r


def _simulate(rates: _Rates, limit: int | None, i: int, horizon: float, rng: np.random.Generator):
    """Run one path to ``horizon``; returns (states, jump_times, end_state, end_time)."""
    u = rng.random(_BLOCK)
    pos = 0
    state, t = i, 0.0
    states, times = [i], [0.0]
    while True:
        if pos + 2 > _BLOCK:
            u = rng.random(_BLOCK)
            pos = 0
        birth, death = rates(state)
        total = birth + death
        t += -np.log1p(-u[pos]) / total
        if t > horizon:
            return states, times, state, None
        if u[pos + 1] * total < birth:
            state = KILLED if limit is not None and state == limit else state + 1
        else:
            state -= 1
        pos += 2
        states.append(state)
        times.append(t)
        if state <= 0:
            return states, times, state, t


@dataclass(frozen=True, eq=False)
class Path:
    """One trajectory.  ``absorbed_at`` is None if the path is alive at ``horizon``;
    ``killed`` marks an exit through the top of a finite model."""

    states: np.ndarray
    jump_times: np.ndarray
    absorbed_at: float | None
    horizon: float
    killed: bool = False
    seed: int = 0
    replicate: int = 0

    def state_at(self, t: float) -> int:
        k = int(np.searchsorted(self.jump_times, t, side="right")) - 1
        return int(self.states[max(k, 0)])


def sample_path(spec: ModelSpec, i: int, horizon: float, seed: int, replicate: int = 0) -> Path:
    limit = _check(spec, i)
    if not horizon > 0:
        raise DomainError(f"horizon must be > 0, got {horizon!r}")
    states, times, end, end_t = _simulate(_Rates(spec), limit, int(i), float(horizon), replicate_rng(seed, replicate))
    return Path(
        states=np.array(states),
        jump_times=np.array(times),
        absorbed_at=None if end_t is None else float(end_t),
        horizon=float(horizon),
        killed=end == KILLED,
        seed=int(seed),
        replicate=int(replicate),
    )


def _end_states(spec, i, times: np.ndarray, seed: int, replicates: range):
    """State at each observation time for each replicate (0 absorbed, -1 killed)."""
    limit = _check(spec, i)
    rates = _Rates(spec)
    horizon = float(times.max())
    out = np.empty((len(replicates), len(times)), dtype=np.int64)
    for row, r in enumerate(replicates):
        states, jt, end, end_t = _simulate(rates, limit, int(i), horizon, replicate_rng(seed, r))
        k = np.searchsorted(np.asarray(jt), times, side="right") - 1
        out[row] = np.asarray(states)[k]
    return out


@dataclass(frozen=True, eq=False)
class EmpiricalDistribution:
    """Law of X(t) among replicates alive at t, with binomial standard errors."""

    t: float
    start: int
    states: np.ndarray
    counts: np.ndarray
    n_total: int
    n_survived: int
    n_killed: int
    seed: int
    replicates: tuple[int, int]
    model: dict = field(default_factory=dict)
    generator: str = RNG_NAME

    @property
    def probabilities(self) -> np.ndarray:
        if self.n_survived == 0:
            return np.zeros(len(self.counts))
        return self.counts / self.n_survived

    @property
    def stderr(self) -> np.ndarray:
        if self.n_survived == 0:
            return np.zeros(len(self.counts))
        p = self.probabilities
        return np.sqrt(p * (1 - p) / self.n_survived)

    @property
    def survival(self) -> float:
        return self.n_survived / self.n_total

    @property
    def survival_stderr(self) -> float:
        s = self.survival
        return float(np.sqrt(s * (1 - s) / self.n_total))

    def as_dense(self, n_states: int) -> np.ndarray:
        """Probabilities on states 1..n_states (mass beyond is dropped)."""
        out = np.zeros(n_states)
        keep = self.states <= n_states
        out[self.states[keep] - 1] = self.probabilities[keep]
        return out

    def merge(self, other: "EmpiricalDistribution") -> "EmpiricalDistribution":
        """Pool tallies from a disjoint replicate range of the same run."""
        if (self.t, self.start, self.seed, self.model) != (other.t, other.start, other.seed, other.model):
            raise DomainError("can only merge estimates of the same model, start, time and seed")
        a, b = sorted([self.replicates, other.replicates])
        if a[1] != b[0]:
            raise DomainError(f"replicate ranges {a} and {b} are not adjacent")
        states = np.union1d(self.states, other.states)
        counts = np.zeros(len(states), dtype=np.int64)
        counts[np.searchsorted(states, self.states)] += self.counts
        counts[np.searchsorted(states, other.states)] += other.counts
        return EmpiricalDistribution(
            self.t, self.start, states, counts,
            self.n_total + other.n_total, self.n_survived + other.n_survived, self.n_killed + other.n_killed,
            self.seed, (a[0], b[1]), self.model, self.generator,
        )

    def to_json(self) -> dict[str, Any]:
        return {
            "t": self.t,
            "start": self.start,
            "states": self.states.tolist(),
            "counts": self.counts.tolist(),
            "probabilities": self.probabilities.tolist(),
            "stderr": self.stderr.tolist(),
            "n_total": self.n_total,
            "n_survived": self.n_survived,
            "n_killed": self.n_killed,
            "survival": self.survival,
            "survival_stderr": self.survival_stderr,
            "seed": self.seed,
            "replicates": list(self.replicates),
            "generator": self.generator,
            "model": self.model,
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# seed={self.seed} generator={self.generator} t={self.t!r} n_total={self.n_total}\n")
        w = csv.writer(buf)
        w.writerow(["j", "count", "p", "stderr"])
        for j, c, p, s in zip(self.states, self.counts, self.probabilities, self.stderr):
            w.writerow([int(j), int(c), repr(float(p)), repr(float(s))])
        return buf.getvalue()


@dataclass(frozen=True, eq=False)
class SurvivalEstimate:
    times: np.ndarray
    start: int
    survived: np.ndarray
    n_total: int
    seed: int
    model: dict = field(default_factory=dict)
    generator: str = RNG_NAME

    @property
    def estimates(self) -> np.ndarray:
        return self.survived / self.n_total

    @property
    def stderr(self) -> np.ndarray:
        s = self.estimates
        return np.sqrt(s * (1 - s) / self.n_total)

    def to_json(self) -> dict[str, Any]:
        return {
            "times": self.times.tolist(),
            "start": self.start,
            "survived": self.survived.tolist(),
            "estimates": self.estimates.tolist(),
            "stderr": self.stderr.tolist(),
            "n_total": self.n_total,
            "seed": self.seed,
            "generator": self.generator,
            "model": self.model,
        }


def _counts(n: int):
    n = int(n)
    if n < 1:
        raise DomainError(f"number of replicates must be >= 1, got {n}")
    return n


def estimate_conditional(spec: ModelSpec, i: int, t: float, n: int, seed: int, start: int = 0) -> EmpiricalDistribution:
    """Empirical law of X(t) given X(t) != 0 from replicates start .. start+n-1.

    The first min(n, 1000) replicates double as a pilot: if they predict
    fewer than 100 survivors out of n the run stops with InfeasibleError.
    """
    n = _counts(n)
    _check(spec, i)
    if t < 0:
        raise DomainError(f"time must be >= 0, got {t!r}")
    model = model_to_json(spec)
    if t == 0:
        return EmpiricalDistribution(0.0, int(i), np.array([int(i)]), np.array([n]), n, n, 0, int(seed), (start, start + n), model)
    times = np.array([float(t)])
    n_pilot = min(n, PILOT_SIZE)
    pilot = _end_states(spec, i, times, seed, range(start, start + n_pilot))[:, 0]
    s_hat = float(np.mean(pilot > 0))
    if n * s_hat < MIN_SURVIVORS:
        raise InfeasibleError(
            f"expected-survivor guard: pilot survival estimate {s_hat:.3g} at t={t} "
            f"gives {n * s_hat:.3g} expected survivors out of {n} (< {MIN_SURVIVORS})"
        )
    rest = _end_states(spec, i, times, seed, range(start + n_pilot, start + n))[:, 0]
    final = np.concatenate([pilot, rest])
    alive = final[final > 0]
    states, counts = np.unique(alive, return_counts=True)
    return EmpiricalDistribution(
        float(t), int(i), states, counts.astype(np.int64), n, int(alive.size), int(np.sum(final == KILLED)),
        int(seed), (start, start + n), model,
    )


def estimate_survival(spec: ModelSpec, i: int, times: Sequence[float], n: int, seed: int) -> SurvivalEstimate:
    """Fraction of n replicates alive at each time; all times share the same paths."""
    n = _counts(n)
    times = np.atleast_1d(np.asarray(times, dtype=float))
    if np.any(times < 0):
        raise DomainError("times must be >= 0")
    if times.max() == 0:
        _check(spec, i)
        return SurvivalEstimate(times, int(i), np.full(len(times), n), n, int(seed), model_to_json(spec))
    ends = _end_states(spec, i, times, seed, range(n))
    return SurvivalEstimate(times, int(i), np.sum(ends > 0, axis=0), n, int(seed), model_to_json(spec))
