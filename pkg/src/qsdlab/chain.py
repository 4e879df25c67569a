"""Model specifications and truncated tridiagonal generators.

Every in-scope model is a birth-death chain, so a generator is stored as
three diagonals plus two per-state exit vectors: the rate into the
absorbing state 0 and the rate lost through the truncation boundary.
Truncation is by killing: a jump that would leave the retained window is
sent to an implicit cemetery and counted in ``boundary_leak``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Union

import numpy as np

from .errors import ParameterError, SizeError

__all__ = [
    "RateLaw",
    "KilledMM1",
    "KilledBirthDeath",
    "RandomWalkZ",
    "CriticalLinearBD",
    "CustomTridiagonal",
    "ModelSpec",
    "TruncatedGenerator",
    "GeneratorDiagnostics",
    "build_generator",
    "validate_generator",
    "model_from_json",
    "model_to_json",
]


def _positive(name: str, value: float) -> float:
    value = float(value)
    if not math.isfinite(value) or value <= 0:
        raise ParameterError(f"{name} must be finite and > 0, got {value!r}")
    return value


@dataclass(frozen=True)
class RateLaw:
    """Rate as a function of the state n >= 1.

    Either affine, ``const + linear * n``, or an explicit table where
    ``values[n - 1]`` is the rate in state n.
    """

    const: float = 0.0
    linear: float = 0.0
    values: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.values is not None:
            object.__setattr__(self, "values", tuple(float(v) for v in self.values))
            if not self.values:
                raise ParameterError("explicit rate table is empty")
        for name in ("const", "linear"):
            v = float(getattr(self, name))
            if not math.isfinite(v) or v < 0:
                raise ParameterError(f"RateLaw.{name} must be finite and >= 0, got {v!r}")
            object.__setattr__(self, name, v)

    def __call__(self, n) -> np.ndarray:
        n = np.asarray(n, dtype=np.int64)
        if self.values is not None:
            if n.size and int(n.max()) > len(self.values):
                raise SizeError(
                    f"explicit rate table has {len(self.values)} entries, state {int(n.max())} requested"
                )
            rates = np.asarray(self.values, dtype=float)[n - 1]
        else:
            rates = self.const + self.linear * n.astype(float)
        bad = ~(np.isfinite(rates) & (rates > 0))
        if np.any(bad):
            k = int(n[bad][0]) if n.ndim else int(n)
            raise ParameterError(f"rate in state {k} must be finite and > 0")
        return rates

    @property
    def limit(self) -> int | None:
        return None if self.values is None else len(self.values)

    @classmethod
    def from_json(cls, obj) -> "RateLaw":
        if isinstance(obj, RateLaw):
            return obj
        if isinstance(obj, (int, float)):
            return cls(const=obj)
        if isinstance(obj, (list, tuple)):
            return cls(values=tuple(obj))
        if isinstance(obj, dict):
            unknown = set(obj) - {"const", "linear", "values"}
            if unknown:
                raise ParameterError(f"unknown rate-law keys: {sorted(unknown)}")
            return cls(**obj)
        raise ParameterError(f"cannot interpret {obj!r} as a rate law")

    def to_json(self):
        if self.values is not None:
            return list(self.values)
        if self.linear == 0.0:
            return self.const
        return {"const": self.const, "linear": self.linear}


@dataclass(frozen=True)
class KilledMM1:
    """M/M/1 queue with arrival rate p and service rate q, killed on emptying."""

    p: float
    q: float
    a: float = field(init=False)
    b: float = field(init=False)
    theta: float = field(init=False)

    tag = "killed_mm1"
    absorbing = True

    def __post_init__(self):
        p = _positive("p", self.p)
        q = _positive("q", self.q)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "a", p + q)
        object.__setattr__(self, "b", math.sqrt(p / q))
        object.__setattr__(self, "theta", 2.0 * math.sqrt(p * q))

    def birth_rates(self, n):
        return np.full(np.shape(n), self.p)

    def death_rates(self, n):
        return np.full(np.shape(n), self.q)

    def scaled(self, c: float) -> "KilledMM1":
        return KilledMM1(self.p * c, self.q * c)


@dataclass(frozen=True)
class KilledBirthDeath:
    """General birth-death chain on {1, 2, ...}; death from state 1 absorbs at 0.

    With ``birth = RateLaw(const=nu, linear=lam)`` and
    ``death = RateLaw(linear=mu)`` this is the birth-death process with
    immigration.
    """

    birth: RateLaw
    death: RateLaw

    tag = "killed_birth_death"
    absorbing = True

    def __post_init__(self):
        object.__setattr__(self, "birth", RateLaw.from_json(self.birth))
        object.__setattr__(self, "death", RateLaw.from_json(self.death))
        # Fail early on the first state, which every truncation uses.
        self.birth(np.array([1]))
        self.death(np.array([1]))

    def birth_rates(self, n):
        return self.birth(n)

    def death_rates(self, n):
        return self.death(n)

    @property
    def limit(self) -> int | None:
        limits = [x for x in (self.birth.limit, self.death.limit) if x is not None]
        return min(limits) if limits else None

    def scaled(self, c: float) -> "KilledBirthDeath":
        def sc(law: RateLaw) -> RateLaw:
            if law.values is not None:
                return RateLaw(values=tuple(v * c for v in law.values))
            return RateLaw(const=law.const * c, linear=law.linear * c)

        return KilledBirthDeath(sc(self.birth), sc(self.death))


@dataclass(frozen=True)
class RandomWalkZ:
    """Continuous-time simple random walk on the integers (no absorbing state)."""

    p: float
    q: float

    tag = "random_walk_z"
    absorbing = False

    def __post_init__(self):
        object.__setattr__(self, "p", _positive("p", self.p))
        object.__setattr__(self, "q", _positive("q", self.q))

    def birth_rates(self, n):
        return np.full(np.shape(n), self.p)

    def death_rates(self, n):
        return np.full(np.shape(n), self.q)

    def scaled(self, c: float) -> "RandomWalkZ":
        return RandomWalkZ(self.p * c, self.q * c)


@dataclass(frozen=True)
class CriticalLinearBD:
    """Critical linear birth-death process: birth and death rates both n * rho."""

    rho: float

    tag = "critical_linear_bd"
    absorbing = True

    def __post_init__(self):
        object.__setattr__(self, "rho", _positive("rho", self.rho))

    def birth_rates(self, n):
        return self.rho * np.asarray(n, dtype=float)

    def death_rates(self, n):
        return self.rho * np.asarray(n, dtype=float)

    def scaled(self, c: float) -> "CriticalLinearBD":
        return CriticalLinearBD(self.rho * c)


@dataclass(frozen=True)
class CustomTridiagonal:
    """Finite chain on {1..n} given by explicit rate arrays.

    ``death[0]`` is the absorption rate from state 1 into 0 and must be
    positive. ``birth[-1]`` is the rate out of the top state into the
    cemetery; it may be zero. Every other rate must be positive.
    """

    birth: tuple[float, ...]
    death: tuple[float, ...]

    tag = "custom_tridiagonal"
    absorbing = True

    def __post_init__(self):
        birth = tuple(float(v) for v in self.birth)
        death = tuple(float(v) for v in self.death)
        if not birth or len(birth) != len(death):
            raise ParameterError("birth and death arrays must be non-empty and of equal length")
        if not all(math.isfinite(v) for v in birth + death):
            raise ParameterError("rates must be finite")
        if any(v <= 0 for v in birth[:-1]) or any(v <= 0 for v in death) or birth[-1] < 0:
            raise ParameterError("rates must be > 0 (the top birth rate may be 0)")
        object.__setattr__(self, "birth", birth)
        object.__setattr__(self, "death", death)

    @property
    def limit(self) -> int:
        return len(self.birth)

    def birth_rates(self, n):
        return np.asarray(self.birth)[np.asarray(n) - 1]

    def death_rates(self, n):
        return np.asarray(self.death)[np.asarray(n) - 1]

    def scaled(self, c: float) -> "CustomTridiagonal":
        return CustomTridiagonal(tuple(v * c for v in self.birth), tuple(v * c for v in self.death))


ModelSpec = Union[KilledMM1, KilledBirthDeath, RandomWalkZ, CriticalLinearBD, CustomTridiagonal]

_MODELS = {
    cls.tag: cls for cls in (KilledMM1, KilledBirthDeath, RandomWalkZ, CriticalLinearBD, CustomTridiagonal)
}


def model_from_json(obj: dict[str, Any] | str) -> ModelSpec:
    """Build a model from ``{"model": tag, ...}``; ``n_trunc`` is ignored here."""
    if isinstance(obj, str):
        obj = json.loads(obj)
    obj = dict(obj)
    tag = obj.pop("model", None)
    obj.pop("n_trunc", None)
    if tag not in _MODELS:
        raise ParameterError(f"unknown model {tag!r}; expected one of {sorted(_MODELS)}")
    cls = _MODELS[tag]
    allowed = {
        KilledMM1: {"p", "q"},
        RandomWalkZ: {"p", "q"},
        CriticalLinearBD: {"rho"},
        KilledBirthDeath: {"birth", "death"},
        CustomTridiagonal: {"birth", "death"},
    }[cls]
    missing = allowed - set(obj)
    extra = set(obj) - allowed
    if missing or extra:
        raise ParameterError(f"{tag}: missing {sorted(missing)}, unexpected {sorted(extra)}")
    if cls is KilledBirthDeath:
        return cls(RateLaw.from_json(obj["birth"]), RateLaw.from_json(obj["death"]))
    if cls is CustomTridiagonal:
        return cls(tuple(obj["birth"]), tuple(obj["death"]))
    return cls(**obj)


def model_to_json(spec: ModelSpec) -> dict[str, Any]:
    out: dict[str, Any] = {"model": spec.tag}
    if isinstance(spec, (KilledMM1, RandomWalkZ)):
        out.update(p=spec.p, q=spec.q)
    elif isinstance(spec, CriticalLinearBD):
        out.update(rho=spec.rho)
    elif isinstance(spec, KilledBirthDeath):
        out.update(birth=spec.birth.to_json(), death=spec.death.to_json())
    else:
        out.update(birth=list(spec.birth), death=list(spec.death))
    return out


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class TruncatedGenerator:
    """Tridiagonal q-matrix restricted to a finite window of transient states.

    ``sup[k]`` is the rate from ``states[k]`` to ``states[k + 1]`` and
    ``sub[k]`` the rate from ``states[k + 1]`` to ``states[k]``.
    """

    N: int
    states: np.ndarray
    sub: np.ndarray
    diag: np.ndarray
    sup: np.ndarray
    absorb_rates: np.ndarray
    kill_rates: np.ndarray
    model: Any = None

    def __post_init__(self):
        states = np.array(self.states, dtype=np.int64)
        states.setflags(write=False)
        object.__setattr__(self, "states", states)
        for name in ("sub", "diag", "sup", "absorb_rates", "kill_rates"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        n = len(states)
        if not (len(self.diag) == len(self.absorb_rates) == len(self.kill_rates) == n):
            raise SizeError("diagonal and exit vectors must match the number of states")
        if len(self.sub) != n - 1 or len(self.sup) != n - 1:
            raise SizeError("off-diagonals must have one entry fewer than the diagonal")

    @property
    def n(self) -> int:
        return len(self.states)

    @property
    def absorbing(self) -> bool:
        return bool(getattr(self.model, "absorbing", np.any(self.absorb_rates > 0)))

    @property
    def boundary_leak(self) -> float:
        return float(self.kill_rates.sum())

    @property
    def max_rate(self) -> float:
        return float(np.max(np.abs(self.diag)))

    def index(self, state: int) -> int:
        k = int(state) - int(self.states[0])
        if not 0 <= k < self.n:
            raise IndexError(f"state {state} is not retained (states {self.states[0]}..{self.states[-1]})")
        return k

    def transient_block(self) -> np.ndarray:
        """Dense restriction of Q to the retained transient states."""
        T = np.diag(self.diag)
        T[np.arange(self.n - 1), np.arange(1, self.n)] = self.sup
        T[np.arange(1, self.n), np.arange(self.n - 1)] = self.sub
        return T

    def q_matrix(self) -> np.ndarray:
        """Dense q-matrix over {0} and the retained states; row 0 is zero.

        Rows sum to minus the boundary killing rate.
        """
        Q = np.zeros((self.n + 1, self.n + 1))
        Q[1:, 1:] = self.transient_block()
        Q[1:, 0] = self.absorb_rates
        return Q

    def scaled(self, c: float) -> "TruncatedGenerator":
        return TruncatedGenerator(
            self.N, self.states, self.sub * c, self.diag * c, self.sup * c,
            self.absorb_rates * c, self.kill_rates * c, self.model,
        )


@dataclass(frozen=True)
class GeneratorDiagnostics:
    conservative: bool
    stable: bool
    irreducible_C: bool
    boundary_leak: float
    messages: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return self.conservative and self.stable and self.irreducible_C

    def to_json(self) -> dict[str, Any]:
        return {
            "conservative": self.conservative,
            "stable": self.stable,
            "irreducible_C": self.irreducible_C,
            "boundary_leak": self.boundary_leak,
            "messages": list(self.messages),
        }


def build_generator(spec: ModelSpec, N: int | None = None) -> TruncatedGenerator:
    """Truncate ``spec`` to N transient states (2N + 1 for the random walk).

    Finite custom chains are used whole when N is None or exceeds their length.
    """
    if isinstance(spec, CustomTridiagonal):
        N = spec.limit if N is None else min(int(N), spec.limit)
        if N < 1:
            raise SizeError("truncation level must be >= 1")
    else:
        if N is None or int(N) < 2:
            raise SizeError(f"truncation level must be >= 2, got {N!r}")
        N = int(N)
        limit = getattr(spec, "limit", None)
        if limit is not None and N > limit:
            raise SizeError(f"explicit rate tables cover {limit} states, N={N} requested")

    if isinstance(spec, RandomWalkZ):
        states = np.arange(-N, N + 1)
        n = len(states)
        sup = np.full(n - 1, spec.p)
        sub = np.full(n - 1, spec.q)
        kill = np.zeros(n)
        kill[0] += spec.q
        kill[-1] += spec.p
        diag = np.full(n, -(spec.p + spec.q))
        return TruncatedGenerator(N, states, sub, diag, sup, np.zeros(n), kill, spec)

    states = np.arange(1, N + 1)
    b = np.asarray(spec.birth_rates(states), dtype=float)
    d = np.asarray(spec.death_rates(states), dtype=float)
    absorb = np.zeros(N)
    absorb[0] = d[0]
    kill = np.zeros(N)
    kill[-1] = b[-1]
    return TruncatedGenerator(N, states, d[1:], -(b + d), b[:-1], absorb, kill, spec)


def validate_generator(g: TruncatedGenerator, rtol: float = 1e-12) -> GeneratorDiagnostics:
    """Evaluate the stability, conservativeness and irreducibility checks."""
    messages = []
    s0 = int(g.states[0])
    arrays = (g.sub, g.diag, g.sup, g.absorb_rates, g.kill_rates)
    stable = all(np.all(np.isfinite(a)) for a in arrays) and bool(np.all(g.diag <= 0))
    if not stable:
        for k in np.flatnonzero(~np.isfinite(g.diag) | (g.diag > 0)):
            messages.append(f"q[{s0 + k},{s0 + k}] = {g.diag[k]!r} is not finite and <= 0")

    nonneg = True
    for name, arr, di in (("sup", g.sup, 1), ("sub", g.sub, -1)):
        for k in np.flatnonzero(~(arr >= 0)):
            nonneg = False
            i = s0 + k if di == 1 else s0 + k + 1
            messages.append(f"q[{i},{i + di}] = {arr[k]!r} is negative")
    for k in np.flatnonzero(~(g.absorb_rates >= 0)):
        nonneg = False
        messages.append(f"q[{s0 + k},0] = {g.absorb_rates[k]!r} is negative")
    for k in np.flatnonzero(~(g.kill_rates >= 0)):
        nonneg = False
        messages.append(f"boundary rate of state {s0 + k} = {g.kill_rates[k]!r} is negative")

    out = np.zeros(g.n)
    out[:-1] += g.sup
    out[1:] += g.sub
    out += g.absorb_rates + g.kill_rates
    imbalance = np.abs(out + g.diag)
    scale = np.maximum(np.abs(g.diag), 1.0)
    balanced = bool(np.all(imbalance <= rtol * scale * 4))
    if not balanced:
        for k in np.flatnonzero(~(imbalance <= rtol * scale * 4))[:10]:
            messages.append(f"row {s0 + k} does not balance: exit rates minus |q_ii| = {imbalance[k]:.3g}")
    conservative = nonneg and balanced

    irreducible = bool(np.all(g.sub > 0) and np.all(g.sup > 0))
    if not irreducible:
        messages.append("transient class is reducible: a retained sub/super-diagonal rate is zero")
    if g.absorbing and not np.any(g.absorb_rates > 0):
        messages.append("absorbing model without any rate into state 0")
    if isinstance(g.model, CustomTridiagonal):
        messages.append("regularity of the untruncated chain is not checkable for explicit rate arrays")
    return GeneratorDiagnostics(conservative, stable, irreducible, g.boundary_leak, tuple(messages))
