"""Core types and the time-averaged formation dynamics.

State layout follows the usual stacking: ``x = [r_1, ..., r_n, v_1, ..., v_n]``
(6n entries), and the intersatellite force functions are stored one 3-vector
per unordered pair ``(i, j), i < j`` in lexicographic order, shape ``(P, 3)``
with ``P = n(n-1)/2``.  Satellite indices are 0-based in code; labels written
to logs are 1-based.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property, lru_cache
from math import lcm, gcd
from typing import Sequence

import numpy as np

MU0 = 4e-7 * np.pi
DISTANCE_GUARD = 1e-9  # [m]


class DomainError(ValueError):
    """Raised when an input lies outside the domain of a model function."""


@dataclass(frozen=True)
class PairIndex:
    """Lexicographic map between unordered pairs ``(i, j), i < j`` and columns."""

    n: int

    def __post_init__(self):
        if self.n < 2:
            raise DomainError(f"need at least 2 satellites, got n={self.n}")

    @cached_property
    def pairs(self) -> tuple[tuple[int, int], ...]:
        return tuple((i, j) for i in range(self.n) for j in range(i + 1, self.n))

    @cached_property
    def _lookup(self) -> dict[tuple[int, int], int]:
        return {p: k for k, p in enumerate(self.pairs)}

    def __len__(self) -> int:
        return self.n * (self.n - 1) // 2

    def index(self, i: int, j: int) -> int:
        if i == j:
            raise DomainError("a satellite does not pair with itself")
        return self._lookup[(min(i, j), max(i, j))]

    def pair(self, k: int) -> tuple[int, int]:
        return self.pairs[k]

    @cached_property
    def first(self) -> np.ndarray:
        return np.array([p[0] for p in self.pairs], dtype=int)

    @cached_property
    def second(self) -> np.ndarray:
        return np.array([p[1] for p in self.pairs], dtype=int)

    def labels(self) -> list[str]:
        return [f"{i + 1}{j + 1}" for i, j in self.pairs]


@dataclass(frozen=True)
class FormationState:
    """Positions ``r`` and velocities ``v`` of all satellites, each shape (n, 3)."""

    r: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        r = np.array(self.r, dtype=float).reshape(-1, 3)
        v = np.array(self.v, dtype=float).reshape(-1, 3)
        if r.shape != v.shape:
            raise ValueError("positions and velocities must have the same shape")
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(v))):
            raise ValueError("state contains non-finite values")
        r.flags.writeable = False
        v.flags.writeable = False
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "v", v)

    @property
    def n(self) -> int:
        return self.r.shape[0]

    def flat(self) -> np.ndarray:
        return np.concatenate([self.r.ravel(), self.v.ravel()])

    @classmethod
    def from_flat(cls, x: np.ndarray) -> "FormationState":
        x = np.asarray(x, dtype=float)
        half = x.size // 2
        return cls(x[:half].reshape(-1, 3), x[half:].reshape(-1, 3))

    def relative(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-pair ``r_ij = r_i - r_j`` and ``v_ij``, each shape (P, 3)."""
        idx = pair_index(self.n)
        return (self.r[idx.first] - self.r[idx.second],
                self.v[idx.first] - self.v[idx.second])


def omega_fraction(value) -> Fraction:
    """Parse an interaction frequency given as a multiple of pi."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, dict):
        if not value.get("times_pi", True):
            raise ValueError("frequencies must be rational multiples of pi")
        return Fraction(int(value["num"]), int(value.get("den", 1)))
    return Fraction(value).limit_denominator(10**6)


def common_period(omega_over_pi: Sequence[Fraction]) -> Fraction:
    """Least common multiple of the pair periods ``2*pi/omega``, in seconds.

    With ``omega = (p/q) * pi`` the period is ``2q/p``; the LCM of reduced
    fractions ``a/b`` is ``lcm(a) / gcd(b)``.
    """
    periods = [Fraction(2, 1) / Fraction(w) for w in omega_over_pi]
    if any(p <= 0 for p in periods):
        raise ValueError("frequencies must be positive")
    num = 1
    den = 0
    for p in periods:
        num = lcm(num, p.numerator)
        den = gcd(den, p.denominator)
    return Fraction(num, den)


@dataclass(frozen=True)
class PhysicalParams:
    """Satellite mass, coil data and the per-pair interaction frequencies.

    ``omega_over_pi`` holds one exact rational per unordered pair (PairIndex
    order); the angular frequency is that value times pi in rad/s.
    """

    m: float
    n_turns: float
    coil_area: float
    coil_resistance: float
    coil_inductance: float
    omega_over_pi: tuple[Fraction, ...]
    mu0: float = MU0

    def __post_init__(self):
        fr = tuple(omega_fraction(w) for w in self.omega_over_pi)
        object.__setattr__(self, "omega_over_pi", fr)
        for name in ("m", "n_turns", "coil_area", "coil_resistance", "coil_inductance", "mu0"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if len(set(fr)) != len(fr):
            raise ValueError("interaction frequencies must be unique per pair")
        common_period(fr)

    @property
    def c0(self) -> float:
        return 3.0 * self.mu0 / (4.0 * np.pi)

    @property
    def beta(self) -> float:
        """Acceleration per unit scaled force, ``c0 / (2 m)``."""
        return self.c0 / (2.0 * self.m)

    @cached_property
    def omega(self) -> np.ndarray:
        return np.array([float(w) * np.pi for w in self.omega_over_pi])

    @cached_property
    def period(self) -> float:
        return float(common_period(self.omega_over_pi))

    @cached_property
    def impedance(self) -> np.ndarray:
        """Series RL impedance magnitude of a coil at each pair frequency [ohm]."""
        return np.hypot(self.coil_resistance, self.omega * self.coil_inductance)

    @property
    def power_scale(self) -> float:
        """``1 / (N^2 A^2)``, the prefactor of the apparent-power proxy."""
        return 1.0 / (self.n_turns * self.coil_area) ** 2


@dataclass(frozen=True)
class ConstraintParams:
    r_min: float
    v_max: float
    q_max: float
    eps1: float = 1e-3
    eps2: float = 1e-3

    def __post_init__(self):
        for name in ("r_min", "v_max", "q_max", "eps1", "eps2"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@lru_cache(maxsize=None)
def pair_index(n: int) -> PairIndex:
    return PairIndex(n)


def dipole_force_f(r, p, q) -> np.ndarray:
    """Dipole interaction term ``f(r, p, q)``; broadcasts over leading axes."""
    r = np.asarray(r, dtype=float)
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    d = np.linalg.norm(r, axis=-1, keepdims=True)
    if np.any(d <= 0):
        raise DomainError("dipole force undefined at r = 0")
    pr = np.sum(p * r, axis=-1, keepdims=True)
    qr = np.sum(q * r, axis=-1, keepdims=True)
    pq = np.sum(p * q, axis=-1, keepdims=True)
    return (qr * p + pr * q + pq * r) / d - 5.0 * pr * qr * r / d**3


@lru_cache(maxsize=None)
def _b0(n: int) -> np.ndarray:
    idx = pair_index(n)
    b0 = np.zeros((n, len(idx)))
    for k, (i, j) in enumerate(idx.pairs):
        b0[i, k] = 1.0
        b0[j, k] = -1.0
    b0.flags.writeable = False
    return b0


def build_B0(n: int) -> np.ndarray:
    """Incidence matrix mapping per-pair forces onto satellites (n x P)."""
    if n < 2:
        raise DomainError(f"need at least 2 satellites, got n={n}")
    return _b0(n).copy()


def state_matrices(n: int, params: PhysicalParams) -> tuple[np.ndarray, np.ndarray]:
    """Continuous-time ``A`` (6n x 6n) and ``B`` (6n x 3P)."""
    a = np.kron(np.array([[0.0, 1.0], [0.0, 0.0]]), np.eye(3 * n))
    b0 = np.kron(build_B0(n), np.eye(3))
    b = params.beta * np.vstack([np.zeros_like(b0), b0])
    return a, b


def pair_distances(state: FormationState) -> np.ndarray:
    rel, _ = state.relative()
    dist = np.linalg.norm(rel, axis=1)
    if np.any(dist < DISTANCE_GUARD):
        k = int(np.argmin(dist))
        i, j = pair_index(state.n).pair(k)
        raise DomainError(f"satellites {i + 1} and {j + 1} coincide (|r| = {dist[k]:.3g} m)")
    return dist


def zeta(state: FormationState, nu: np.ndarray) -> np.ndarray:
    """Distance-scaled force ``nu_ij / |r_ij|^4`` per pair."""
    nu = np.asarray(nu, dtype=float).reshape(-1, 3)
    return nu / pair_distances(state)[:, None] ** 4


def accelerations(state: FormationState, nu: np.ndarray, params: PhysicalParams) -> np.ndarray:
    """Averaged-model accelerations of every satellite, shape (n, 3)."""
    return params.beta * (_b0(state.n) @ zeta(state, nu))


def drift(state: FormationState, nu: np.ndarray, params: PhysicalParams) -> FormationState:
    """Time derivative of the state under the averaged model."""
    return FormationState(state.v, accelerations(state, nu, params))
