"""Piecewise-sinusoidal magnetic moments and the unaveraged dipole dynamics."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import FormationState, PhysicalParams, dipole_force_f, pair_distances, pair_index


@dataclass(frozen=True)
class AmplitudeSet:
    """Sinusoid amplitudes for every ordered pair.

    ``p[i, j]`` is the amplitude satellite ``i`` drives at the frequency it
    shares with satellite ``j``; the diagonal is unused and kept at zero.
    """

    p: np.ndarray

    def __post_init__(self):
        p = np.array(self.p, dtype=float)
        if p.ndim != 3 or p.shape[0] != p.shape[1] or p.shape[2] != 3:
            raise ValueError("amplitudes must have shape (n, n, 3)")
        p[np.arange(p.shape[0]), np.arange(p.shape[0])] = 0.0
        p.flags.writeable = False
        object.__setattr__(self, "p", p)

    @property
    def n(self) -> int:
        return self.p.shape[0]

    @classmethod
    def zeros(cls, n: int) -> "AmplitudeSet":
        return cls(np.zeros((n, n, 3)))

    def __getitem__(self, ij: tuple[int, int]) -> np.ndarray:
        return self.p[ij]

    def squared_norms(self) -> np.ndarray:
        return np.sum(self.p**2, axis=-1)


def _omega_matrix(n: int, params: PhysicalParams) -> np.ndarray:
    idx = pair_index(n)
    w = np.zeros((n, n))
    w[idx.first, idx.second] = params.omega
    w[idx.second, idx.first] = params.omega
    return w


def moments(amps: AmplitudeSet, t, params: PhysicalParams) -> np.ndarray:
    """Moments of all satellites at time(s) ``t``: shape (n, 3) or (len(t), n, 3)."""
    w = _omega_matrix(amps.n, params)
    s = np.sin(np.multiply.outer(np.asarray(t, dtype=float), w))
    return np.einsum("...ij,ijk->...ik", s, amps.p)


def moment_at(i: int, amps: AmplitudeSet, t: float, params: PhysicalParams) -> np.ndarray:
    """Moment ``u_i(t) = sum_j p_ij sin(omega_ij t)`` of satellite ``i``."""
    return moments(amps, t, params)[..., i, :]


def full_accelerations(state: FormationState, u: np.ndarray, params: PhysicalParams) -> np.ndarray:
    """Instantaneous dipole accelerations for moments ``u`` (n, 3)."""
    idx = pair_index(state.n)
    u = np.asarray(u, dtype=float).reshape(state.n, 3)
    rel, _ = state.relative()
    dist = pair_distances(state)
    f = dipole_force_f(rel, u[idx.first], u[idx.second]) / dist[:, None] ** 4
    acc = np.zeros((state.n, 3))
    np.add.at(acc, idx.first, f)
    np.add.at(acc, idx.second, -f)
    return (params.c0 / params.m) * acc


def averaged_force_oracle(r, amps: AmplitudeSet, pair: tuple[int, int],
                          params: PhysicalParams, steps: int = 100_000) -> np.ndarray:
    """Trapezoid average of ``f(r, u_i(t), u_j(t))`` over one common period.

    The integrand is periodic, so the composite trapezoid rule reduces to the
    mean over ``steps`` equispaced samples on ``[0, T)``.
    """
    i, j = pair
    t = np.arange(steps) * (params.period / steps)
    u = moments(amps, t, params)
    r = np.broadcast_to(np.asarray(r, dtype=float), (steps, 3))
    return dipole_force_f(r, u[:, i], u[:, j]).mean(axis=0)
