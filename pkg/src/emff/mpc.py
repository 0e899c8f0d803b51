"""Finite-horizon linear-quadratic formation planner.

The planner penalises relative-position error, relative velocity and the
distance-scaled force ``zeta`` over a horizon, subject to the double-integrator
dynamics ``x' = A x + B zeta`` discretised with a zero-order hold.  Without
inequality constraints the optimum is an affine feedback, obtained here by a
backward Riccati recursion that is run once per planner.  Internally the input
is expressed in acceleration units ``u = beta * zeta`` for conditioning.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .model import DomainError, FormationState, PhysicalParams, build_B0, pair_distances, pair_index

#: default input weight in acceleration units, W_zeta = DEFAULT_ACCEL_WEIGHT * beta^2 * I
DEFAULT_ACCEL_WEIGHT = 20000.0


@dataclass(frozen=True)
class MpcConfig:
    """Horizon, weights and the target formation.

    ``d`` holds the desired ``r_i - r_j`` for each unordered pair (PairIndex
    order), shape (P, 3).  ``w_zeta`` is the input weight on ``zeta`` in raw
    units; when omitted it is ``accel_weight * beta**2 * I``, i.e. a weight of
    ``accel_weight`` on the commanded pair accelerations.
    """

    d: np.ndarray
    horizon: float = 10.0
    step: float = 0.1
    w_pos: np.ndarray = field(default_factory=lambda: np.eye(3))
    w_vel: np.ndarray = field(default_factory=lambda: np.eye(3))
    w_zeta: np.ndarray | None = None
    accel_weight: float = DEFAULT_ACCEL_WEIGHT

    def __post_init__(self):
        d = np.array(self.d, dtype=float).reshape(-1, 3)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "w_pos", np.array(self.w_pos, dtype=float))
        object.__setattr__(self, "w_vel", np.array(self.w_vel, dtype=float))
        if self.w_zeta is not None:
            object.__setattr__(self, "w_zeta", np.array(self.w_zeta, dtype=float))
        ratio = self.horizon / self.step
        if self.step <= 0 or abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise ValueError("step must divide the horizon")
        for name in ("w_pos", "w_vel"):
            if np.linalg.eigvalsh(getattr(self, name)).min() <= 0:
                raise ValueError(f"{name} must be positive definite")

    @property
    def steps(self) -> int:
        return int(round(self.horizon / self.step))

    @property
    def n(self) -> int:
        pairs = self.d.shape[0]
        n = int(round((1 + np.sqrt(1 + 8 * pairs)) / 2))
        if n * (n - 1) // 2 != pairs:
            raise ValueError("d must have one row per unordered pair")
        return n

    def input_weight(self, params: PhysicalParams) -> np.ndarray:
        lnu = 3 * len(pair_index(self.n))
        if self.w_zeta is not None:
            w = self.w_zeta
            if w.shape != (lnu, lnu) or np.linalg.eigvalsh(w).min() <= 0:
                raise ValueError("w_zeta must be a positive definite l_nu x l_nu matrix")
            return w
        return self.accel_weight * params.beta**2 * np.eye(lnu)


class MpcSolution(NamedTuple):
    zeta_d: np.ndarray
    trajectory: np.ndarray | None = None


def output_map(n: int) -> np.ndarray:
    """Map from the absolute state to stacked relative positions then velocities."""
    rel = np.kron(build_B0(n).T, np.eye(3))
    z = np.zeros_like(rel)
    return np.block([[rel, z], [z, rel]])


def discretize(n: int, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Exact ZOH discretisation with input in pair-acceleration units."""
    eye = np.eye(3 * n)
    ad = np.block([[eye, dt * eye], [np.zeros_like(eye), eye]])
    b0 = np.kron(build_B0(n), np.eye(3))
    bd = np.vstack([0.5 * dt * dt * b0, dt * b0])
    return ad, bd


def stage_weights(cfg: MpcConfig) -> tuple[np.ndarray, np.ndarray]:
    """Weight on the relative output and the target output vector."""
    npairs = cfg.d.shape[0]
    wy = np.kron(np.diag([1.0, 0.0]), np.kron(np.eye(npairs), cfg.w_pos)) + \
        np.kron(np.diag([0.0, 1.0]), np.kron(np.eye(npairs), cfg.w_vel))
    target = np.concatenate([cfg.d.ravel(), np.zeros(3 * npairs)])
    return wy, target


class MpcPlanner:
    """Affine feedback ``zeta_d(x)`` for one configuration, gains precomputed.

    The discrete cost is ``sum_{k=1..N} dt * e_k' W e_k + sum_{k=0..N-1} dt * u_k' R u_k``
    with ``e_k`` the relative-output error after step ``k``.
    """

    def __init__(self, cfg: MpcConfig, params: PhysicalParams):
        self.cfg = cfg
        self.params = params
        self.n = cfg.n
        n, dt = self.n, cfg.step
        ad, bd = discretize(n, dt)
        c = output_map(n)
        wy, target = stage_weights(cfg)
        q_state = dt * c.T @ wy @ c
        q_lin = -dt * c.T @ wy @ target
        r_in = dt * cfg.input_weight(params) / params.beta**2

        p_mat, p_lin = q_state, q_lin
        gains = []
        for _ in range(cfg.steps):
            h = r_in + bd.T @ p_mat @ bd
            h = 0.5 * (h + h.T)
            try:
                chol = np.linalg.cholesky(h)
            except np.linalg.LinAlgError as exc:
                raise RuntimeError("singular normal equations in MPC recursion") from exc
            k_fb = np.linalg.solve(chol.T, np.linalg.solve(chol, bd.T @ p_mat @ ad))
            k_ff = np.linalg.solve(chol.T, np.linalg.solve(chol, bd.T @ p_lin))
            gains.append((k_fb, k_ff))
            closed = ad - bd @ k_fb
            p_lin = q_lin + closed.T @ p_lin
            p_mat = q_state + ad.T @ p_mat @ closed
            p_mat = 0.5 * (p_mat + p_mat.T)
        gains.reverse()
        self._gains = gains
        self._ad, self._bd = ad, bd
        self.k_fb, self.k_ff = gains[0]

    def accel(self, x: np.ndarray) -> np.ndarray:
        """First-interval pair accelerations ``beta * zeta_d`` for flat state ``x``."""
        return -(self.k_fb @ x + self.k_ff)

    def zeta_d(self, state: FormationState) -> np.ndarray:
        return (self.accel(state.flat()) / self.params.beta).reshape(-1, 3)

    def plan(self, state: FormationState, trajectory: bool = False) -> MpcSolution:
        x = state.flat()
        zeta_d = self.zeta_d(state)
        if not trajectory:
            return MpcSolution(zeta_d)
        traj = [x]
        for k_fb, k_ff in self._gains:
            x = self._ad @ x - self._bd @ (k_fb @ x + k_ff)
            traj.append(x)
        return MpcSolution(zeta_d, np.array(traj))

    def nu_desired(self, state: FormationState) -> np.ndarray:
        return nu_from_zeta(state, self.zeta_d(state))


def plan_zeta(state: FormationState, cfg: MpcConfig, params: PhysicalParams,
              trajectory: bool = False) -> MpcSolution:
    if state.n != cfg.n:
        raise ValueError("state and configuration disagree on the satellite count")
    return MpcPlanner(cfg, params).plan(state, trajectory)


def nu_from_zeta(state: FormationState, zeta_d: np.ndarray) -> np.ndarray:
    """Undo the distance scaling: multiply each pair by ``|r_ij|^4``."""
    return np.asarray(zeta_d, dtype=float).reshape(-1, 3) * pair_distances(state)[:, None] ** 4


def nu_desired(state: FormationState, cfg: MpcConfig | MpcPlanner,
               params: PhysicalParams | None = None) -> np.ndarray:
    planner = cfg if isinstance(cfg, MpcPlanner) else MpcPlanner(cfg, params)
    return planner.nu_desired(state)


def nu_desired_flow_derivative(state: FormationState, state_dot: FormationState,
                               planner: MpcPlanner, delta: float = 1e-6) -> np.ndarray:
    """Forward difference of ``nu_d`` along the flow direction ``state_dot``.

    If the perturbed state trips the distance guard the step is shrunk.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    base = planner.nu_desired(state)
    x, xdot = state.flat(), state_dot.flat()
    for _ in range(30):
        try:
            moved = planner.nu_desired(FormationState.from_flat(x + delta * xdot))
        except DomainError:
            delta *= 0.5
            continue
        return (moved - base) / delta
    raise DomainError("no admissible step for the flow derivative")
