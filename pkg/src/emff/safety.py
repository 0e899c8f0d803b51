"""Soft-minimum relaxed control barrier function and the closed-form safety filter.

The commanded force functions ``nu`` are given first-order dynamics
``nu' = -a nu + a mu``, which turns the apparent-power limit into a state
constraint.  Collision and speed limits enter through higher-order barriers;
all of them are merged into one barrier ``h`` by a log-sum-exp soft minimum.
The filter returns the surrogate input ``mu`` closest to the desired one that
satisfies ``L_phi h + L_G h mu + alpha(h) + eta h >= 0``.

All per-pair quantities use the unordered pair ``(i, j), i < j`` with
``r_ij = r_i - r_j``.  The collision/speed barriers and ``psi`` are invariant
under ``(r, f) -> (-r, -f)``, so they are the same for both orderings.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple

import numpy as np

from .allocation import psi, psi_gradients
from .model import (ConstraintParams, FormationState, PhysicalParams, accelerations, build_B0, drift,
                    pair_distances, pair_index)
from .mpc import MpcPlanner, nu_desired_flow_derivative


class RegularityError(RuntimeError):
    """The filter constraint has no dependence on the input (L_G h = 0 and h = 0)."""


@dataclass(frozen=True)
class CbfConfig:
    a: float = 0.7
    sigma: float = 3.0
    rho: float = 10.0
    k0: float = 5.0
    k1: float = 5.0
    kv: float = 5.0
    alpha_gain: float = 0.02
    gamma_slack: float = 1e40

    def __post_init__(self):
        for name, value in vars(self).items():
            if not value > 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class CascadeState:
    """Formation state together with the controller state ``nu`` (P, 3)."""

    x: FormationState
    nu: np.ndarray

    def __post_init__(self):
        nu = np.array(self.nu, dtype=float).reshape(len(pair_index(self.x.n)), 3)
        nu.flags.writeable = False
        object.__setattr__(self, "nu", nu)

    def flat(self) -> np.ndarray:
        return np.concatenate([self.x.flat(), self.nu.ravel()])

    @classmethod
    def from_flat(cls, y: np.ndarray, n: int) -> "CascadeState":
        return cls(FormationState.from_flat(y[: 6 * n]), y[6 * n:].reshape(-1, 3))


class FilterOutput(NamedTuple):
    mu_star: np.ndarray
    eta_star: float
    lam: float
    omega: float
    h: float
    active: bool
    mu_d: np.ndarray
    lfh: float
    lgh: np.ndarray


@lru_cache(maxsize=None)
def _edge_laplacian(n: int) -> np.ndarray:
    b0 = build_B0(n)
    return b0.T @ b0


@lru_cache(maxsize=None)
def _abs_incidence(n: int) -> np.ndarray:
    return np.abs(build_B0(n))


# ---------------------------------------------------------------------------
# individual barriers

def _rel(state: FormationState, pair) -> tuple[np.ndarray, np.ndarray]:
    i, j = pair
    return state.r[i] - state.r[j], state.v[i] - state.v[j]


def _rel_accel(state: FormationState, nu, pair, params: PhysicalParams) -> np.ndarray:
    acc = accelerations(state, nu, params)
    i, j = pair
    return acc[i] - acc[j]


def barrier_R(state: FormationState, pair, r_min: float) -> float:
    r, _ = _rel(state, pair)
    return 0.5 * (r @ r - r_min**2)


def barrier_V(state: FormationState, pair, v_max: float) -> float:
    _, v = _rel(state, pair)
    return 0.5 * (v_max**2 - v @ v)


def barrier_Q(state: FormationState, nu, i: int, params: PhysicalParams,
              constraints: ConstraintParams) -> float:
    idx = pair_index(state.n)
    rel, _ = state.relative()
    pair_distances(state)
    nu = np.asarray(nu, dtype=float).reshape(-1, 3)
    mine = (idx.first == i) | (idx.second == i)
    load = params.impedance[mine] * psi(rel[mine], nu[mine], constraints.eps1, constraints.eps2)
    return constraints.q_max - params.power_scale * float(np.sum(load))


def hocbf_R1(state: FormationState, pair, cfg: CbfConfig, r_min: float) -> float:
    r, v = _rel(state, pair)
    return r @ v + cfg.k0 * barrier_R(state, pair, r_min)


def hocbf_R2(state: FormationState, nu, pair, cfg: CbfConfig, params: PhysicalParams,
             r_min: float) -> float:
    r, v = _rel(state, pair)
    acc = _rel_accel(state, nu, pair, params)
    return v @ v + r @ acc + cfg.k0 * (r @ v) + cfg.k1 * hocbf_R1(state, pair, cfg, r_min)


def hocbf_V1(state: FormationState, nu, pair, cfg: CbfConfig, params: PhysicalParams,
             v_max: float) -> float:
    _, v = _rel(state, pair)
    acc = _rel_accel(state, nu, pair, params)
    return -(v @ acc) + cfg.kv * barrier_V(state, pair, v_max)


# ---------------------------------------------------------------------------
# soft minimum

def soft_min(values, rho: float) -> float:
    z = np.asarray(values, dtype=float).ravel()
    if z.size == 0:
        raise ValueError("soft minimum of an empty list")
    if rho <= 0:
        raise ValueError("rho must be positive")
    zmin = z.min()
    return float(zmin - np.log(np.sum(np.exp(-rho * (z - zmin)))) / rho)


def soft_min_weights(values, rho: float) -> np.ndarray:
    """Gradient of the soft minimum with respect to its arguments."""
    z = np.asarray(values, dtype=float).ravel()
    e = np.exp(-rho * (z - z.min()))
    return e / e.sum()


# ---------------------------------------------------------------------------
# composite barrier with analytic gradients

class BarrierEval(NamedTuple):
    """Every soft-min argument, ``h`` and its partials at one cascade state.

    Gradients are with respect to the per-pair relative positions/velocities
    and the per-pair force functions, each shape (P, 3).
    """

    R: np.ndarray
    R1: np.ndarray
    R2: np.ndarray
    V: np.ndarray
    V1: np.ndarray
    Q: np.ndarray
    args: np.ndarray
    weights: np.ndarray
    h: float
    grad_r: np.ndarray
    grad_v: np.ndarray
    grad_nu: np.ndarray
    rel_r: np.ndarray
    rel_v: np.ndarray
    rel_acc: np.ndarray

    def lie_derivatives(self, nu: np.ndarray, a: float) -> tuple[float, np.ndarray]:
        lfh = float(np.sum(self.grad_r * self.rel_v) + np.sum(self.grad_v * self.rel_acc)
                    - a * np.sum(self.grad_nu * nu))
        return lfh, a * self.grad_nu.ravel()


def evaluate(cascade: CascadeState, cfg: CbfConfig, params: PhysicalParams,
             constraints: ConstraintParams) -> BarrierEval:
    state, nu = cascade.x, cascade.nu
    n = state.n
    beta = params.beta
    lap = _edge_laplacian(n)
    r, v = state.relative()
    dist = pair_distances(state)
    inv4 = dist**-4
    zeta = nu * inv4[:, None]
    acc = beta * (lap @ zeta)

    rv = np.sum(r * v, axis=1)
    vv = np.sum(v * v, axis=1)
    R = 0.5 * (dist**2 - constraints.r_min**2)
    R1 = rv + cfg.k0 * R
    R2 = vv + np.sum(r * acc, axis=1) + cfg.k0 * rv + cfg.k1 * R1
    V = 0.5 * (constraints.v_max**2 - vv)
    V1 = -np.sum(v * acc, axis=1) + cfg.kv * V
    psi_val, dpsi_dr, dpsi_df = psi_gradients(r, nu, constraints.eps1, constraints.eps2)
    load = params.power_scale * params.impedance * psi_val
    Q = constraints.q_max - _abs_incidence(n) @ load

    args = np.concatenate([R2, V1, Q])
    w = soft_min_weights(args, cfg.rho)
    h = soft_min(args, cfg.rho)
    npairs = r.shape[0]
    w_r, w_v, w_q = w[:npairs, None], w[npairs:2 * npairs, None], w[2 * npairs:]

    # terms that see nu only through the relative accelerations
    c = w_r * r - w_v * v
    s = lap @ c
    grad_nu = beta * s * inv4[:, None]
    grad_r = -4.0 * beta * np.sum(s * nu, axis=1, keepdims=True) * r * (inv4 / dist**2)[:, None]
    grad_r += w_r * (acc + (cfg.k0 + cfg.k1) * v + cfg.k0 * cfg.k1 * r)
    grad_v = w_r * (2.0 * v + (cfg.k0 + cfg.k1) * r) - w_v * (acc + cfg.kv * v)
    # power terms
    wq = (params.power_scale * params.impedance * (_abs_incidence(n).T @ w_q))[:, None]
    grad_r -= wq * dpsi_dr
    grad_nu -= wq * dpsi_df

    return BarrierEval(R, R1, R2, V, V1, Q, args, w, h, grad_r, grad_v, grad_nu, r, v, acc)


def argument_labels(n: int) -> list[str]:
    pairs = pair_index(n).labels()
    return ([f"R{p}_2" for p in pairs] + [f"V{p}_1" for p in pairs]
            + [f"Q{i + 1}" for i in range(n)])


def composite_h(cascade: CascadeState, cfg: CbfConfig, params: PhysicalParams,
                constraints: ConstraintParams) -> float:
    return evaluate(cascade, cfg, params, constraints).h


def absolute_gradient(ev: BarrierEval, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Partials of ``h`` w.r.t. the flat formation state (6n) and flat ``nu``."""
    b0 = build_B0(n)
    gx = np.concatenate([(b0 @ ev.grad_r).ravel(), (b0 @ ev.grad_v).ravel()])
    return gx, ev.grad_nu.ravel()


def h_lie_derivatives(cascade: CascadeState, cfg: CbfConfig, params: PhysicalParams,
                      constraints: ConstraintParams) -> tuple[float, np.ndarray]:
    """``(L_phi h, L_G h)`` along the cascade drift and input fields."""
    ev = evaluate(cascade, cfg, params, constraints)
    return ev.lie_derivatives(cascade.nu, cfg.a)


# ---------------------------------------------------------------------------
# desired input and filter

def mu_desired(cascade: CascadeState, cfg: CbfConfig, params: PhysicalParams,
               planner: MpcPlanner, delta: float = 1e-6) -> np.ndarray:
    """Surrogate input under which ``nu`` tracks ``nu_d(x)`` at rate ``sigma``."""
    state, nu = cascade.x, cascade.nu
    nu_d = planner.nu_desired(state)
    flow = nu_desired_flow_derivative(state, drift(state, nu, params), planner, delta)
    return nu + (cfg.sigma / cfg.a) * (nu_d - nu) + flow / cfg.a


def solve_filter(lfh: float, lgh: np.ndarray, h: float, mu_d: np.ndarray,
                 cfg: CbfConfig) -> tuple[np.ndarray, float, float, float]:
    """Closed-form minimiser of ``|mu - mu_d|^2/2 + gamma eta^2/2`` s.t. ``b >= 0``.

    Returns ``(mu_star, eta_star, lambda, omega)``.
    """
    mu_d = np.asarray(mu_d, dtype=float).ravel()
    omega = lfh + float(lgh @ mu_d) + cfg.alpha_gain * h
    if omega >= 0.0:
        return mu_d, 0.0, 0.0, omega
    denom = float(lgh @ lgh) + (h / cfg.gamma_slack) * h
    if not denom > 1e-300:
        raise RegularityError("L_G h and h both vanish; the constraint cannot be enforced")
    lam = -omega / denom
    return mu_d + lam * lgh, h * lam / cfg.gamma_slack, lam, omega


def constraint_value(lfh: float, lgh: np.ndarray, h: float, mu, eta: float,
                     cfg: CbfConfig) -> float:
    """``b(x, nu, mu, eta)``."""
    return lfh + float(lgh @ np.ravel(mu)) + cfg.alpha_gain * h + eta * h


def safety_filter(cascade: CascadeState, cfg: CbfConfig, params: PhysicalParams,
                  constraints: ConstraintParams, planner: MpcPlanner,
                  ev: BarrierEval | None = None) -> FilterOutput:
    if ev is None:
        ev = evaluate(cascade, cfg, params, constraints)
    lfh, lgh = ev.lie_derivatives(cascade.nu, cfg.a)
    mu_d = mu_desired(cascade, cfg, params, planner).ravel()
    mu_star, eta, lam, omega = solve_filter(lfh, lgh, ev.h, mu_d, cfg)
    return FilterOutput(mu_star.reshape(-1, 3), eta, lam, omega, ev.h, lam > 0.0,
                        mu_d.reshape(-1, 3), lfh, lgh)
