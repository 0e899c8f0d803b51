"""Closed-loop integration of the averaged cascade and of the full dipole model."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import solve_ivp

from .allocation import allocate_all
from .amff import AmplitudeSet, full_accelerations, moments
from .model import (ConstraintParams, DomainError, FormationState, PhysicalParams, accelerations,
                    pair_index)
from .mpc import MpcConfig, MpcPlanner
from .safety import (BarrierEval, CascadeState, CbfConfig, FilterOutput, argument_labels, evaluate,
                     safety_filter)

log = logging.getLogger(__name__)

SAFE_SET_TOLERANCE = 1e-6
MAX_HALVINGS = 10
#: relative slack on the barrier decay bound before a step counts as broken
BARRIER_TOLERANCE = 1e-6
STIFF_RTOL = 1e-8
STIFF_ATOL_STATE = 1e-9
STIFF_ATOL_FORCE = 1e-1


class SafeSetExit(RuntimeError):
    """A raw constraint was violated beyond the integration tolerance."""


@dataclass(frozen=True)
class Scenario:
    params: PhysicalParams
    constraints: ConstraintParams
    mpc: MpcConfig
    cbf: CbfConfig
    r0: np.ndarray
    v0: np.ndarray
    nu0: np.ndarray | None = None
    duration: float = 200.0
    dt: float = 0.01
    dt_full: float = 5e-5
    use_filter: bool = True
    log_every: int = 1
    name: str = "scenario"

    def __post_init__(self):
        object.__setattr__(self, "r0", np.array(self.r0, dtype=float).reshape(-1, 3))
        object.__setattr__(self, "v0", np.array(self.v0, dtype=float).reshape(-1, 3))
        n = self.r0.shape[0]
        lnu = len(pair_index(n))
        nu0 = np.zeros((lnu, 3)) if self.nu0 is None else np.array(self.nu0, dtype=float).reshape(lnu, 3)
        object.__setattr__(self, "nu0", nu0)
        if self.mpc.n != n or len(self.params.omega_over_pi) != lnu:
            raise ValueError("satellite count disagrees across scenario sections")
        if self.duration <= 0 or self.dt <= 0 or self.dt_full <= 0 or self.log_every < 1:
            raise ValueError("durations, steps and log_every must be positive")

    @property
    def n(self) -> int:
        return self.r0.shape[0]

    def initial(self) -> CascadeState:
        return CascadeState(FormationState(self.r0, self.v0), self.nu0)


def safe_set_margins(ev: BarrierEval) -> dict[str, float]:
    """Smallest value of each barrier family; all must be nonnegative in the safe set."""
    return {"R": float(ev.R.min()), "R1": float(ev.R1.min()), "V": float(ev.V.min()),
            "Q": float(ev.Q.min()), "h": ev.h}


def check_initial(scenario: Scenario) -> dict[str, float]:
    ev = evaluate(scenario.initial(), scenario.cbf, scenario.params, scenario.constraints)
    margins = safe_set_margins(ev)
    bad = {k: m for k, m in margins.items() if m < 0}
    if bad:
        raise SafeSetExit(f"initial state is outside the safe set: {bad}")
    return margins


class Controller:
    """Filtered feedback ``mu*(x, nu)``; holds only the precomputed MPC gains."""

    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        self.planner = MpcPlanner(scenario.mpc, scenario.params)
        self.guard_barrier = scenario.use_filter
        self.stiff_steps = 0

    def __call__(self, cascade: CascadeState) -> tuple[FilterOutput, BarrierEval]:
        sc = self.scenario
        ev = evaluate(cascade, sc.cbf, sc.params, sc.constraints)
        out = safety_filter(cascade, sc.cbf, sc.params, sc.constraints, self.planner, ev)
        if not sc.use_filter:
            out = out._replace(mu_star=out.mu_d, eta_star=0.0, lam=0.0, active=False)
        return out, ev

    def rhs(self, y: np.ndarray) -> np.ndarray:
        sc = self.scenario
        cascade = CascadeState.from_flat(y, sc.n)
        out, _ = self(cascade)
        acc = accelerations(cascade.x, cascade.nu, sc.params)
        nudot = sc.cbf.a * (out.mu_star - cascade.nu)
        return np.concatenate([cascade.x.v.ravel(), acc.ravel(), nudot.ravel()])


def rk4(rhs: Callable[[np.ndarray], np.ndarray], y: np.ndarray, dt: float) -> np.ndarray:
    k1 = rhs(y)
    k2 = rhs(y + 0.5 * dt * k1)
    k3 = rhs(y + 0.5 * dt * k2)
    k4 = rhs(y + dt * k3)
    return y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _decay_floor(h_old: float, dt: float, cfg: CbfConfig) -> float:
    """Lowest ``h`` the filter allows after ``dt`` (it enforces ``h' >= -alpha h``)."""
    return h_old * np.exp(-cfg.alpha_gain * dt) - BARRIER_TOLERANCE * (1.0 + abs(h_old))


def _rk4_halving(rhs: Callable[[np.ndarray], np.ndarray], y: np.ndarray, dt: float,
                 depth: int = 0) -> np.ndarray:
    try:
        return rk4(rhs, y, dt)
    except DomainError:
        if depth >= MAX_HALVINGS:
            raise
        half = _rk4_halving(rhs, y, 0.5 * dt, depth + 1)
        return _rk4_halving(rhs, half, 0.5 * dt, depth + 1)


def _stiff_step(controller: Controller, y: np.ndarray, dt: float) -> np.ndarray:
    """Implicit Radau integration of one step.

    Used when the explicit step breaks the barrier decay bound.  With the power
    barriers several of them can be near-active at once and the soft-min
    weights then switch on a time scale of ~1e-7 s, which no explicit step
    resolves.
    """
    n = controller.scenario.n
    atol = np.concatenate([np.full(6 * n, STIFF_ATOL_STATE), np.full(y.size - 6 * n, STIFF_ATOL_FORCE)])
    sol = solve_ivp(lambda _t, z: controller.rhs(z), (0.0, dt), y, method="Radau",
                    rtol=STIFF_RTOL, atol=atol)
    if not sol.success:
        raise DomainError(f"stiff fallback failed: {sol.message}")
    return sol.y[:, -1]


def step_averaged(cascade: CascadeState, dt: float, controller: Controller) -> CascadeState:
    """One RK4 step of the closed-loop cascade, the filter evaluated at every stage.

    Domain violations halve the step.  If the step lowers ``h`` faster than the
    filter permits, the explicit result is discarded and the step is redone
    with an implicit solver.
    """
    sc = controller.scenario
    y = cascade.flat()
    y_new = _rk4_halving(controller.rhs, y, dt)
    if controller.guard_barrier:
        h_old = evaluate(cascade, sc.cbf, sc.params, sc.constraints).h
        h_new = evaluate(CascadeState.from_flat(y_new, sc.n), sc.cbf, sc.params, sc.constraints).h
        if h_new < _decay_floor(h_old, dt, sc.cbf):
            controller.stiff_steps += 1
            y_new = _stiff_step(controller, y, dt)
    return CascadeState.from_flat(y_new, cascade.x.n)


# ---------------------------------------------------------------------------
# logging

def log_columns(n: int) -> list[str]:
    pairs = pair_index(n).labels()
    axes = "xyz"
    cols = ["time_s"]
    cols += [f"r{i + 1}{a}_m" for i in range(n) for a in axes]
    cols += [f"v{i + 1}{a}_m_per_s" for i in range(n) for a in axes]
    cols += [f"nu{p}{a}" for p in pairs for a in axes]
    cols += [f"nud{p}{a}" for p in pairs for a in axes]
    cols += [f"mu{p}{a}" for p in pairs for a in axes]
    cols += ["h"] + argument_labels(n)
    cols += [f"R{p}" for p in pairs] + [f"R{p}_1" for p in pairs] + [f"V{p}" for p in pairs]
    cols += [f"p{i + 1}{j + 1}{a}_Am2" for i in range(n) for j in range(n) if i != j for a in axes]
    cols += [f"power{i + 1}_VA" for i in range(n)]
    cols += ["argmin_index", "lambda", "filter_active", "dist_min_m", "relspeed_max_m_per_s"]
    return cols


def apparent_power(amps: AmplitudeSet, params: PhysicalParams) -> np.ndarray:
    """Per-satellite proxy ``sum_j Z_ij |p_ij|^2 / (N A)^2`` from actual amplitudes."""
    n = amps.n
    idx = pair_index(n)
    z = np.zeros((n, n))
    z[idx.first, idx.second] = params.impedance
    z[idx.second, idx.first] = params.impedance
    return params.power_scale * np.sum(z * amps.squared_norms(), axis=1)


@dataclass
class RunLog:
    """Uniformly sampled closed-loop record; one row per logged step."""

    columns: list[str]
    rows: list[np.ndarray] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def data(self) -> np.ndarray:
        return np.array(self.rows) if self.rows else np.zeros((0, len(self.columns)))

    def column(self, name: str) -> np.ndarray:
        return self.data[:, self.columns.index(name)]

    def select(self, prefix: str, suffix: str = "") -> np.ndarray:
        keep = [k for k, c in enumerate(self.columns) if c.startswith(prefix) and c.endswith(suffix)]
        return self.data[:, keep]

    def write_csv(self, path) -> None:
        np.savetxt(path, self.data, delimiter=",", header=",".join(self.columns),
                   comments="", fmt="%.17g")


def _log_row(t: float, cascade: CascadeState, out: FilterOutput, ev: BarrierEval,
             nu_d: np.ndarray, params: PhysicalParams) -> np.ndarray:
    amps = allocate_all(cascade.x, cascade.nu)
    n = cascade.x.n
    offdiag = ~np.eye(n, dtype=bool)
    dist = np.linalg.norm(ev.rel_r, axis=1)
    speed = np.linalg.norm(ev.rel_v, axis=1)
    return np.concatenate([
        [t], cascade.x.r.ravel(), cascade.x.v.ravel(), cascade.nu.ravel(), nu_d.ravel(),
        out.mu_star.ravel(), [out.h], ev.args, ev.R, ev.R1, ev.V,
        amps.p[offdiag].ravel(), apparent_power(amps, params),
        [np.argmin(ev.args), out.lam, float(out.active), dist.min(), speed.max()],
    ])


def _violations(ev: BarrierEval, tol: float) -> dict[str, float]:
    margins = safe_set_margins(ev)
    return {k: margins[k] for k in ("R", "V", "Q") if margins[k] < -tol}


def run_averaged(scenario: Scenario, check_safety: bool = True,
                 progress: Callable[[float], None] | None = None) -> RunLog:
    """Integrate the averaged closed loop and log every ``log_every`` steps.

    With ``check_safety`` the run aborts with :class:`SafeSetExit` as soon as a
    collision, speed or power barrier drops below ``-SAFE_SET_TOLERANCE``.
    """
    if check_safety:
        check_initial(scenario)
    controller = Controller(scenario)
    runlog = RunLog(log_columns(scenario.n))
    cascade = scenario.initial()
    steps = int(round(scenario.duration / scenario.dt))
    for k in range(steps + 1):
        t = k * scenario.dt
        out, ev = controller(cascade)
        if check_safety:
            bad = _violations(ev, SAFE_SET_TOLERANCE)
            if bad:
                raise SafeSetExit(f"safe set left at t={t:.4f} s: {bad}")
        if k % scenario.log_every == 0 or k == steps:
            nu_d = controller.planner.nu_desired(cascade.x)
            runlog.rows.append(_log_row(t, cascade, out, ev, nu_d, scenario.params))
        if progress is not None and k % 1000 == 0:
            progress(t)
        if k < steps:
            cascade = step_averaged(cascade, scenario.dt, controller)
    runlog.meta["final"] = cascade
    runlog.meta["stiff_steps"] = controller.stiff_steps
    return runlog


# ---------------------------------------------------------------------------
# full-fidelity sinusoidal simulation

def _full_rhs(t: float, y: np.ndarray, amps: AmplitudeSet, params: PhysicalParams, n: int) -> np.ndarray:
    state = FormationState.from_flat(y)
    u = moments(amps, t, params)
    return np.concatenate([state.v.ravel(), full_accelerations(state, u, params).ravel()])


def integrate_period(state: FormationState, amps: AmplitudeSet, t0: float, duration: float,
                     dt: float, params: PhysicalParams) -> tuple[FormationState, np.ndarray]:
    """RK4 on the unaveraged dynamics over ``[t0, t0 + duration]`` with held amplitudes.

    Returns the end state and the sampled accelerations (steps+1, n, 3).
    """
    steps = int(round(duration / dt))
    y = state.flat()
    n = state.n
    samples = []
    for k in range(steps):
        t = t0 + k * dt
        k1 = _full_rhs(t, y, amps, params, n)
        samples.append(k1[3 * n:].reshape(n, 3))
        k2 = _full_rhs(t + 0.5 * dt, y + 0.5 * dt * k1, amps, params, n)
        k3 = _full_rhs(t + 0.5 * dt, y + 0.5 * dt * k2, amps, params, n)
        k4 = _full_rhs(t + dt, y + dt * k3, amps, params, n)
        y = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    end = FormationState.from_flat(y)
    samples.append(_full_rhs(t0 + duration, y, amps, params, n)[3 * n:].reshape(n, 3))
    return end, np.array(samples)


def full_columns(n: int) -> list[str]:
    axes = "xyz"
    cols = ["time_s"]
    cols += [f"r{i + 1}{a}_m" for i in range(n) for a in axes]
    cols += [f"v{i + 1}{a}_m_per_s" for i in range(n) for a in axes]
    cols += [f"u{i + 1}{a}_Am2" for i in range(n) for a in axes]
    cols += [f"acc{i + 1}{a}_m_per_s2" for i in range(n) for a in axes]
    cols += [f"accavg{i + 1}{a}_m_per_s2" for i in range(n) for a in axes]
    cols += [f"accmodel{i + 1}{a}_m_per_s2" for i in range(n) for a in axes]
    return cols


def run_full(scenario: Scenario, window: float, cascade: CascadeState | None = None,
             log_every: int = 1) -> RunLog:
    """Drive the unaveraged dynamics with amplitudes resampled every common period.

    At each ``t = kT`` the averaged controller's ``nu`` is turned into amplitudes
    with :func:`allocate_all` and held over the period.  The controller state is
    advanced over the period by RK4 with the formation state frozen at ``kT``.
    Logged rows carry the raw accelerations at every fine step plus, at each
    period end, the period-mean acceleration (``accavg``, from the velocity
    change) next to the averaged-model acceleration at the period start.
    """
    params = scenario.params
    period = params.period
    periods = window / period
    if abs(periods - round(periods)) > 1e-9 or round(periods) < 1:
        raise ValueError(f"window must be a positive multiple of T={period:g} s")
    fastest = 2 * np.pi / params.omega.max()
    if scenario.dt_full > fastest / 64 * (1 + 1e-12):
        raise ValueError("full-fidelity step must resolve the fastest sinusoid with 64 samples")
    fine = int(round(period / scenario.dt_full))
    dt = period / fine

    controller = Controller(scenario)
    cascade = scenario.initial() if cascade is None else cascade
    n = scenario.n
    runlog = RunLog(full_columns(n))
    nan3 = np.full(3 * n, np.nan)
    for k in range(int(round(periods))):
        t0 = k * period
        state, nu = cascade.x, cascade.nu
        amps = allocate_all(state, nu)
        model_acc = accelerations(state, nu, params)
        end, acc = integrate_period(state, amps, t0, period, dt, params)
        mean_acc = (end.v - state.v) / period
        # controller state over the period with the formation frozen at kT
        y = nu.ravel()
        frozen = lambda z: (scenario.cbf.a * (controller(CascadeState(state, z))[0].mu_star.ravel() - z))
        y = rk4(frozen, y, period)
        for j in range(0, fine, log_every):
            t = t0 + j * dt
            u = moments(amps, t, params)
            runlog.rows.append(np.concatenate([[t], np.full(6 * n, np.nan), u.ravel(),
                                               acc[j].ravel(), nan3, nan3]))
            if j == 0:
                runlog.rows[-1][1:1 + 6 * n] = state.flat()
        runlog.rows.append(np.concatenate([[t0 + period], end.flat(), moments(amps, t0 + period, params).ravel(),
                                           acc[-1].ravel(), mean_acc.ravel(), model_acc.ravel()]))
        cascade = CascadeState(end, y.reshape(-1, 3))
    runlog.meta["final"] = cascade
    return runlog
