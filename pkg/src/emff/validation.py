"""Seeded property suites behind ``emff validate``.

Each suite compares the library against an independent oracle and reports the
worst observed error next to its tolerance.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .allocation import amplitude_pair, psi
from .amff import AmplitudeSet, averaged_force_oracle
from .model import (ConstraintParams, FormationState, PhysicalParams, accelerations, dipole_force_f,
                    pair_distances, pair_index)
from .safety import CascadeState, CbfConfig, constraint_value, evaluate, solve_filter
from .sim import Controller, rk4, run_full

SWAP_PARAMS = PhysicalParams(m=15.0, n_turns=400, coil_area=0.1963, coil_resistance=0.3673,
                              coil_inductance=0.12, omega_over_pi=(200, 400, 600))


@dataclass(frozen=True)
class SuiteResult:
    name: str
    passed: bool
    margin: float
    detail: str


def _result(name: str, worst: float, tol: float, unit: str = "") -> SuiteResult:
    return SuiteResult(name, bool(worst <= tol), tol - worst, f"worst={worst:.3g}{unit} tol={tol:.1g}")


def random_vectors(rng: np.random.Generator, count: int, degenerate: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Random ``(r, f)`` pairs; a third of them parallel or orthogonal when ``degenerate``."""
    r = rng.normal(size=(count, 3)) * rng.uniform(0.5, 5.0, size=(count, 1))
    f = rng.normal(size=(count, 3)) * 10.0 ** rng.uniform(-3, 8, size=(count, 1))
    if degenerate:
        k = count // 6
        f[:k] = r[:k] * rng.uniform(-1e3, 1e3, size=(k, 1))
        g = rng.normal(size=(k, 3))
        f[k:2 * k] = np.cross(r[k:2 * k], g)
    return r, f


def random_cascade(rng: np.random.Generator, n: int = 3, near_power_limit: bool = True):
    """A random cascade state and constraint set where all argument families weigh in."""
    while True:
        r = rng.uniform(-2.0, 2.0, size=(n, 3)) * n
        x = FormationState(r, rng.normal(scale=0.3, size=(n, 3)))
        try:
            if pair_distances(x).min() > 1.2:
                break
        except Exception:
            continue
    nu = rng.normal(size=(len(pair_index(n)), 3)) * 10.0 ** rng.uniform(4, 8)
    # smoothing tied to the force scale, as in the closed-loop scenarios
    eps1 = 1e-2 * float(np.abs(nu).max())
    base = ConstraintParams(r_min=1.0, v_max=1.5, q_max=1.0, eps1=eps1, eps2=eps1**2)
    if not near_power_limit:
        return CascadeState(x, nu), replace(base, q_max=1e12)
    probe = evaluate(CascadeState(x, nu), CbfConfig(), SWAP_PARAMS, base)
    load = base.q_max - probe.Q
    others = np.concatenate([probe.R2, probe.V1]).min()
    q_max = load.max() + max(others, 0.0) + rng.uniform(-0.2, 0.3)
    return CascadeState(x, nu), replace(base, q_max=float(q_max))


# ---------------------------------------------------------------------------
# suites

def suite_averaging(rng: np.random.Generator, samples: int = 100) -> SuiteResult:
    params = SWAP_PARAMS
    worst = 0.0
    for _ in range(samples):
        p = rng.normal(size=(3, 3, 3)) * rng.uniform(1, 1e4)
        amps = AmplitudeSet(p)
        r = rng.normal(size=3) * 3
        for i, j in pair_index(3).pairs:
            avg = averaged_force_oracle(r, amps, (i, j), params, steps=600)
            expected = 0.5 * dipole_force_f(r, p[i, j], p[j, i])
            # cross-frequency terms average out, so the exact mean involves p_ij, p_ji only
            scale = np.linalg.norm(r) * np.max(np.linalg.norm(p, axis=-1)) ** 2
            worst = max(worst, np.linalg.norm(avg - expected) / scale)
    return _result("averaging", worst, 1e-9)


def suite_allocation(rng: np.random.Generator, samples: int = 10_000) -> SuiteResult:
    r, f = random_vectors(rng, samples)
    worst = 0.0
    for rk, fk in zip(r, f):
        c1, c2 = amplitude_pair(rk, fk)
        worst = max(worst, np.linalg.norm(dipole_force_f(rk, c1, c2) - fk) / (1 + np.linalg.norm(fk)))
    return _result("allocation round trip", worst, 1e-9)


def suite_magnitudes(rng: np.random.Generator, samples: int = 2_000) -> SuiteResult:
    r, f = random_vectors(rng, samples, degenerate=False)
    worst = 0.0
    for rk, fk in zip(r, f):
        c1, c2 = amplitude_pair(rk, fk)
        n1, n2 = c1 @ c1, c2 @ c2
        worst = max(worst, abs(n1 - n2) / n1)
        # exact orthogonality in floating point: r on a coordinate axis
        axis = rng.integers(3)
        ra = np.zeros(3)
        ra[axis] = np.linalg.norm(rk)
        g = fk.copy()
        g[axis] = 0.0
        c1, c2 = amplitude_pair(ra, g)
        n1, n2 = c1 @ c1, c2 @ c2
        worst = max(worst, abs(n1 - 2 * n2) / n1)
    return _result("amplitude magnitudes", worst, 1e-10)


def suite_power_bound(rng: np.random.Generator, samples: int = 100_000) -> SuiteResult:
    r, f = random_vectors(rng, samples)
    eps1, eps2 = 1e-3, 1e-3
    worst_gap = np.inf
    ordered = True
    for rk, fk in zip(r, f):
        c1, c2 = amplitude_pair(rk, fk)
        bound = psi(rk, fk, eps1, eps2)
        worst_gap = min(worst_gap, bound - c1 @ c1)
        ordered &= bool(c1 @ c1 >= c2 @ c2 * (1 - 1e-12))
    passed = worst_gap > 0 and ordered
    return SuiteResult("power bound", passed, worst_gap, f"min(psi - |c1|^2)={worst_gap:.3g} ordered={ordered}")


def lie_derivatives_fd(cascade: CascadeState, cfg: CbfConfig, params: PhysicalParams,
                       constraints: ConstraintParams) -> tuple[float, np.ndarray]:
    """Finite-difference Lie derivatives of ``h`` along the drift and the inputs.

    Also returns ``sum |dh/dy_k * ydot_k|``, the scale of the drift term.

    Arguments reach 1e6 while rho is 10, so differencing ``h`` directly leaves no
    usable step.  Each argument is differenced on its own (five-point stencil) and
    the results are combined with soft-min weights ``softmax(-rho * a)``.
    """
    n = cascade.x.n
    y = cascade.flat()

    def args_at(z):
        return evaluate(CascadeState.from_flat(z, n), cfg, params, constraints).args

    x = cascade.x
    drift_dir = np.concatenate([x.v.ravel(), accelerations(x, cascade.nu, params).ravel(),
                                -cfg.a * cascade.nu.ravel()])
    nu_scale = max(np.abs(cascade.nu).max(), 1.0)
    steps = np.concatenate([np.full(6 * n, 1e-4), np.full(cascade.nu.size, 1e-4 * nu_scale)])

    def column(k, step):
        e = np.zeros_like(y)
        e[k] = step
        return (8 * (args_at(y + e) - args_at(y - e)) - (args_at(y + 2 * e) - args_at(y - 2 * e))) / (12 * step)

    jac = np.array([column(k, steps[k]) for k in range(y.size)])
    # R2 and V1 are affine in nu, so a full-scale step is exact and beats roundoff
    affine = 2 * len(pair_index(n))
    for k in range(6 * n, y.size):
        jac[k, :affine] = column(k, nu_scale)[:affine]
    a = args_at(y)
    w = np.exp(-cfg.rho * (a - a.min()))
    grad = jac @ (w / w.sum())
    lfh = float(grad @ drift_dir)
    lgh = cfg.a * grad[6 * n:]
    return lfh, lgh, float(np.abs(grad * drift_dir).sum())


def lie_derivative_errors(cascade: CascadeState, cfg: CbfConfig, params: PhysicalParams,
                          constraints: ConstraintParams) -> tuple[float, float]:
    """Relative errors of the analytic ``(L_phi h, L_G h)`` against finite differences.

    ``L_phi h`` is a sum of terms that may cancel, so its error is taken relative
    to the sum of their magnitudes.
    """
    ev = evaluate(cascade, cfg, params, constraints)
    lfh, lgh = ev.lie_derivatives(cascade.nu, cfg.a)
    fd_lfh, fd_lgh, lf_scale = lie_derivatives_fd(cascade, cfg, params, constraints)
    return (abs(lfh - fd_lfh) / max(lf_scale, 1e-300),
            float(np.linalg.norm(lgh - fd_lgh) / max(np.linalg.norm(fd_lgh), 1e-300)))


def suite_gradients(rng: np.random.Generator, samples: int = 100) -> SuiteResult:
    cfg = CbfConfig()
    worst = 0.0
    for _ in range(samples):
        cascade, constraints = random_cascade(rng)
        worst = max(worst, *lie_derivative_errors(cascade, cfg, SWAP_PARAMS, constraints))
    return _result("Lie derivative gradients", worst, 1e-5)


def projection_oracle(lfh: float, lgh: np.ndarray, h: float, mu_d: np.ndarray,
                      cfg: CbfConfig) -> tuple[np.ndarray, float]:
    """Euclidean projection onto ``{b >= 0}`` after the change of variables ``z = sqrt(gamma) eta``."""
    g = np.concatenate([lgh, [h / np.sqrt(cfg.gamma_slack)]])
    z0 = np.concatenate([mu_d, [0.0]])
    rhs = -(lfh + cfg.alpha_gain * h)
    gap = rhs - g @ z0
    z = z0 if gap <= 0 else z0 + gap / (g @ g) * g
    return z[:-1], z[-1] / np.sqrt(cfg.gamma_slack)


def suite_filter(rng: np.random.Generator, samples: int = 200) -> SuiteResult:
    worst = 0.0
    worst_b = 0.0
    exact = True
    for _ in range(samples):
        cfg = CbfConfig(gamma_slack=10.0 ** rng.uniform(0, 40))
        lgh = rng.normal(size=9) * 10.0 ** rng.uniform(-3, 1)
        mu_d = rng.normal(size=9) * 10.0 ** rng.uniform(0, 8)
        h = rng.uniform(0, 5)
        lfh = rng.normal() * 10.0 ** rng.uniform(-2, 6)
        mu, eta, lam, omega = solve_filter(lfh, lgh, h, mu_d, cfg)
        mu_o, eta_o = projection_oracle(lfh, lgh, h, mu_d, cfg)
        scale = 1.0 + np.linalg.norm(mu_d) + abs(lfh) / max(np.linalg.norm(lgh), 1e-300)
        worst = max(worst, np.linalg.norm(mu - mu_o) / scale)
        b = constraint_value(lfh, lgh, h, mu, eta, cfg)
        worst_b = max(worst_b, -b / (1 + abs(lfh) + abs(lgh @ mu_d)))
        if omega >= 0:
            exact &= bool(np.array_equal(mu, mu_d))
    passed = worst <= 1e-7 and worst_b <= 1e-9 and exact
    return SuiteResult("filter optimality", passed, 1e-7 - worst,
                       f"worst={worst:.3g} tol=1e-07 max(-b)={worst_b:.3g} inactive-exact={exact}")


def suite_rk4_order(rng: np.random.Generator) -> SuiteResult:
    params = SWAP_PARAMS
    x = FormationState(rng.uniform(-3, 3, size=(3, 3)) + np.arange(3)[:, None] * 3,
                       rng.normal(scale=0.2, size=(3, 3)))
    nu = rng.normal(size=(3, 3)) * 5e8

    def rhs(y):
        s = FormationState.from_flat(y)
        return np.concatenate([s.v.ravel(), accelerations(s, nu, params).ravel()])

    def integrate(dt, horizon=2.0):
        y = x.flat()
        for _ in range(int(round(horizon / dt))):
            y = rk4(rhs, y, dt)
        return y

    ref = integrate(1e-3)
    errors = [np.linalg.norm(integrate(dt) - ref) for dt in (0.2, 0.1, 0.05)]
    order = min(np.log2(errors[0] / errors[1]), np.log2(errors[1] / errors[2]))
    return SuiteResult("RK4 order", bool(order >= 3.8), order - 3.8, f"observed order={order:.3f} min=3.8")


def suite_momentum(rng: np.random.Generator, steps: int = 1000) -> SuiteResult:
    from .scenario import swap_scenario

    sc = swap_scenario(v0=rng.normal(scale=0.05, size=(3, 3)))
    ctl = Controller(sc)
    y = sc.initial().flat()
    p0 = sc.params.m * y[9:18].reshape(3, 3).sum(axis=0)
    ref = sc.params.m * np.abs(y[9:18]).sum()
    for _ in range(steps):
        y = rk4(ctl.rhs, y, sc.dt)
    p1 = sc.params.m * y[9:18].reshape(3, 3).sum(axis=0)
    return _result("momentum drift", float(np.linalg.norm(p1 - p0) / ref), 1e-10, " rel")


def suite_full_fidelity(rng: np.random.Generator) -> SuiteResult:
    from .scenario import swap_scenario

    sc = swap_scenario()
    ctl = Controller(sc)
    x0 = sc.initial().x
    cascade = CascadeState(x0, ctl.planner.nu_desired(x0) * rng.uniform(0.05, 0.2))
    log = run_full(sc, sc.params.period, cascade=cascade, log_every=50)
    last = log.data[-1]
    avg = last[[c.startswith("accavg") for c in log.columns]]
    model = last[[c.startswith("accmodel") for c in log.columns]]
    err = np.linalg.norm(avg - model) / np.linalg.norm(model)
    return _result("full-fidelity period average", float(err), 0.02, " rel")


SUITES: dict[str, Callable[[np.random.Generator], SuiteResult]] = {
    "averaging": suite_averaging,
    "allocation": suite_allocation,
    "magnitudes": suite_magnitudes,
    "power_bound": suite_power_bound,
    "gradients": suite_gradients,
    "filter": suite_filter,
    "rk4_order": suite_rk4_order,
    "momentum": suite_momentum,
    "full_fidelity": suite_full_fidelity,
}


def run_suites(seed: int = 0, names: list[str] | None = None) -> list[SuiteResult]:
    results = []
    for k, (name, suite) in enumerate(SUITES.items()):
        if names is not None and name not in names:
            continue
        rng = np.random.default_rng([seed, k])
        results.append(suite(rng))
    return results
