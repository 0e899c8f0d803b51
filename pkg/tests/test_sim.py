from dataclasses import replace

import numpy as np
import pytest

from emff.model import FormationState, accelerations
from emff.safety import CascadeState
from emff.scenario import swap_scenario
from emff.sim import (Controller, SafeSetExit, check_initial, log_columns, rk4, run_averaged,
                      step_averaged)
from emff.validation import suite_momentum, suite_rk4_order

TARGET_R = np.array([[4.4, 5.2, 2.0], [3.3, 3.9, 1.5], [2.2, 2.6, 1.0]])


def test_rk4_exact_on_cubic():
    # RK4 integrates y' = 3 t^2 (as an autonomous system) without error
    rhs = lambda y: np.array([3.0 * y[1] ** 2, 1.0])
    y = np.array([0.0, 0.0])
    for _ in range(10):
        y = rk4(rhs, y, 0.1)
    assert y[0] == pytest.approx(1.0, abs=1e-13)


def test_rk4_order():
    result = suite_rk4_order(np.random.default_rng(1))
    assert result.passed, result.detail


def test_momentum_conserved_in_closed_loop():
    result = suite_momentum(np.random.default_rng(2), steps=300)
    assert result.passed, result.detail


def test_no_force_means_ballistic_motion():
    sc = swap_scenario()
    x = FormationState(sc.r0, np.full((3, 3), 0.01) * np.arange(3)[:, None])
    assert np.allclose(accelerations(x, np.zeros((3, 3)), sc.params), 0.0)

    def rhs(y):
        s = FormationState.from_flat(y)
        return np.concatenate([s.v.ravel(), accelerations(s, np.zeros((3, 3)), sc.params).ravel()])

    y = x.flat()
    for _ in range(100):
        y = rk4(rhs, y, 0.05)
    assert np.allclose(FormationState.from_flat(y).r, x.r + 5.0 * x.v)


def test_target_formation_is_an_equilibrium():
    sc = swap_scenario(r0=TARGET_R, duration=10.0, log_every=10)
    log = run_averaged(sc)
    r = log.select("r", "_m")[:, :9].reshape(-1, 3, 3)
    assert np.abs(r - TARGET_R).max() < 1e-3
    assert np.abs(log.meta["final"].nu).max() < 1e-3


def test_initial_state_is_safe():
    margins = check_initial(swap_scenario())
    assert margins["h"] > 0 and margins["R"] > 0 and margins["Q"] > 0


def test_unsafe_initial_state_rejected():
    r0 = swap_scenario().r0.copy()
    r0[1] = r0[0] + [0.5, 0.0, 0.0]
    with pytest.raises(SafeSetExit):
        run_averaged(swap_scenario(r0=r0, duration=0.1))


def test_unfiltered_swap_exceeds_power():
    sc = swap_scenario(use_filter=False, duration=5.0, log_every=100)
    with pytest.raises(SafeSetExit, match="Q"):
        run_averaged(sc)


def test_unfiltered_swap_collides():
    base = swap_scenario()
    sc = swap_scenario(use_filter=False, duration=60.0, log_every=100,
                        constraints=replace(base.constraints, q_max=1e15))
    with pytest.raises(SafeSetExit, match="'R'"):
        run_averaged(sc)


def test_nu_tracks_desired_at_rate_sigma_without_filter():
    sc = swap_scenario(use_filter=False, duration=0.5, log_every=10)
    log = run_averaged(sc, check_safety=False)
    nu = np.hstack([log.select(f"nu{p}") for p in ("12", "13", "23")])
    nud = np.hstack([log.select(f"nud{p}") for p in ("12", "13", "23")])
    gap = np.linalg.norm(nu - nud, axis=1)
    t = log.column("time_s")
    rate = -np.polyfit(t, np.log(gap), 1)[0]
    assert rate == pytest.approx(sc.cbf.sigma, rel=0.05)


def test_filtered_run_respects_decay_bound():
    sc = swap_scenario(duration=3.0, log_every=1)
    log = run_averaged(sc)
    h = log.column("h")
    t = log.column("time_s")
    assert np.all(h >= h[0] * np.exp(-sc.cbf.alpha_gain * t) - 1e-4)


def test_runs_are_deterministic():
    sc = swap_scenario(duration=0.3, log_every=5)
    assert np.array_equal(run_averaged(sc).data, run_averaged(sc).data)


def test_step_keeps_translation():
    sc = swap_scenario(duration=0.1)
    ctl = Controller(sc)
    cascade = sc.initial()
    shifted = CascadeState(FormationState(cascade.x.r + 10.0, cascade.x.v), cascade.nu)
    a = step_averaged(cascade, sc.dt, ctl)
    b = step_averaged(shifted, sc.dt, ctl)
    assert np.allclose(a.x.r + 10.0, b.x.r, atol=1e-12)
    assert np.allclose(a.nu, b.nu, rtol=1e-8)


def test_log_layout():
    sc = swap_scenario(duration=0.05, log_every=1)
    log = run_averaged(sc)
    assert log.data.shape == (6, len(log_columns(3)))
    assert log.columns[0] == "time_s"
