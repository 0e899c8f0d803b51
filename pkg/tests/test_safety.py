import numpy as np
import pytest
from scipy.optimize import minimize

from emff.model import ConstraintParams, FormationState, PhysicalParams
from emff.safety import (CascadeState, CbfConfig, RegularityError, argument_labels, barrier_R,
                         barrier_V, constraint_value, evaluate, soft_min, soft_min_weights,
                         solve_filter)
from emff.validation import lie_derivative_errors, projection_oracle, random_cascade

PARAMS = PhysicalParams(m=15.0, n_turns=400, coil_area=0.1963, coil_resistance=0.3673,
                        coil_inductance=0.12, omega_over_pi=(200, 400, 600))


def test_soft_min_value_and_bounds():
    assert soft_min([1.0, 1.0], 10.0) == pytest.approx(1.0 - np.log(2.0) / 10.0, abs=1e-12)
    assert soft_min([1.0, 1.0], 10.0) == pytest.approx(0.930685, abs=1e-6)
    rng = np.random.default_rng(0)
    for _ in range(50):
        z = rng.normal(size=7) * 5
        s = soft_min(z, 10.0)
        assert z.min() - np.log(z.size) / 10.0 - 1e-12 <= s <= z.min() + 1e-12


def test_soft_min_survives_large_arguments():
    assert soft_min([1e6, 2e6, 3.0], 10.0) == pytest.approx(3.0)
    w = soft_min_weights([1e6, 3.0, 3.0], 10.0)
    assert np.allclose(w, [0.0, 0.5, 0.5])


def test_soft_min_weights_are_its_gradient():
    z = np.array([0.3, 0.5, 0.2, 1.1])
    step = 1e-6
    fd = [(soft_min(z + step * e, 10.0) - soft_min(z - step * e, 10.0)) / (2 * step) for e in np.eye(4)]
    assert np.allclose(soft_min_weights(z, 10.0), fd, rtol=1e-7)


def test_raw_barriers():
    x = FormationState([[0.0, 0, 0], [2.0, 0, 0]], [[0.0, 0, 0], [0, 0.5, 0]])
    assert barrier_R(x, (0, 1), 1.0) == pytest.approx(1.5)
    assert barrier_V(x, (0, 1), 1.0) == pytest.approx(0.375)


def test_argument_labels_order():
    labels = argument_labels(3)
    assert labels[:3] == ["R12_2", "R13_2", "R23_2"]
    assert labels[3:6] == ["V12_1", "V13_1", "V23_1"]
    assert labels[6:] == ["Q1", "Q2", "Q3"]


@pytest.mark.parametrize("near_power_limit", [True, False])
def test_lie_derivatives_match_finite_differences(near_power_limit):
    cfg = CbfConfig()
    rng = np.random.default_rng(11)
    for _ in range(15):
        cascade, constraints = random_cascade(rng, near_power_limit=near_power_limit)
        err_f, err_g = lie_derivative_errors(cascade, cfg, PARAMS, constraints)
        assert err_f <= 1e-5 and err_g <= 1e-5


def test_h_is_translation_invariant():
    rng = np.random.default_rng(12)
    cascade, constraints = random_cascade(rng)
    x = cascade.x
    moved = CascadeState(FormationState(x.r + 5.0, x.v - 0.1), cascade.nu)
    cfg = CbfConfig()
    assert evaluate(moved, cfg, PARAMS, constraints).h == pytest.approx(
        evaluate(cascade, cfg, PARAMS, constraints).h, rel=1e-12)


def random_filter_problem(rng):
    cfg = CbfConfig(gamma_slack=10.0 ** rng.uniform(0, 6))
    return (rng.normal() * 10, rng.normal(size=9), rng.uniform(0.1, 5), rng.normal(size=9) * 3, cfg)


def test_filter_matches_projection_oracle():
    rng = np.random.default_rng(13)
    for _ in range(200):
        lfh, lgh, h, mu_d, cfg = random_filter_problem(rng)
        mu, eta, _, _ = solve_filter(lfh, lgh, h, mu_d, cfg)
        mu_o, eta_o = projection_oracle(lfh, lgh, h, mu_d, cfg)
        assert np.allclose(mu, mu_o, atol=1e-9)
        assert eta == pytest.approx(eta_o, abs=1e-12)


def test_filter_matches_generic_solver():
    rng = np.random.default_rng(14)
    for _ in range(10):
        lfh, lgh, h, mu_d, cfg = random_filter_problem(rng)
        mu, eta, _, _ = solve_filter(lfh, lgh, h, mu_d, cfg)

        def cost(z):
            return 0.5 * np.sum((z[:-1] - mu_d) ** 2) + 0.5 * cfg.gamma_slack * z[-1] ** 2

        cons = {"type": "ineq", "fun": lambda z: constraint_value(lfh, lgh, h, z[:-1], z[-1], cfg)}
        res = minimize(cost, np.concatenate([mu_d, [0.0]]), constraints=[cons], method="SLSQP",
                       options={"ftol": 1e-14, "maxiter": 500})
        assert cost(np.concatenate([mu, [eta]])) <= res.fun + 1e-7 * (1 + res.fun)


def test_filter_constraint_holds_and_is_minimally_invasive():
    rng = np.random.default_rng(15)
    for _ in range(500):
        lfh, lgh, h, mu_d, cfg = random_filter_problem(rng)
        mu, eta, lam, omega = solve_filter(lfh, lgh, h, mu_d, cfg)
        assert constraint_value(lfh, lgh, h, mu, eta, cfg) >= -1e-9 * (1 + abs(lfh))
        if omega >= 0:
            assert np.array_equal(mu, mu_d) and eta == 0.0 and lam == 0.0
        else:
            assert constraint_value(lfh, lgh, h, mu, eta, cfg) == pytest.approx(0.0, abs=1e-9)
            assert lam > 0


def test_filter_irregular_point_raises():
    cfg = CbfConfig()
    with pytest.raises(RegularityError):
        solve_filter(-1.0, np.zeros(9), 0.0, np.zeros(9), cfg)


def test_power_barrier_tracks_q_max():
    rng = np.random.default_rng(16)
    cascade, constraints = random_cascade(rng, near_power_limit=False)
    cfg = CbfConfig()
    q = evaluate(cascade, cfg, PARAMS, constraints).Q
    looser = ConstraintParams(constraints.r_min, constraints.v_max, constraints.q_max + 10.0,
                              constraints.eps1, constraints.eps2)
    assert np.allclose(evaluate(cascade, cfg, PARAMS, looser).Q, q + 10.0)
