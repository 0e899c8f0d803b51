from fractions import Fraction

import numpy as np
import pytest

from emff.model import (ConstraintParams, DomainError, FormationState, PhysicalParams, accelerations,
                        build_B0, common_period, dipole_force_f, omega_fraction, pair_distances,
                        pair_index, state_matrices, zeta)


@pytest.fixture
def params():
    return PhysicalParams(15.0, 400, 0.1963, 0.3673, 0.12, (200, 400, 600))


def dipole_force_oracle(r, p, q):
    # gradient of the dipole energy, differentiated numerically
    def energy(rr):
        d = np.linalg.norm(rr)
        e = rr / d
        return (p @ q - 3 * (p @ e) * (q @ e)) / d**3

    g = np.zeros(3)
    for k in range(3):
        dr = np.zeros(3)
        dr[k] = 1e-6
        g[k] = (energy(r + dr) - energy(r - dr)) / 2e-6
    return g


def test_pair_index_order_and_labels():
    idx = pair_index(4)
    assert idx.pairs == ((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3))
    assert idx.index(3, 1) == 4
    assert idx.labels()[0] == "12"
    with pytest.raises(DomainError):
        idx.index(2, 2)


def test_dipole_force_matches_energy_gradient():
    rng = np.random.default_rng(1)
    for _ in range(20):
        r, p, q = rng.normal(size=(3, 3))
        # the force on the first dipole is -grad U, and f carries the 3/(4 pi) mu0 / |r|^4 scaling out
        expected = -dipole_force_oracle(r, p, q) * np.linalg.norm(r) ** 4 / 3.0
        assert np.allclose(dipole_force_f(r, p, q), expected, rtol=1e-6, atol=1e-8)


def test_dipole_force_symmetries():
    rng = np.random.default_rng(2)
    r, p, q = rng.normal(size=(3, 3))
    f = dipole_force_f(r, p, q)
    assert np.allclose(dipole_force_f(r, q, p), f)
    assert np.allclose(dipole_force_f(-r, p, q), -f)
    assert np.allclose(dipole_force_f(2 * r, p, q), f)  # depends on the direction of r only


def test_dipole_force_rejects_zero_separation():
    with pytest.raises(DomainError):
        dipole_force_f(np.zeros(3), np.ones(3), np.ones(3))


def test_incidence_columns_sum_to_zero():
    b0 = build_B0(5)
    assert b0.shape == (5, 10)
    assert np.all(b0.sum(axis=0) == 0)
    assert np.all(np.abs(b0).sum(axis=0) == 2)


def test_state_matrices_shape_and_beta(params):
    a, b = state_matrices(3, params)
    assert a.shape == (18, 18) and b.shape == (18, 9)
    assert params.beta == pytest.approx(1e-8)
    assert np.allclose(b[:9], 0)


def test_accelerations_conserve_momentum(params):
    rng = np.random.default_rng(3)
    x = FormationState(rng.normal(size=(4, 3)) * 4, np.zeros((4, 3)))
    nu = rng.normal(size=(6, 3)) * 1e8
    acc = accelerations(x, nu, params)
    assert np.allclose(acc.sum(axis=0), 0, atol=1e-15)


def test_zeta_scaling(params):
    x = FormationState([[0, 0, 0], [2, 0, 0]], np.zeros((2, 3)))
    assert np.allclose(zeta(x, [[16.0, 0, 0]]), [[1.0, 0, 0]])


def test_distance_guard():
    x = FormationState([[0, 0, 0], [0, 0, 1e-12], [1, 1, 1]], np.zeros((3, 3)))
    with pytest.raises(DomainError, match="satellites 1 and 2"):
        pair_distances(x)


def test_common_period_and_impedance(params):
    assert common_period([Fraction(200), Fraction(400), Fraction(600)]) == Fraction(1, 100)
    assert params.period == pytest.approx(0.01)
    assert params.impedance == pytest.approx([75.398, 150.797, 226.195], abs=1e-2)
    assert omega_fraction({"num": 3, "den": 2, "times_pi": True}) == Fraction(3, 2)


def test_parameter_validation():
    with pytest.raises(ValueError):
        PhysicalParams(15.0, 400, 0.1963, 0.3673, 0.12, (200, 200, 600))
    with pytest.raises(ValueError):
        ConstraintParams(r_min=-1, v_max=1, q_max=1)


def test_state_round_trip():
    rng = np.random.default_rng(4)
    x = FormationState(rng.normal(size=(3, 3)), rng.normal(size=(3, 3)))
    y = FormationState.from_flat(x.flat())
    assert np.array_equal(y.r, x.r) and np.array_equal(y.v, x.v)
    rel, vel = x.relative()
    assert np.allclose(rel[1], x.r[0] - x.r[2])
