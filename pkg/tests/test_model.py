import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import expm

from slungload.model import (
    EPS_SING, IF, NX, SingularConfiguration, SystemParams, discretize, eom_terms, fcu_dynamics,
    hover_input, hover_state, kinetic_energy, linearize_hover, nonlinear_dynamics,
    payload_position, potential_energy, rot_body_to_world, rot_load_to_world, to_deviation,
)
from slungload.simulator import rk4_step

from .oracles import el_accelerations, fd_jacobian, random_state

P = SystemParams()
angles = st.floats(-3.0, 3.0, allow_nan=False)


def energy(x, p):
    return kinetic_energy(x, p) + potential_energy(x, p)


# ---------------------------------------------------------------- rotations

def test_rot_body_identity_and_axis():
    assert np.allclose(rot_body_to_world(0, 0, 0), np.eye(3))
    assert np.allclose(rot_body_to_world(0, np.pi / 2, 0) @ [0, 0, 1], [1, 0, 0], atol=1e-15)
    assert abs(np.linalg.det(rot_body_to_world(0.3, -0.2, 1.0)) - 1) < 1e-12


def test_rot_load_single_axis():
    l, th = 2.0, 0.3
    assert np.allclose(rot_load_to_world(0, 0), np.eye(3))
    v = rot_load_to_world(0.0, th) @ [0, 0, -l]
    assert np.allclose(v, [-l * np.sin(th), 0, -l * np.cos(th)], atol=1e-15)
    R = rot_load_to_world(0.4, 0.7)
    assert np.allclose(R.T @ R, np.eye(3), atol=1e-12)


@given(angles, angles, angles)
def test_rotations_orthonormal(a, b, c):
    for R in (rot_body_to_world(a, b, c), rot_load_to_world(a, b)):
        assert np.max(np.abs(R.T @ R - np.eye(3))) < 1e-12
        assert abs(np.linalg.det(R) - 1) < 1e-12


# ---------------------------------------------------------------- kinematics

def test_payload_position_examples():
    assert np.allclose(payload_position([0, 0, 5], 0, 0, 2), [0, 0, 3])
    assert np.allclose(payload_position([1, 1, 5], np.pi / 2, 0, 2), [-1, 1, 5], atol=1e-15)


@given(angles, angles, st.floats(0.1, 10.0))
def test_payload_cable_is_taut(th, ph, l):
    s = np.array([1.0, -2.0, 3.0])
    assert abs(np.linalg.norm(payload_position(s, th, ph, l) - s) - l) < 1e-12


# ---------------------------------------------------------------- params

@pytest.mark.parametrize("kw", [
    {"m_uav": 0}, {"m_l": -1}, {"l": 0}, {"d_l": -0.1}, {"d_uav": -1},
    {"fcu_taus": (0.2, 0.0, 0.05)}, {"fcu_gains": (1, 1)},
])
def test_params_validation(kw):
    with pytest.raises(ValueError):
        SystemParams(**kw)


# ---------------------------------------------------------------- EOM

def test_mass_matrix_translational_block():
    M, _ = eom_terms(np.zeros(5), np.zeros(5), P)
    assert np.allclose(M[:3, :3], (P.m_uav + P.m_l) * np.eye(3))


@given(st.floats(-np.pi / 2 + EPS_SING + 1e-6, np.pi / 2 - EPS_SING - 1e-6), angles)
def test_mass_matrix_symmetric_positive(th, ph):
    M, _ = eom_terms(np.array([0, 0, 0, th, ph]), np.zeros(5), P)
    assert np.max(np.abs(M - M.T)) < 1e-12
    assert np.linalg.eigvalsh(M).min() > 0


@pytest.mark.parametrize("th", [np.pi / 2 - EPS_SING, -np.pi / 2, 2.0, np.nan])
def test_singular_configuration(th):
    with pytest.raises(SingularConfiguration):
        eom_terms(np.array([0, 0, 0, th, 0.0]), np.zeros(5), P)
    x = hover_state(P)
    x[3] = th
    with pytest.raises(SingularConfiguration):
        nonlinear_dynamics(x, hover_input(P), P)


def test_euler_lagrange_oracle_20_samples():
    rng = np.random.default_rng(1)
    for _ in range(20):
        x = random_state(rng)
        u = rng.normal(size=3)
        qdd = nonlinear_dynamics(x, u, P)[5:10]
        ref = el_accelerations(x, P)
        assert np.max(np.abs(qdd - ref)) < 1e-6


def test_hover_is_equilibrium():
    x = hover_state(P, (1.0, 2.0, 3.0))
    assert np.max(np.abs(nonlinear_dynamics(x, hover_input(P), P))) < 1e-12


def test_free_fall():
    p = P.with_(d_uav=0.0, d_l=0.0)
    x = np.zeros(NX)
    xd = nonlinear_dynamics(x, np.zeros(3), p)
    assert xd[7] == pytest.approx(-p.g, abs=1e-12)
    assert np.allclose(xd[8:10], 0.0, atol=1e-12)


def _energy_rate(x, p):
    # directional derivative of T + V along the returned state derivative
    f = nonlinear_dynamics(x, np.zeros(3), p)
    h = 1e-6
    return (energy(x + h * f, p) - energy(x - h * f, p)) / (2 * h)


def test_energy_rate_zero_without_drag_and_thrust():
    p = P.with_(d_uav=0.0, d_l=0.0)
    rng = np.random.default_rng(2)
    for _ in range(20):
        x = random_state(rng)
        x[IF] = 0.0
        # central difference error is O(h^2) on an O(10-100) scale
        assert abs(_energy_rate(x, p)) < 1e-6


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_drag_dissipates_energy(seed):
    x = random_state(np.random.default_rng(seed))
    x[IF] = 0.0
    assert _energy_rate(x, P) <= 1e-6


def test_energy_conserved_rk4_10s():
    p = P.with_(d_uav=0.0, d_l=0.0)
    x = np.zeros(NX)
    x[3:5] = (0.6, -0.4)
    x[5:10] = (1.0, -0.5, 0.3, 0.8, -1.2)
    e0 = energy(x, p)
    scale = abs(kinetic_energy(x, p)) + abs(potential_energy(x, p))
    worst = 0.0
    for k in range(10000):
        x = rk4_step(x, np.zeros(3), 1e-3, p)
        if k % 100 == 99:
            worst = max(worst, abs(energy(x, p) - e0))
    assert worst / scale < 1e-6


def test_energy_non_increasing_with_drag():
    x = np.zeros(NX)
    x[3:5] = (0.5, 0.3)
    x[5:10] = (2.0, 0.0, 1.0, 0.5, -0.5)
    e = [energy(x, P)]
    for _ in range(2000):
        x = rk4_step(x, np.zeros(3), 1e-3, P)
        e.append(energy(x, P))
    assert np.all(np.diff(e) <= 1e-9)


# ---------------------------------------------------------------- FCU

def test_fcu_examples():
    K, tau = np.array(P.fcu_gains), np.array(P.fcu_taus)
    u = np.array([0.1, -0.2, 40.0])
    assert np.allclose(fcu_dynamics(K * u, u, P), 0.0)
    c = np.array([0.3, 0.1, 12.0])
    assert np.allclose(fcu_dynamics(c, np.zeros(3), P), -c / tau)


def test_fcu_step_response_one_tau():
    p = P.with_(fcu_gains=(2.0, 0.5, 1.5))
    u = np.array([0.2, -0.1, 30.0])
    out = []
    for i, tau in enumerate(p.fcu_taus):
        n = 2000
        h = tau / n
        xa = np.zeros(3)
        for _ in range(n):
            k1 = fcu_dynamics(xa, u, p)
            k2 = fcu_dynamics(xa + h / 2 * k1, u, p)
            k3 = fcu_dynamics(xa + h / 2 * k2, u, p)
            k4 = fcu_dynamics(xa + h * k3, u, p)
            xa = xa + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        out.append(xa[i])
    expected = np.array(p.fcu_gains) * u * (1 - np.exp(-1))
    assert np.allclose(out, expected, atol=1e-6)


# ---------------------------------------------------------------- linearization

def test_linearization_matches_finite_differences():
    lm = linearize_hover(P)
    x0 = hover_state(P)
    u0 = hover_input(P)
    A_fd, B_fd = fd_jacobian(lambda x, u: nonlinear_dynamics(x, u, P), x0, u0, 1e-6)
    assert np.max(np.abs(lm.A - A_fd)) < 1e-5
    assert np.max(np.abs(lm.B - B_fd)) < 1e-5


@pytest.mark.parametrize("p", [P.with_(m_l=0.5, l=1.0), P.with_(m_l=1.0, l=3.0, d_l=0.4),
                               P.with_(fcu_gains=(1.2, 0.8, 1.1))])
def test_linearization_other_params(p):
    lm = linearize_hover(p)
    A_fd, B_fd = fd_jacobian(lambda x, u: nonlinear_dynamics(x, u, p), hover_state(p),
                             hover_input(p), 1e-6)
    assert np.max(np.abs(lm.A - A_fd)) < 1e-5
    assert np.max(np.abs(lm.B - B_fd)) < 1e-5


def test_linearization_structure():
    lm = linearize_hover(P)
    assert np.array_equal(lm.A[0:3, 5:8], np.eye(3))
    mask = np.ones(NX, dtype=bool)
    mask[5:8] = False
    assert np.all(lm.A[0:3][:, mask] == 0)
    assert np.all(lm.B[0:5] == 0)


def test_deviation_maps_hover_to_zero():
    x = to_deviation(hover_state(P), P)
    assert np.all(x == 0)
    lm = linearize_hover(P)
    assert np.all(lm.A @ x == 0)


def test_discretize_examples():
    lm = linearize_hover(P)
    Ad, Bd = discretize(lm, 0.0)
    assert np.array_equal(Ad, np.eye(NX)) and np.all(Bd == 0)
    Ad, Bd = discretize(lm, 0.01)
    assert np.array_equal(Ad, np.eye(NX) + 0.01 * lm.A)
    assert np.array_equal(Bd, 0.01 * lm.B)
    bound = np.linalg.norm(lm.A, 2) ** 2 * 0.01**2
    assert np.max(np.abs(Ad - expm(lm.A * 0.01))) < bound
    with pytest.raises(ValueError):
        discretize(lm, -0.1)
