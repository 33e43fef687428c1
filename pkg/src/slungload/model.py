"""Rigid-pendulum model of a multirotor carrying a cable-suspended payload.

State layout (13 entries)::

    [x, y, z, th_l, phi_l, xd, yd, zd, thd_l, phid_l, th, phi, F]

The first five entries are the generalized coordinates ``q`` (UAV position
and the two cable angles), the next five their rates, and the last three the
internal states of the flight controller (pitch, roll, collective thrust).
Heading is fixed at zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

NX = 13
NU = 3
NQ = 5

# state indices
IX, IY, IZ, ITH_L, IPHI_L = 0, 1, 2, 3, 4
IVX, IVY, IVZ, IDTH_L, IDPHI_L = 5, 6, 7, 8, 9
ITH, IPHI, IF = 10, 11, 12

POS = slice(0, 3)
ANGLES = slice(3, 5)
QPOS = slice(0, 5)
QVEL = slice(5, 10)
VEL = slice(5, 8)
RATES = slice(8, 10)
FCU = slice(10, 13)

STATE_NAMES = (
    "x", "y", "z", "th_l", "phi_l",
    "xd", "yd", "zd", "thd_l", "phid_l",
    "th", "phi", "F",
)

# |th_l| must stay below pi/2 - EPS_SING
EPS_SING = 0.1


class SingularConfiguration(ValueError):
    """Raised when the cable pitch angle approaches the mass-matrix singularity."""


@dataclass(frozen=True)
class SystemParams:
    """Physical constants of the UAV, payload and flight-controller model.

    Drag coefficients are linear in velocity, in N s/m.
    """

    m_uav: float = 3.5
    m_l: float = 1.5
    l: float = 2.0
    d_uav: float = 0.1
    d_l: float = 0.1
    g: float = 9.81
    fcu_gains: tuple = (1.0, 1.0, 1.0)
    fcu_taus: tuple = (0.2, 0.2, 0.05)

    def __post_init__(self):
        object.__setattr__(self, "fcu_gains", tuple(float(v) for v in self.fcu_gains))
        object.__setattr__(self, "fcu_taus", tuple(float(v) for v in self.fcu_taus))
        if len(self.fcu_gains) != 3 or len(self.fcu_taus) != 3:
            raise ValueError("fcu_gains and fcu_taus need exactly 3 entries (th, phi, F)")
        if min(self.m_uav, self.m_l, self.l) <= 0 or min(self.fcu_taus) <= 0:
            raise ValueError("masses, cable length and FCU time constants must be positive")
        if self.d_uav < 0 or self.d_l < 0:
            raise ValueError("drag coefficients must be non-negative")
        if self.g <= 0:
            raise ValueError("g must be positive")

    @property
    def total_mass(self) -> float:
        return self.m_uav + self.m_l

    @property
    def hover_thrust(self) -> float:
        return self.total_mass * self.g

    def with_(self, **changes) -> "SystemParams":
        return replace(self, **changes)


@dataclass(frozen=True, eq=False)
class LinearModel:
    """Continuous-time LTI model ``xdot = A x + B u`` in hover-deviation coordinates."""

    A: np.ndarray
    B: np.ndarray
    params: SystemParams = field(default_factory=SystemParams)


def rot_x(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rot_body_to_world(phi, theta, psi):
    """Z-Y-X Tait-Bryan rotation ``Rz(psi) Ry(theta) Rx(phi)``."""
    return rot_z(psi) @ rot_y(theta) @ rot_x(phi)


def rot_load_to_world(phi_l, theta_l):
    """Cable frame rotation ``Rx(phi_l) Ry(theta_l)``."""
    return rot_x(phi_l) @ rot_y(theta_l)


def payload_position(s_uav, theta_l, phi_l, l):
    s_uav = np.asarray(s_uav, dtype=float)
    return rot_load_to_world(phi_l, theta_l) @ np.array([0.0, 0.0, -l]) + s_uav


def _cable_terms(theta_l, phi_l, l):
    # r = l * (-s_th, s_ph c_th, -c_ph c_th) is the payload offset from the UAV.
    st, ct = np.sin(theta_l), np.cos(theta_l)
    sp, cp = np.sin(phi_l), np.cos(phi_l)
    J = l * np.array([
        [-ct, 0.0],
        [-sp * st, cp * ct],
        [cp * st, sp * ct],
    ])
    # second derivatives of r: d2/dth2, d2/dth dphi, d2/dphi2
    H_tt = l * np.array([st, -sp * ct, cp * ct])
    H_tp = l * np.array([0.0, -cp * st, -sp * st])
    H_pp = l * np.array([0.0, -sp * ct, cp * ct])
    return J, H_tt, H_tp, H_pp


def check_admissible(theta_l):
    if not np.isfinite(theta_l) or abs(theta_l) >= np.pi / 2 - EPS_SING:
        raise SingularConfiguration(
            f"cable angle th_l={theta_l:.4g} rad outside |th_l| < pi/2 - {EPS_SING}"
        )


def eom_terms(q, qd, params: SystemParams):
    """Mass matrix and lumped bias term of the coupled UAV-payload system.

    Returns ``(M, h)`` such that ``M qdd + h = f_con`` with
    ``h = (C + D) qd + g``. The payload acceleration is written as
    ``sdd + J qdd_l + a_c``, which gives the Coriolis part directly as
    ``[m_l a_c; m_l J^T a_c]``. Drag on the payload is the generalized force
    of ``-d_l * sdot_l`` along the payload velocity.
    """
    q = np.asarray(q, dtype=float)
    qd = np.asarray(qd, dtype=float)
    check_admissible(q[3])
    m_u, m_l, l, g = params.m_uav, params.m_l, params.l, params.g

    J, H_tt, H_tp, H_pp = _cable_terms(q[3], q[4], l)

    M = np.empty((5, 5))
    M[:3, :3] = (m_u + m_l) * np.eye(3)
    M[:3, 3:] = m_l * J
    M[3:, :3] = m_l * J.T
    M[3:, 3:] = m_l * (J.T @ J)

    dth, dph = qd[3], qd[4]
    a_c = H_tt * dth**2 + 2.0 * H_tp * dth * dph + H_pp * dph**2

    G = np.hstack([np.eye(3), J])
    D = params.d_l * (G.T @ G)
    D[:3, :3] += params.d_uav * np.eye(3)

    grav = np.empty(5)
    grav[:3] = (0.0, 0.0, (m_u + m_l) * g)
    grav[3:] = m_l * g * J[2]

    h = np.concatenate([m_l * a_c, m_l * (J.T @ a_c)]) + D @ qd + grav
    return M, h


def thrust_force(theta, phi, F):
    """World-frame thrust vector for body tilt (theta, phi) and heading 0."""
    return F * np.array([np.sin(theta) * np.cos(phi), -np.sin(phi), np.cos(theta) * np.cos(phi)])


def fcu_dynamics(x_a, u, params: SystemParams):
    K = np.asarray(params.fcu_gains)
    tau = np.asarray(params.fcu_taus)
    return (K * np.asarray(u, dtype=float) - np.asarray(x_a, dtype=float)) / tau


def nonlinear_dynamics(x, u, params: SystemParams):
    """Time derivative of the full 13-entry state (absolute coordinates)."""
    x = np.asarray(x, dtype=float)
    q, qd = x[QPOS], x[QVEL]
    M, h = eom_terms(q, qd, params)
    f = np.zeros(5)
    f[:3] = thrust_force(x[ITH], x[IPHI], x[IF])
    qdd = np.linalg.solve(M, f - h)
    return np.concatenate([qd, qdd, fcu_dynamics(x[FCU], u, params)])


def kinetic_energy(x, params: SystemParams):
    x = np.asarray(x, dtype=float)
    J, *_ = _cable_terms(x[ITH_L], x[IPHI_L], params.l)
    v_uav = x[VEL]
    v_l = v_uav + J @ x[RATES]
    return 0.5 * (params.m_uav * v_uav @ v_uav + params.m_l * v_l @ v_l)


def potential_energy(x, params: SystemParams):
    x = np.asarray(x, dtype=float)
    s_l = payload_position(x[POS], x[ITH_L], x[IPHI_L], params.l)
    return params.g * (params.m_uav * x[IZ] + params.m_l * s_l[2])


def hover_state(params: SystemParams, position=(0.0, 0.0, 0.0)):
    """Absolute hover state with the UAV at ``position``."""
    x = np.zeros(NX)
    x[POS] = position
    x[IF] = params.fcu_gains[2] * hover_input(params)[2]
    return x


def hover_input(params: SystemParams):
    return np.array([0.0, 0.0, params.hover_thrust / params.fcu_gains[2]])


def to_deviation(x, params: SystemParams):
    """Absolute state -> hover-deviation state (only the thrust entry shifts)."""
    x = np.array(x, dtype=float)
    x[..., IF] -= params.hover_thrust
    return x


def from_deviation(x, params: SystemParams):
    x = np.array(x, dtype=float)
    x[..., IF] += params.hover_thrust
    return x


def input_to_deviation(u, params: SystemParams):
    return np.asarray(u, dtype=float) - hover_input(params)


def input_from_deviation(u, params: SystemParams):
    return np.asarray(u, dtype=float) + hover_input(params)


def linearize_hover(params: SystemParams) -> LinearModel:
    """Analytic Jacobian of :func:`nonlinear_dynamics` at the hover equilibrium.

    At hover all velocity-quadratic terms vanish and ``qdd = 0``, so only
    the gravity stiffness of the cable angles, drag, and the thrust
    tilt/magnitude derivatives survive.
    """
    m_l, l, g = params.m_l, params.l, params.g
    M0, _ = eom_terms(np.zeros(5), np.zeros(5), params)
    J0, *_ = _cable_terms(0.0, 0.0, l)
    G0 = np.hstack([np.eye(3), J0])
    D0 = params.d_l * (G0.T @ G0)
    D0[:3, :3] += params.d_uav * np.eye(3)

    stiffness = np.diag([0.0, 0.0, 0.0, m_l * g * l, m_l * g * l])
    F0 = params.hover_thrust
    dthrust = np.zeros((5, 3))
    dthrust[0, 0] = F0
    dthrust[1, 1] = -F0
    dthrust[2, 2] = 1.0

    A = np.zeros((NX, NX))
    A[QPOS, QVEL] = np.eye(5)
    A[QVEL, QPOS] = -np.linalg.solve(M0, stiffness)
    A[QVEL, QVEL] = -np.linalg.solve(M0, D0)
    A[QVEL, FCU] = np.linalg.solve(M0, dthrust)
    tau = np.asarray(params.fcu_taus)
    A[FCU, FCU] = np.diag(-1.0 / tau)

    B = np.zeros((NX, NU))
    B[FCU, :] = np.diag(np.asarray(params.fcu_gains) / tau)
    return LinearModel(A=A, B=B, params=params)


def discretize(model: LinearModel, dt: float):
    """Forward-Euler discretization ``(I + dt A, dt B)``."""
    if dt < 0:
        raise ValueError("dt must be non-negative")
    n = model.A.shape[0]
    return np.eye(n) + dt * model.A, dt * model.B
