"""Linear Kalman filter on the hover-linearized model.

Measurements are UAV position and the two FCU tilt angles. The model is
re-discretized with forward Euler at every predict call, so the filter
follows whatever loop timing it is driven with.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import NX, ITH_L, IPHI_L, IDTH_L, IDPHI_L, ITH, IPHI, LinearModel, discretize

NY = 5
MEASURED = (0, 1, 2, ITH, IPHI)

# (s_uav, q_l, s_uav', q_l', th, phi, F); the cable-rate entries are tuned up
# from 0.1 to 30 so the unmeasured cable states converge faster
DEFAULT_Q_DIAG = (1, 1, 1, 30, 30, 100, 100, 100000, 30, 30, 1, 1, 1)
DEFAULT_R_DIAG = (10, 10, 10, 10, 10)

MAX_INNOVATION_COND = 1e12


class IllConditionedInnovation(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True, eq=False)
class Estimate:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float))
        object.__setattr__(self, "cov", np.asarray(self.cov, dtype=float))


@dataclass(frozen=True, eq=False)
class NoiseConfig:
    Q: np.ndarray = field(default_factory=lambda: np.diag(np.asarray(DEFAULT_Q_DIAG, dtype=float)))
    R: np.ndarray = field(default_factory=lambda: np.diag(np.asarray(DEFAULT_R_DIAG, dtype=float)))

    def __post_init__(self):
        Q = np.asarray(self.Q, dtype=float)
        R = np.asarray(self.R, dtype=float)
        if Q.ndim == 1:
            Q = np.diag(Q)
        if R.ndim == 1:
            R = np.diag(R)
        if Q.shape != (NX, NX) or R.shape != (NY, NY):
            raise ValueError(f"Q must be {NX}x{NX} and R {NY}x{NY}")
        if np.min(np.linalg.eigvalsh(0.5 * (Q + Q.T))) < -1e-12:
            raise ValueError("Q must be positive semi-definite")
        if np.min(np.linalg.eigvalsh(0.5 * (R + R.T))) <= 0:
            raise ValueError("R must be positive definite")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)


def measurement_matrix():
    C = np.zeros((NY, NX))
    for row, idx in enumerate(MEASURED):
        C[row, idx] = 1.0
    return C


_C = measurement_matrix()


def _sym(P):
    return 0.5 * (P + P.T)


def predict(est: Estimate, u, dt, model: LinearModel, noise: NoiseConfig) -> Estimate:
    """Time update over ``dt`` seconds; process noise enters as ``dt * Q``."""
    if dt < 0:
        raise ValueError("dt must be non-negative")
    if dt == 0:
        return est
    Ad, Bd = discretize(model, dt)
    mean = Ad @ est.mean + Bd @ np.asarray(u, dtype=float)
    cov = _sym(Ad @ est.cov @ Ad.T + dt * noise.Q)
    return Estimate(mean, cov)


def kalman_update(mean, cov, y, C, R):
    """Generic measurement update with the Joseph-form covariance."""
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    P = np.atleast_2d(np.asarray(cov, dtype=float))
    C = np.atleast_2d(np.asarray(C, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    S = _sym(C @ P @ C.T + R)
    cond = np.linalg.cond(S)
    if not np.isfinite(cond) or cond > MAX_INNOVATION_COND:
        raise IllConditionedInnovation(f"innovation covariance condition number {cond:.3g}")
    K = np.linalg.solve(S, C @ P).T
    mean = mean + K @ (np.atleast_1d(np.asarray(y, dtype=float)) - C @ mean)
    I_KC = np.eye(P.shape[0]) - K @ C
    cov = _sym(I_KC @ P @ I_KC.T + K @ R @ K.T)
    return mean, cov


def update(est: Estimate, y, noise: NoiseConfig) -> Estimate:
    return Estimate(*kalman_update(est.mean, est.cov, y, _C, noise.R))


def estimate_payload_state(est: Estimate):
    """Cable angles and rates ``(th_l, phi_l, thd_l, phid_l)`` from the mean."""
    m = est.mean
    return m[ITH_L], m[IPHI_L], m[IDTH_L], m[IDPHI_L]


def observability_rank(model: LinearModel, C=None):
    C = _C if C is None else C
    n = model.A.shape[0]
    blocks = [C]
    for _ in range(n - 1):
        blocks.append(blocks[-1] @ model.A)
    return int(np.linalg.matrix_rank(np.vstack(blocks)))


class KalmanFilter:
    """Stateful wrapper used by the closed-loop simulator."""

    def __init__(self, model: LinearModel, noise: NoiseConfig, x0, P0=None):
        self.model = model
        self.noise = noise
        P0 = np.eye(NX) if P0 is None else np.asarray(P0, dtype=float)
        self.est = Estimate(np.asarray(x0, dtype=float).copy(), P0)

    def predict(self, u, dt):
        self.est = predict(self.est, u, dt, self.model, self.noise)
        return self.est

    def update(self, y):
        self.est = update(self.est, y, self.noise)
        return self.est
