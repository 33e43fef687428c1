"""Incremental MPC tracking the payload position.

The prediction model is the forward-Euler discretization of the hover
linearization, augmented with the previous command so that the decision
variables are command increments::

    [x; u]_{n+1} = [[A, B], [0, I]] [x; u]_n + [[B], [I]] du_n

All vectors here are hover-deviation coordinates (see ``model.to_deviation``).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .model import NU, NX, ITH, IPHI, VEL, LinearModel, discretize
from .ocp import OcpQp, OcpStage, QpSolver, Status

NA = NX + NU  # augmented state size
NOUT = 6

# augmented-state indices carrying soft bounds
_VEL_ROWS = list(range(VEL.start, VEL.stop))
_TILT_ROWS = [ITH, IPHI]
_CMD_TILT_ROWS = [NX + 0, NX + 1]


class SolverFailed(RuntimeError):
    pass


@dataclass(frozen=True)
class ControllerConfig:
    N: int = 50
    dt: float = 0.05
    p_sl: tuple = (10.0, 10.0, 10000.0)
    p_u: tuple = (0.0, 0.0, 0.05)
    p_du: tuple = (100.0, 100.0, 5.0)
    slack_weight: float = 10.0
    v_bound: float = 10.0
    tilt_bound: float = 0.75
    # ticks to hold the last command after a failed solve
    max_hold_ticks: int = 5

    def __post_init__(self):
        for name in ("p_sl", "p_u", "p_du"):
            v = tuple(float(a) for a in getattr(self, name))
            if len(v) != 3 or min(v) < 0:
                raise ValueError(f"{name} needs 3 non-negative entries")
            object.__setattr__(self, name, v)
        if self.N < 1 or self.dt <= 0:
            raise ValueError("N >= 1 and dt > 0 required")
        if self.v_bound <= 0 or self.tilt_bound <= 0 or self.slack_weight < 0:
            raise ValueError("bounds must be positive and slack weight non-negative")

    @property
    def horizon(self):
        return self.N * self.dt


@dataclass(frozen=True, eq=False)
class DenseReference:
    """Timestamped payload positions and (deviation) inputs at uniform spacing."""

    times: np.ndarray
    positions: np.ndarray
    inputs: np.ndarray
    # predicted augmented states behind the outputs, when produced by a solve
    states: np.ndarray | None = None

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        p = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        u = np.asarray(self.inputs, dtype=float).reshape(-1, 3)
        if not (len(t) == len(p) == len(u)) or len(t) == 0:
            raise ValueError("times, positions and inputs must have equal non-zero length")
        if not np.all(np.isfinite(p)) or not np.all(np.isfinite(u)):
            raise ValueError("reference contains non-finite values")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "positions", p)
        object.__setattr__(self, "inputs", u)

    def __len__(self):
        return len(self.times)

    @property
    def start(self):
        return self.times[0]

    @property
    def end(self):
        return self.times[-1]

    def sample(self, times):
        """Linear interpolation, holding the end values outside the span."""
        times = np.asarray(times, dtype=float)
        pos = np.column_stack([np.interp(times, self.times, self.positions[:, i]) for i in range(3)])
        inp = np.column_stack([np.interp(times, self.times, self.inputs[:, i]) for i in range(3)])
        return DenseReference(times, pos, inp)

    @classmethod
    def constant(cls, position, N, dt, t0=0.0, inputs=(0.0, 0.0, 0.0)):
        times = t0 + dt * np.arange(N + 1)
        return cls(times, np.tile(np.asarray(position, dtype=float), (N + 1, 1)),
                   np.tile(np.asarray(inputs, dtype=float), (N + 1, 1)))


def incremental_model(model: LinearModel, dt: float):
    """Augmented discrete model ``(A_aug, B_aug)`` with input increments."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    Ad, Bd = discretize(model, dt)
    A = np.zeros((NA, NA))
    A[:NX, :NX] = Ad
    A[:NX, NX:] = Bd
    A[NX:, NX:] = np.eye(NU)
    B = np.vstack([Bd, np.eye(NU)])
    return A, B


def output_map(l: float):
    """Homogeneous output matrix acting on ``[x_aug; 1]``.

    Outputs are the small-angle payload position ``s_uav + l (-th_l, phi_l, -1)``
    followed by the commanded inputs.
    """
    if l <= 0:
        raise ValueError("cable length must be positive")
    C = np.zeros((NOUT, NA + 1))
    C[0:3, 0:3] = np.eye(3)
    C[0, 3] = -l
    C[1, 4] = l
    C[2, NA] = -l
    C[3:6, NX:NA] = np.eye(NU)
    return C


def payload_output(x_aug, l):
    """Apply the output map to one or more augmented states."""
    x_aug = np.atleast_2d(x_aug)
    C = output_map(l)
    return x_aug @ C[:, :NA].T + C[:, NA]


def build_ocp(x_aug0, targets, model: LinearModel, *, N, dt, p_sl, p_u, p_du,
              slack_weight, v_bound, tilt_bound, weights=None):
    """Shared OCP builder for the tracking controller and the planner.

    ``targets`` is an ``(N+1, 6)`` array of desired outputs, ``weights`` an
    optional per-stage scale of the output cost.
    """
    targets = np.asarray(targets, dtype=float)
    if targets.shape != (N + 1, NOUT):
        raise ValueError(f"targets must have shape {(N + 1, NOUT)}, got {targets.shape}")
    weights = np.ones(N + 1) if weights is None else np.asarray(weights, dtype=float)
    A, B = incremental_model(model, dt)
    Ct = output_map(model.params.l)
    Cl, c0 = Ct[:, :NA], Ct[:, NA]
    W = np.diag(np.concatenate([p_sl, p_u]))
    Qbase = Cl.T @ W @ Cl
    lin = (c0 - targets) @ (W @ Cl)  # rows: Cl' W (c0 - y_d)
    R = np.diag(p_du)

    rows = _VEL_ROWS + _TILT_ROWS + _CMD_TILT_ROWS
    Cb = np.zeros((len(rows), NA))
    Cb[np.arange(len(rows)), rows] = 1.0
    bound = np.array([v_bound] * 3 + [tilt_bound] * 4)
    Z = np.full(len(rows), float(slack_weight))
    lo = -bound
    Db = np.zeros((len(rows), NU))
    Qs = {}  # share the scaled matrix between stages with equal weight

    def Qw(w):
        if w not in Qs:
            Qs[w] = w * Qbase
        return Qs[w]

    stages = []
    for n in range(N):
        stages.append(OcpStage(Q=Qw(weights[n]), q=weights[n] * lin[n], R=R, A=A, B=B,
                               C=Cb, D=Db, lb=lo, ub=bound, Zl=Z, Zu=Z))
    term = OcpStage(Q=Qw(weights[N]), q=weights[N] * lin[N], C=Cb, lb=lo, ub=bound, Zl=Z, Zu=Z)
    return OcpQp(x0=np.asarray(x_aug0, dtype=float), stages=stages, terminal=term)


def build_tracking_ocp(x_hat, u_prev, ref: DenseReference, cfg: ControllerConfig,
                       model: LinearModel) -> OcpQp:
    if len(ref) != cfg.N + 1:
        raise ValueError(f"reference must have N+1={cfg.N + 1} stages, got {len(ref)}")
    x0 = np.concatenate([np.asarray(x_hat, dtype=float), np.asarray(u_prev, dtype=float)])
    targets = np.hstack([ref.positions, ref.inputs])
    return build_ocp(x0, targets, model, N=cfg.N, dt=cfg.dt, p_sl=cfg.p_sl, p_u=cfg.p_u,
                     p_du=cfg.p_du, slack_weight=cfg.slack_weight, v_bound=cfg.v_bound,
                     tilt_bound=cfg.tilt_bound)


def tracking_cost(x_aug, du, ref: DenseReference, cfg: ControllerConfig, l):
    """Direct evaluation of the tracking objective (without the constant term
    from the output offset) for a candidate trajectory; slacks are the
    minimal ones implied by the bounds."""
    x_aug = np.asarray(x_aug, dtype=float)
    du = np.asarray(du, dtype=float)
    W = np.concatenate([cfg.p_sl, cfg.p_u])
    y = payload_output(x_aug, l)
    yd = np.hstack([ref.positions, ref.inputs])
    err = y - yd
    cost = 0.5 * np.sum(err**2 * W) - 0.5 * np.sum(((payload_output(np.zeros(NA), l) - yd) ** 2) * W)
    cost += 0.5 * np.sum(du**2 * np.asarray(cfg.p_du))
    rows = _VEL_ROWS + _TILT_ROWS + _CMD_TILT_ROWS
    bound = np.array([cfg.v_bound] * 3 + [cfg.tilt_bound] * 4)
    v = x_aug[:, rows]
    s = np.maximum(v - bound, 0.0) + np.maximum(-bound - v, 0.0)
    cost += 0.5 * cfg.slack_weight * np.sum(s**2)
    return cost


def clamp_command(u, cfg_tilt, hover_thrust):
    """Safety clamp on a deviation command: tilt magnitude and non-negative thrust."""
    u = np.array(u, dtype=float)
    u[:2] = np.clip(u[:2], -cfg_tilt, cfg_tilt)
    u[2] = max(u[2], -hover_thrust)
    return u


def control_step(x_hat, u_prev, ref: DenseReference, cfg: ControllerConfig, model: LinearModel,
                 solver: QpSolver | None = None, warm=None):
    """One MPC solve. Returns ``(u, predicted, solution)`` where ``predicted``
    is the ``(N+1, 16)`` augmented state trajectory of the solver."""
    solver = solver or QpSolver()
    qp = build_tracking_ocp(x_hat, u_prev, ref, cfg, model)
    sol = solver.solve(qp, warm)
    if sol.status != Status.OPTIMAL:
        raise SolverFailed(f"tracking QP ended with status {sol.status.value}")
    u = np.asarray(u_prev, dtype=float) + sol.u[0]
    u = clamp_command(u, cfg.tilt_bound, model.params.hover_thrust / model.params.fcu_gains[2])
    return u, sol.X, sol


class MpcController:
    """Receding-horizon wrapper with warm starts and the hold-on-failure policy."""

    def __init__(self, cfg: ControllerConfig, model: LinearModel, solver: QpSolver | None = None,
                 control_dt: float = 0.01):
        self.cfg = cfg
        self.model = model
        self.solver = solver or QpSolver()
        self.control_dt = control_dt
        self.failures = 0
        self.failed_ticks = []
        self._last_du = None
        self.predicted = None

    def _warm(self):
        if self._last_du is None:
            return None
        # shift the previous increment sequence by one control period
        s = np.arange(self.cfg.N) + self.control_dt / self.cfg.dt
        idx = np.arange(self.cfg.N)
        du = np.column_stack([np.interp(s, idx, self._last_du[:, i]) for i in range(NU)])
        return {"u": list(du)}

    def step(self, x_hat, u_prev, ref: DenseReference, tick=None):
        try:
            u, predicted, sol = control_step(x_hat, u_prev, ref, self.cfg, self.model,
                                             self.solver, self._warm())
        except SolverFailed:
            self.failures += 1
            self.failed_ticks.append(tick)
            if self.failures > self.cfg.max_hold_ticks:
                raise
            return np.asarray(u_prev, dtype=float), self.predicted
        self.failures = 0
        self._last_du = sol.U
        self.predicted = predicted
        return u, predicted

    def predicted_state_at(self, dt_ahead):
        """Augmented state predicted ``dt_ahead`` seconds after the last solve."""
        if self.predicted is None:
            return None
        s = dt_ahead / self.cfg.dt
        idx = np.arange(self.predicted.shape[0])
        return np.array([np.interp(s, idx, self.predicted[:, i]) for i in range(NA)])


def with_horizon(cfg: ControllerConfig, N: int) -> ControllerConfig:
    return replace(cfg, N=N)
