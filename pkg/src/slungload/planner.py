"""Sparse-waypoint trajectory planner with Gaussian time weighting.

The planner solves the controller's OCP over a long horizon, but scales the
output cost of every stage by ``w_i = max_k exp(-(t_k - t_i)^2 / (2 sigma^2))``
so that the payload only has to match the waypoints around their timestamps
and is free to move in between. Each stage targets the waypoint nearest in
time by default; ``PlannerConfig(target="zoh")`` holds the most recent
waypoint instead.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .controller import NA, NX, ControllerConfig, DenseReference, SolverFailed, build_ocp, payload_output
from .model import LinearModel
from .ocp import QpSolver, Status


@dataclass(frozen=True, eq=False)
class SparseReference:
    """Payload waypoints at uniform time spacing."""

    times: np.ndarray
    positions: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float).reshape(-1)
        p = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        if len(t) != len(p) or len(t) == 0:
            raise ValueError("times and positions must have equal non-zero length")
        if len(t) > 1:
            d = np.diff(t)
            if np.any(d <= 0):
                raise ValueError("waypoint times must be strictly increasing")
            if np.max(np.abs(d - d[0])) > 1e-9:
                raise ValueError("waypoint times must be uniformly spaced")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "positions", p)

    def __len__(self):
        return len(self.times)

    @property
    def dt(self):
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else float("inf")

    @property
    def start(self):
        return float(self.times[0])

    @property
    def end(self):
        return float(self.times[-1])

    def zoh(self, t):
        """Zero-order-hold positions at times ``t`` (first waypoint before the start)."""
        idx = np.searchsorted(self.times, np.asarray(t, dtype=float), side="right") - 1
        return self.positions[np.clip(idx, 0, len(self.times) - 1)]

    def nearest(self, t):
        """Waypoint nearest in time to each of ``t`` (earlier one on ties)."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        idx = np.searchsorted(self.times, t, side="left")
        idx = np.clip(idx, 1, len(self.times) - 1) if len(self.times) > 1 else np.zeros_like(idx)
        if len(self.times) > 1:
            earlier = (t - self.times[idx - 1]) <= (self.times[idx] - t)
            idx = np.where(earlier, idx - 1, idx)
        return self.positions[idx]

    def shifted(self, dt):
        return SparseReference(self.times + dt, self.positions)


@dataclass(frozen=True)
class PlannerConfig:
    N: int = 300
    sigma: float = 0.25
    p_du: tuple = (500.0, 500.0, 5.0)
    tilt_bound: float = 0.5
    replanning_rate: float = 1.0
    t_plan: float = 1.0
    # settling tail appended to the open-loop horizon
    tail: float = 3.0
    # per-stage target: "nearest" (in time) or "zoh" (most recent waypoint)
    target: str = "nearest"
    controller: ControllerConfig = field(default_factory=ControllerConfig)

    def __post_init__(self):
        object.__setattr__(self, "p_du", tuple(float(v) for v in self.p_du))
        if self.sigma <= 0 or self.N < 1:
            raise ValueError("sigma > 0 and N >= 1 required")
        if self.replanning_rate <= 0 or self.t_plan < 0 or self.tail < 0:
            raise ValueError("invalid replanning timing")
        if self.target not in ("zoh", "nearest"):
            raise ValueError(f"unknown target rule {self.target!r}")

    @property
    def dt(self):
        return self.controller.dt


def contouring_weights(ref_times, horizon_times, sigma):
    ref_times = np.asarray(ref_times, dtype=float)
    horizon_times = np.asarray(horizon_times, dtype=float)
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    d = ref_times[None, :] - horizon_times[:, None]
    return np.max(np.exp(-(d**2) / (2.0 * sigma**2)), axis=1)


def stage_weights(ref: SparseReference, times, sigma):
    """Kernel weights with the reference held outside its time span.

    Before the first and after the last waypoint the target is constant, so
    these stages get full weight instead of decaying to zero.
    """
    w = contouring_weights(ref.times, times, sigma)
    times = np.asarray(times)
    w[(times <= ref.start) | (times >= ref.end)] = 1.0
    return w


def plan(x_init, u_init, ref: SparseReference, cfg: PlannerConfig, model: LinearModel,
         solver: QpSolver | None = None, t_start=0.0, weights=None) -> DenseReference:
    """Dense payload trajectory starting at ``t_start`` from ``(x_init, u_init)``.

    ``weights`` overrides the kernel weights (e.g. all ones for uniform tracking).
    """
    solver = solver or QpSolver()
    c = cfg.controller
    times = t_start + c.dt * np.arange(cfg.N + 1)
    if weights is None:
        weights = stage_weights(ref, times, cfg.sigma)
    pos = ref.zoh(times) if cfg.target == "zoh" else ref.nearest(times)
    targets = np.hstack([pos, np.zeros((cfg.N + 1, 3))])
    x0 = np.concatenate([np.asarray(x_init, dtype=float), np.asarray(u_init, dtype=float)])
    qp = build_ocp(x0, targets, model, N=cfg.N, dt=c.dt, p_sl=c.p_sl, p_u=c.p_u, p_du=cfg.p_du,
                   slack_weight=c.slack_weight, v_bound=c.v_bound, tilt_bound=cfg.tilt_bound,
                   weights=weights)
    sol = solver.solve(qp)
    if sol.status != Status.OPTIMAL:
        raise SolverFailed(f"planner QP ended with status {sol.status.value}")
    X = sol.X
    out = payload_output(X, model.params.l)
    return DenseReference(times, out[:, :3], X[:, NX:NA], states=X)


def plan_open_loop(x0, ref: SparseReference, cfg: PlannerConfig, model: LinearModel,
                   solver: QpSolver | None = None, u0=None, t_start=None) -> DenseReference:
    """Single solve spanning the whole reference plus the settling tail."""
    t_start = ref.start if t_start is None else t_start
    N = int(np.ceil((ref.end + cfg.tail - t_start) / cfg.dt - 1e-9))
    u0 = np.zeros(3) if u0 is None else u0
    return plan(x0, u0, ref, replace(cfg, N=max(N, 1)), model, solver, t_start=t_start)


def replan_tick(predicted_state, t_now, ref: SparseReference, cfg: PlannerConfig,
                model: LinearModel, solver: QpSolver | None = None) -> DenseReference:
    """Plan from the controller's predicted augmented state at ``t_now + t_plan``."""
    x = np.asarray(predicted_state, dtype=float)
    return plan(x[:NX], x[NX:NA], ref, cfg, model, solver, t_start=t_now + cfg.t_plan)
