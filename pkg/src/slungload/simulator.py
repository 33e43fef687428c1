"""Closed-loop simulation: nonlinear plant, noisy sensors, LKF, MPC and planner.

Everything runs on simulated time in lockstep, so a run is a pure function of
its :class:`ScenarioConfig` (including the sensor seed).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .controller import ControllerConfig, DenseReference, MpcController, SolverFailed
from .estimator import NY, KalmanFilter, NoiseConfig
from .model import (
    ITH, IPHI, NX, POS, SingularConfiguration, SystemParams, from_deviation, hover_state,
    input_from_deviation, linearize_hover, nonlinear_dynamics, payload_position, to_deviation,
)
from .ocp import QpSolver
from .planner import PlannerConfig, SparseReference, plan, replan_tick

JITTER = 0.2


class SimulationError(RuntimeError):
    """Wraps a solver failure or singular configuration with the tick it happened at."""

    def __init__(self, tick, t, cause):
        super().__init__(f"closed loop failed at tick {tick} (t={t:.3f} s): {cause}")
        self.tick = tick
        self.t = t
        self.cause = cause


@dataclass(frozen=True)
class SensorConfig:
    pos_noise_std: tuple = (0.02, 0.02, 0.02)
    att_noise_std: tuple = (0.01, 0.01)
    measurement_rate: float = 100.0
    seed: int = 0

    def __post_init__(self):
        pos = tuple(float(v) for v in np.broadcast_to(self.pos_noise_std, (3,)))
        att = tuple(float(v) for v in np.broadcast_to(self.att_noise_std, (2,)))
        if min(pos + att) < 0:
            raise ValueError("noise standard deviations must be non-negative")
        if self.measurement_rate <= 0:
            raise ValueError("measurement rate must be positive")
        if int(self.seed) < 0:
            raise ValueError("seed must be a non-negative integer")
        object.__setattr__(self, "pos_noise_std", pos)
        object.__setattr__(self, "att_noise_std", att)
        object.__setattr__(self, "seed", int(self.seed))

    @property
    def stds(self):
        return np.array(self.pos_noise_std + self.att_noise_std)


@dataclass(frozen=True, eq=False)
class ScenarioConfig:
    reference: SparseReference
    duration: float
    true_params: SystemParams = field(default_factory=SystemParams)
    nominal_params: SystemParams = field(default_factory=SystemParams)
    sensor: SensorConfig = field(default_factory=SensorConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    control_rate: float = 100.0
    planner_rate: float = 1.0
    integrator_rate: float = 1000.0
    # "estimate" feeds the LKF mean to controller and planner, "truth" the plant state
    feedback: str = "estimate"
    # extra zero-mean noise added to the fed-back state (all components)
    feedback_noise_std: float = 0.0
    jitter_dt: bool = False
    # UAV start position; defaults to hovering with the payload on the first waypoint
    initial_position: tuple | None = None

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        if not (self.integrator_rate >= self.control_rate >= self.planner_rate > 0):
            raise ValueError("need integrator_rate >= control_rate >= planner_rate > 0")
        for a, b in ((self.integrator_rate, self.control_rate), (self.control_rate, self.planner_rate)):
            r = a / b
            if abs(r - round(r)) > 1e-9:
                raise ValueError("rates must divide evenly")
        if self.feedback not in ("estimate", "truth"):
            raise ValueError(f"unknown feedback mode {self.feedback!r}")
        if self.feedback_noise_std < 0:
            raise ValueError("feedback noise std must be non-negative")

    @property
    def n_ticks(self):
        return int(round(self.duration * self.control_rate))

    def start_state(self):
        if self.initial_position is None:
            pos = self.reference.positions[0] + np.array([0.0, 0.0, self.true_params.l])
        else:
            pos = np.asarray(self.initial_position, dtype=float)
        return hover_state(self.true_params, pos)


@dataclass(eq=False)
class RunLog:
    """Per-control-tick records. States, estimates and commands are absolute;
    ``meas`` rows are NaN on ticks without a measurement."""

    t: np.ndarray
    x: np.ndarray
    payload: np.ndarray
    meas: np.ndarray
    est: np.ndarray
    u: np.ndarray
    ref: np.ndarray
    plans: list = field(default_factory=list)
    failed_ticks: list = field(default_factory=list)

    def __len__(self):
        return len(self.t)

    def payload_estimate(self, l):
        return np.array([payload_position(e[POS], e[3], e[4], l) for e in self.est])


def rk4_step(x, u, dt, params: SystemParams):
    if dt <= 0:
        raise ValueError("dt must be positive")
    x = np.asarray(x, dtype=float)
    k1 = nonlinear_dynamics(x, u, params)
    k2 = nonlinear_dynamics(x + 0.5 * dt * k1, u, params)
    k3 = nonlinear_dynamics(x + 0.5 * dt * k2, u, params)
    k4 = nonlinear_dynamics(x + dt * k3, u, params)
    return x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def measure(x, cfg: SensorConfig, rng):
    """UAV position and FCU tilt with additive Gaussian noise."""
    x = np.asarray(x, dtype=float)
    y = np.concatenate([x[POS], [x[ITH], x[IPHI]]])
    return y + cfg.stds * rng.standard_normal(NY)


def _rngs(seed):
    sens, jit, fb = np.random.SeedSequence(seed).spawn(3)
    return np.random.default_rng(sens), np.random.default_rng(jit), np.random.default_rng(fb)


def run_closed_loop(sc: ScenarioConfig) -> RunLog:
    nom = sc.nominal_params
    model = linearize_hover(nom)
    ccfg = sc.controller
    pcfg = sc.planner
    control_dt = 1.0 / sc.control_rate
    n_sub = int(round(sc.integrator_rate / sc.control_rate))
    plan_every = int(round(sc.control_rate / sc.planner_rate))
    meas_period = 1.0 / sc.sensor.measurement_rate
    rng_meas, rng_jit, rng_fb = _rngs(sc.sensor.seed)

    x = sc.start_state()
    lkf = KalmanFilter(model, sc.noise, to_deviation(x, nom))
    ctrl = MpcController(ccfg, model, QpSolver(), control_dt)
    plan_solver = QpSolver()
    u_dev = np.zeros(3)

    K = sc.n_ticks
    T = np.empty(K + 1)
    X = np.empty((K + 1, NX))
    SL = np.empty((K + 1, 3))
    Y = np.full((K + 1, NY), np.nan)
    E = np.empty((K + 1, NX))
    U = np.empty((K + 1, 3))
    REF = np.empty((K + 1, 3))
    plans: list[DenseReference] = []
    next_meas = 0.0
    t = 0.0
    dt_prev = 0.0
    horizon = ccfg.dt * np.arange(ccfg.N + 1)

    for k in range(K + 1):
        try:
            if k > 0:
                lkf.predict(u_dev, dt_prev)
            if t >= next_meas - 1e-9:
                Y[k] = measure(x, sc.sensor, rng_meas)
                lkf.update(Y[k])
                next_meas += meas_period
            if sc.feedback == "truth":
                fb = to_deviation(x, nom)
            else:
                fb = lkf.est.mean.copy()
            if sc.feedback_noise_std > 0:
                fb = fb + sc.feedback_noise_std * rng_fb.standard_normal(NX)

            if k % plan_every == 0:
                pred = ctrl.predicted_state_at(pcfg.t_plan) if k > 0 else None
                try:
                    if pred is None:
                        new = plan(fb, u_dev, sc.reference, pcfg, model, plan_solver, t_start=t)
                    else:
                        new = replan_tick(pred, t, sc.reference, pcfg, model, plan_solver)
                    plans.append(new)
                except SolverFailed:
                    if not plans:
                        raise
            active = plans[-1]
            for p in reversed(plans):
                if p.start <= t + 1e-9:
                    active = p
                    break
            ref = active.sample(t + horizon)
            u_dev, _ = ctrl.step(fb, u_dev, ref, tick=k)
        except (SolverFailed, SingularConfiguration, np.linalg.LinAlgError) as exc:
            raise SimulationError(k, t, exc) from exc

        T[k] = t
        X[k] = x
        SL[k] = payload_position(x[POS], x[3], x[4], sc.true_params.l)
        E[k] = from_deviation(lkf.est.mean, nom)
        U[k] = input_from_deviation(u_dev, nom)
        REF[k] = ref.positions[0]
        if k == K:
            break

        dt_tick = control_dt
        if sc.jitter_dt:
            dt_tick *= 1.0 + JITTER * (2.0 * rng_jit.random() - 1.0)
        h = dt_tick / n_sub
        try:
            for _ in range(n_sub):
                x = rk4_step(x, U[k], h, sc.true_params)
        except SingularConfiguration as exc:
            raise SimulationError(k, t, exc) from exc
        t += dt_tick
        dt_prev = dt_tick

    return RunLog(T, X, SL, Y, E, U, REF, plans, ctrl.failed_ticks)


__all__ = [
    "SensorConfig", "ScenarioConfig", "RunLog", "SimulationError",
    "rk4_step", "measure", "run_closed_loop",
]
