"""Reference generators, tracking and estimation metrics, parameter sweeps.

Evaluation scenarios hover for ``SETTLE`` seconds before the first waypoint
and run ``tail`` seconds past the last one. Metrics use the control-rate log
samples between the first waypoint and the end of the tail.
"""

from __future__ import annotations

import csv
import io
import itertools
from dataclasses import dataclass, field, replace
from importlib import resources

import numpy as np

from .controller import DenseReference, SolverFailed
from .model import ITH_L, IPHI_L, IDTH_L, IDPHI_L, linearize_hover, to_deviation
from .planner import SparseReference, plan_open_loop
from .simulator import RunLog, ScenarioConfig, SimulationError, run_closed_loop

SETTLE = 5.0
ANGLE_NAMES = ("th_l", "phi_l", "thd_l", "phid_l")
_ANGLE_IDX = (ITH_L, IPHI_L, IDTH_L, IDPHI_L)


class EmptyTrajectory(ValueError):
    pass


# ----------------------------------------------------------------------------
# references


def square_trajectory(dt, side=5.0, laps=1, start=(0.0, 0.0, 2.0), t0=0.0) -> SparseReference:
    """Alternating ``side``-metre steps along x and y, one square per lap."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    if laps < 1:
        raise ValueError("need at least one lap")
    steps = np.array([[side, 0, 0], [0, side, 0], [-side, 0, 0], [0, -side, 0]], dtype=float)
    pos = [np.asarray(start, dtype=float)]
    for d in np.tile(steps, (laps, 1)):
        pos.append(pos[-1] + d)
    pos = np.array(pos)
    return SparseReference(t0 + dt * np.arange(len(pos)), pos)


def read_reference(fh) -> SparseReference:
    """Parse a ``t,x,y,z`` CSV (one header line) into a :class:`SparseReference`."""
    rows = list(csv.reader(fh))
    if not rows or [c.strip() for c in rows[0]] != ["t", "x", "y", "z"]:
        raise ValueError("reference CSV must start with the header 't,x,y,z'")
    data = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
    if data.size == 0:
        raise ValueError("reference CSV has no waypoints")
    if data.ndim != 2 or data.shape[1] != 4:
        raise ValueError("reference rows need exactly 4 columns")
    return SparseReference(data[:, 0], data[:, 1:])


def write_reference(ref: SparseReference, fh):
    fh.write("t,x,y,z\n")
    for t, p in zip(ref.times, ref.positions):
        fh.write(",".join(f"{v:.9g}" for v in (t, *p)) + "\n")


def complex_trajectory(dt, t0=0.0) -> SparseReference:
    """Stand-in for a long mixed trajectory: turns, altitude changes and
    uneven step lengths. Waypoints ship as package data at unit spacing."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    text = resources.files("slungload").joinpath("data/complex_trajectory.csv").read_text()
    base = read_reference(io.StringIO(text))
    return SparseReference(t0 + dt * (base.times - base.times[0]), base.positions)


# ----------------------------------------------------------------------------
# metrics


def rmse(times, positions, ref: SparseReference, t_from=None, t_to=None) -> float:
    """Root-mean Euclidean error against the zero-order-hold reference."""
    times = np.asarray(times, dtype=float)
    positions = np.asarray(positions, dtype=float).reshape(-1, 3)
    mask = np.ones(len(times), dtype=bool)
    if t_from is not None:
        mask &= times >= t_from - 1e-9
    if t_to is not None:
        mask &= times <= t_to + 1e-9
    if not np.any(mask):
        raise EmptyTrajectory("no samples inside the evaluation window")
    err = positions[mask] - ref.zoh(times[mask])
    return float(np.sqrt(np.mean(np.sum(err**2, axis=1))))


def delta_rmse(rmse_exec, rmse_ol) -> float:
    """Relative degradation of the executed trajectory in percent."""
    if rmse_ol == 0:
        raise ZeroDivisionError("open-loop RMSE is zero")
    return (rmse_exec - rmse_ol) / rmse_ol * 100.0


def estimation_errors(log: RunLog, t_from=None, t_to=None):
    mask = np.ones(len(log.t), dtype=bool)
    if t_from is not None:
        mask &= log.t >= t_from - 1e-9
    if t_to is not None:
        mask &= log.t <= t_to + 1e-9
    idx = list(_ANGLE_IDX)
    return log.est[mask][:, idx] - log.x[mask][:, idx]


def estimation_metrics(log: RunLog, t_from=None, t_to=None):
    """Per-angle ``(rmse, std, bias)`` of the estimate error, each a 4-vector
    ordered ``(th_l, phi_l, thd_l, phid_l)``."""
    e = estimation_errors(log, t_from, t_to)
    if len(e) == 0:
        raise EmptyTrajectory("no samples inside the evaluation window")
    bias = e.mean(axis=0)
    return np.sqrt(np.mean(e**2, axis=0)), e.std(axis=0), bias


@dataclass
class MetricsReport:
    scenario: str
    rmse_ol: float
    rmse_exec: float
    delta_rmse: float
    est_rmse: np.ndarray
    est_std: np.ndarray
    est_bias: np.ndarray
    error: str = ""

    FIELDS = (
        ["scenario", "rmse_ol", "rmse_exec", "delta_rmse"]
        + [f"est_rmse_{n}" for n in ANGLE_NAMES]
        + [f"est_std_{n}" for n in ANGLE_NAMES]
        + [f"est_bias_{n}" for n in ANGLE_NAMES]
        + ["error"]
    )

    @classmethod
    def failed(cls, scenario, error):
        nan = np.full(4, np.nan)
        return cls(scenario, np.nan, np.nan, np.nan, nan, nan, nan, str(error))

    def row(self):
        vals = [self.rmse_ol, self.rmse_exec, self.delta_rmse,
                *self.est_rmse, *self.est_std, *self.est_bias]
        return [self.scenario] + [f"{v:.9g}" for v in vals] + [self.error]

    def summary(self):
        lines = [
            f"scenario: {self.scenario}",
            f"rmse_ol [m]: {self.rmse_ol:.6g}",
            f"rmse_exec [m]: {self.rmse_exec:.6g}",
            f"delta_rmse [%]: {self.delta_rmse:.6g}",
        ]
        for i, n in enumerate(ANGLE_NAMES):
            lines.append(f"{n}: rmse {self.est_rmse[i]:.6g} std {self.est_std[i]:.6g} "
                         f"bias {self.est_bias[i]:.6g}")
        if self.error:
            lines.append(f"error: {self.error}")
        return "\n".join(lines) + "\n"


def write_reports(reports, fh):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(MetricsReport.FIELDS)
    for r in reports:
        w.writerow(r.row())


# ----------------------------------------------------------------------------
# scenarios


def make_scenario(ref: SparseReference, settle=SETTLE, tail=None, **kwargs) -> ScenarioConfig:
    """Scenario that hovers at the first waypoint for ``settle`` seconds,
    flies ``ref`` (re-timed to start after the settle period) and runs
    ``tail`` seconds past the last waypoint (the planner tail by default)."""
    if settle < 0:
        raise ValueError("settle must be non-negative")
    ref = ref.shifted(settle - ref.start)
    sc = ScenarioConfig(reference=ref, duration=1.0, **kwargs)
    tail = sc.planner.tail if tail is None else tail
    return replace(sc, duration=ref.end + tail)


def eval_window(sc: ScenarioConfig):
    return sc.reference.start, sc.duration


def open_loop_plan(sc: ScenarioConfig) -> DenseReference:
    """Benchmark trajectory: one planner solve over the whole scenario.

    It starts from the initial hover at t = 0, so the benchmark has the same
    settle-period lead-in as the closed loop, and ends with the run.
    """
    model = linearize_hover(sc.nominal_params)
    x0 = to_deviation(sc.start_state(), sc.nominal_params)
    cfg = replace(sc.planner, tail=sc.duration - sc.reference.end)
    return plan_open_loop(x0, sc.reference, cfg, model, t_start=0.0)


def evaluate(sc: ScenarioConfig, name="scenario", log: RunLog | None = None, ol=None):
    """Closed-loop run plus open-loop benchmark. Returns ``(report, log, ol)``."""
    log = run_closed_loop(sc) if log is None else log
    ol = open_loop_plan(sc) if ol is None else ol
    t0, t1 = eval_window(sc)
    mask = (log.t >= t0 - 1e-9) & (log.t <= t1 + 1e-9)
    ts = log.t[mask]
    r_exec = rmse(ts, log.payload[mask], sc.reference)
    r_ol = rmse(ts, ol.sample(ts).positions, sc.reference)
    est = estimation_metrics(log, t0, t1)
    # a benchmark that sits exactly on the reference leaves the ratio undefined
    d = delta_rmse(r_exec, r_ol) if r_ol > 0 else float("nan")
    rep = MetricsReport(name, r_ol, r_exec, d, *est)
    return rep, log, ol


def parse_grid(spec: str) -> dict:
    """``"m_l=0.5,1.0;l=1,2;dt=2"`` -> ``{"m_l": [0.5, 1.0], "l": [1.0, 2.0], "dt": [2.0]}``."""
    grid = {}
    for part in spec.split(";"):
        part = part.strip()
        if not part:
            continue
        if "=" not in part:
            raise ValueError(f"grid entry {part!r} is not of the form key=v1,v2")
        key, vals = part.split("=", 1)
        key = key.strip()
        if key not in ("m_l", "l", "dt"):
            raise ValueError(f"unknown grid key {key!r} (expected m_l, l or dt)")
        try:
            values = [float(v) for v in vals.split(",") if v.strip()]
        except ValueError as exc:
            raise ValueError(f"grid values for {key!r} must be numbers") from exc
        if not values:
            raise ValueError(f"grid key {key!r} has no values")
        grid[key] = values
    if not grid:
        raise ValueError("empty grid")
    return grid


@dataclass
class SweepCell:
    m_l: float
    l: float
    dt: float
    report: MetricsReport
    log: RunLog | None = field(default=None, repr=False)

    @property
    def name(self):
        return f"m_l={self.m_l:g},l={self.l:g},dt={self.dt:g}"


def cell_scenario(base: ScenarioConfig, m_l, l, dt, trajectory=complex_trajectory) -> ScenarioConfig:
    true = base.true_params.with_(m_l=m_l, l=l)
    nom = base.nominal_params.with_(m_l=m_l, l=l)
    settle = base.reference.start
    tail = base.duration - base.reference.end
    return make_scenario(trajectory(dt), settle=settle, tail=tail,
                         true_params=true, nominal_params=nom, sensor=base.sensor,
                         noise=base.noise, controller=base.controller, planner=base.planner,
                         control_rate=base.control_rate, planner_rate=base.planner_rate,
                         integrator_rate=base.integrator_rate, feedback=base.feedback,
                         jitter_dt=base.jitter_dt)


def sweep(grid: dict, base: ScenarioConfig, trajectory=complex_trajectory, keep_logs=False):
    """Closed-loop run and open-loop benchmark for every (m_l, l, dt) cell.

    Missing grid keys take the base scenario's value (dt from its reference).
    Failed cells are reported with NaN metrics and an error message.
    """
    m_ls = grid.get("m_l", [base.true_params.m_l])
    ls = grid.get("l", [base.true_params.l])
    dts = grid.get("dt", [base.reference.dt])
    cells = []
    for m_l, l, dt in itertools.product(m_ls, ls, dts):
        name = f"m_l={m_l:g},l={l:g},dt={dt:g}"
        log = None
        try:
            sc = cell_scenario(base, m_l, l, dt, trajectory)
            rep, log, _ = evaluate(sc, name)
        except (SimulationError, SolverFailed, ValueError, ZeroDivisionError) as exc:
            rep = MetricsReport.failed(name, exc)
        cells.append(SweepCell(m_l, l, dt, rep, log if keep_logs else None))
    return cells
