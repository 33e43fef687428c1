"""INI configuration and CSV file formats.

A config file has the sections ``[model]`` (nominal parameters), ``[plant]``
(overrides for the simulated plant), ``[estimator]``, ``[controller]``,
``[planner]``, ``[sensor]`` and ``[scenario]``. Every key is optional; unknown
sections and keys are rejected. Vector values are comma separated.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import replace

import numpy as np

from .controller import ControllerConfig, DenseReference
from .estimator import DEFAULT_Q_DIAG, DEFAULT_R_DIAG, NoiseConfig
from .evaluation import complex_trajectory, make_scenario, read_reference, square_trajectory
from .model import STATE_NAMES, SystemParams
from .planner import PlannerConfig, SparseReference
from .simulator import RunLog, ScenarioConfig, SensorConfig


class ConfigError(ValueError):
    pass


def _float(s):
    return float(s)


def _int(s):
    v = float(s)
    if v != int(v):
        raise ValueError(f"{s!r} is not an integer")
    return int(v)


def _bool(s):
    t = s.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"{s!r} is not a boolean")


def _vec(n):
    def parse(s):
        v = tuple(float(a) for a in s.split(",") if a.strip())
        if len(v) != n:
            raise ValueError(f"expected {n} comma-separated numbers, got {len(v)}")
        return v

    return parse


def _str(s):
    return s.strip()


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ", ".join(_fmt(a) for a in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


_P = SystemParams()
_C = ControllerConfig()
_PL = PlannerConfig()
_S = SensorConfig()

_MODEL_KEYS = {
    "m_uav": (_float, _P.m_uav),
    "m_l": (_float, _P.m_l),
    "l": (_float, _P.l),
    "d_uav": (_float, _P.d_uav),
    "d_l": (_float, _P.d_l),
    "g": (_float, _P.g),
    "fcu_gains": (_vec(3), _P.fcu_gains),
    "fcu_taus": (_vec(3), _P.fcu_taus),
}

# (parser, default); a default of None means "not set"
SCHEMA = {
    "model": _MODEL_KEYS,
    "plant": {k: (p, None) for k, (p, _) in _MODEL_KEYS.items()},
    "estimator": {
        "q_diag": (_vec(13), tuple(float(v) for v in DEFAULT_Q_DIAG)),
        "r_diag": (_vec(5), tuple(float(v) for v in DEFAULT_R_DIAG)),
    },
    "controller": {
        "N": (_int, _C.N),
        "dt": (_float, _C.dt),
        "p_sl": (_vec(3), _C.p_sl),
        "p_u": (_vec(3), _C.p_u),
        "p_du": (_vec(3), _C.p_du),
        "slack_weight": (_float, _C.slack_weight),
        "v_bound": (_float, _C.v_bound),
        "tilt_bound": (_float, _C.tilt_bound),
        "max_hold_ticks": (_int, _C.max_hold_ticks),
    },
    "planner": {
        "N": (_int, _PL.N),
        "sigma": (_float, _PL.sigma),
        "p_du": (_vec(3), _PL.p_du),
        "tilt_bound": (_float, _PL.tilt_bound),
        "replanning_rate": (_float, _PL.replanning_rate),
        "t_plan": (_float, _PL.t_plan),
        "tail": (_float, _PL.tail),
        "target": (str, _PL.target),
    },
    "sensor": {
        "pos_noise_std": (_vec(3), _S.pos_noise_std),
        "att_noise_std": (_vec(2), _S.att_noise_std),
        "measurement_rate": (_float, _S.measurement_rate),
        "seed": (_int, _S.seed),
    },
    "scenario": {
        # hover | square | complex | file
        "trajectory": (_str, "square"),
        "waypoint_dt": (_float, 2.0),
        "side": (_float, 5.0),
        "laps": (_int, 1),
        "start": (_vec(3), (0.0, 0.0, 2.0)),
        "reference_file": (_str, ""),
        "settle": (_float, 5.0),
        "control_rate": (_float, 100.0),
        "integrator_rate": (_float, 1000.0),
        "feedback": (_str, "estimate"),
        "jitter_dt": (_bool, False),
    },
}

TRAJECTORIES = ("hover", "square", "complex", "file")


def parse_config(text: str) -> dict:
    """Parse INI text into ``{section: {key: value}}`` with defaults filled in."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str  # keys are case sensitive (N)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    out = {}
    for sec in cp.sections():
        if sec not in SCHEMA:
            raise ConfigError(f"unknown section [{sec}]")
    for sec, keys in SCHEMA.items():
        vals = {k: d for k, (_, d) in keys.items()}
        if cp.has_section(sec):
            for k, raw in cp.items(sec):
                if k not in keys:
                    raise ConfigError(f"unknown key '{k}' in section [{sec}]")
                try:
                    vals[k] = keys[k][0](raw)
                except ValueError as exc:
                    raise ConfigError(f"bad value for '{k}' in [{sec}]: {exc}") from exc
        out[sec] = vals
    if out["scenario"]["trajectory"] not in TRAJECTORIES:
        raise ConfigError(f"unknown trajectory '{out['scenario']['trajectory']}'"
                          f" (expected one of {', '.join(TRAJECTORIES)})")
    # let the typed constructors check the remaining invariants
    try:
        _objects(out)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc
    return out


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    return parse_config(text)


def dump_config(cfg: dict) -> str:
    """Normalized INI text: every section and key, in schema order."""
    buf = io.StringIO()
    for sec, keys in SCHEMA.items():
        buf.write(f"[{sec}]\n")
        for k in keys:
            v = cfg[sec][k]
            if v is None:
                continue
            buf.write(f"{k} = {_fmt(v)}\n")
        buf.write("\n")
    return buf.getvalue()


def _objects(cfg: dict):
    nominal = SystemParams(**cfg["model"])
    overrides = {k: v for k, v in cfg["plant"].items() if v is not None}
    true = nominal.with_(**overrides)
    noise = NoiseConfig(Q=np.asarray(cfg["estimator"]["q_diag"]),
                        R=np.asarray(cfg["estimator"]["r_diag"]))
    ctrl = ControllerConfig(**cfg["controller"])
    planner = PlannerConfig(controller=ctrl, **cfg["planner"])
    sensor = SensorConfig(**cfg["sensor"])
    sc = cfg["scenario"]
    if sc["feedback"] not in ("estimate", "truth"):
        raise ValueError(f"unknown feedback mode '{sc['feedback']}'")
    if sc["settle"] < 0:
        raise ValueError("settle must be non-negative")
    return nominal, true, noise, ctrl, planner, sensor


def trajectory_factory(cfg: dict, reference: SparseReference | None = None):
    """Callable ``dt -> SparseReference`` for the configured trajectory.

    A file (or explicit) reference is re-timed to spacing ``dt`` when asked
    for a different one.
    """
    sc = cfg["scenario"]
    kind = sc["trajectory"]
    if reference is None and kind == "file":
        if not sc["reference_file"]:
            raise ConfigError("trajectory = file needs reference_file")
        reference = load_reference(sc["reference_file"])
    if reference is not None:
        ref = reference

        def make(dt):
            if len(ref) < 2 or abs(dt - ref.dt) < 1e-12:
                return ref
            return SparseReference(ref.start + (ref.times - ref.start) * dt / ref.dt, ref.positions)

        return make
    if kind == "hover":
        return lambda dt: SparseReference([0.0], [sc["start"]])
    if kind == "square":
        return lambda dt: square_trajectory(dt, side=sc["side"], laps=sc["laps"], start=sc["start"])
    return complex_trajectory


def build_scenario(cfg: dict, reference: SparseReference | None = None, seed=None,
                   jitter_dt=None) -> ScenarioConfig:
    nominal, true, noise, ctrl, planner, sensor = _objects(cfg)
    if seed is not None:
        sensor = replace(sensor, seed=int(seed))
    sc = cfg["scenario"]
    ref = trajectory_factory(cfg, reference)(sc["waypoint_dt"])
    return make_scenario(
        ref, settle=sc["settle"], true_params=true, nominal_params=nominal, sensor=sensor,
        noise=noise, controller=ctrl, planner=planner, control_rate=sc["control_rate"],
        planner_rate=planner.replanning_rate, integrator_rate=sc["integrator_rate"],
        feedback=sc["feedback"], jitter_dt=sc["jitter_dt"] if jitter_dt is None else jitter_dt,
    )


# ----------------------------------------------------------------------------
# CSV formats


def load_reference(path) -> SparseReference:
    try:
        with open(path, newline="") as fh:
            return read_reference(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read reference {path}: {exc.strerror}") from exc
    except ValueError as exc:
        raise ConfigError(f"bad reference file {path}: {exc}") from exc


LOG_COLUMNS = (
    ["t"] + list(STATE_NAMES) + ["sl_x", "sl_y", "sl_z"]
    + [f"est_{n}" for n in STATE_NAMES]
    + ["u_th", "u_phi", "u_F"]
    + ["meas_x", "meas_y", "meas_z", "meas_th", "meas_phi"]
)


def _row(vals):
    return ",".join(f"{v:.9g}" for v in vals) + "\n"


def write_log(log: RunLog, fh):
    fh.write(",".join(LOG_COLUMNS) + "\n")
    data = np.column_stack([log.t, log.x, log.payload, log.est, log.u, log.meas])
    for r in data:
        fh.write(_row(r))


def read_log(fh):
    """Column name -> array for a log written by :func:`write_log`."""
    header = fh.readline().strip().split(",")
    if header != LOG_COLUMNS:
        raise ValueError("not a run log (header mismatch)")
    data = np.loadtxt(fh, delimiter=",", ndmin=2)
    return {name: data[:, i] for i, name in enumerate(header)}


DENSE_COLUMNS = ["t", "x", "y", "z", "u_th", "u_phi", "u_F"]


def write_dense(ref: DenseReference, fh, hover_input=np.zeros(3)):
    """Dense trajectory CSV; inputs are written as ``ref.inputs + hover_input``."""
    fh.write(",".join(DENSE_COLUMNS) + "\n")
    for t, p, u in zip(ref.times, ref.positions, ref.inputs + hover_input):
        fh.write(_row((t, *p, *u)))
