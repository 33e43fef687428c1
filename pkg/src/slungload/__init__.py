"""Payload tracking for a multirotor with a cable-suspended load.

Modules:

- ``model``: nonlinear rigid-pendulum dynamics and the hover linearization
- ``ocp``: structured OCP quadratic programs (Riccati-based Newton and ADMM)
- ``estimator``: linear Kalman filter
- ``controller``: incremental MPC on the payload position
- ``planner``: Gaussian-weighted waypoint planner
- ``simulator``: closed-loop simulation
- ``evaluation``: references, metrics and sweeps
- ``config`` / ``cli``: file formats and the command-line tool
"""

from .model import SystemParams, linearize_hover, nonlinear_dynamics
from .ocp import OcpQp, OcpStage, QpSolver, SolverSettings, solve
from .estimator import KalmanFilter, NoiseConfig
from .controller import ControllerConfig, DenseReference, MpcController
from .planner import PlannerConfig, SparseReference, plan, plan_open_loop
from .simulator import ScenarioConfig, SensorConfig, run_closed_loop
from .evaluation import MetricsReport, evaluate, square_trajectory, complex_trajectory, sweep

__version__ = "0.1.0"
