"""Hover, then a single 2 m sideways waypoint step.

Prints the payload position once per second together with the estimated
and true cable angles, which shows the swing excited by the step and how
the estimator follows it.

    python demos/hover_and_step.py
"""

import numpy as np

from slungload.evaluation import make_scenario
from slungload.planner import SparseReference
from slungload.simulator import run_closed_loop

ref = SparseReference([0.0, 4.0], [[0.0, 0.0, 2.0], [2.0, 0.0, 2.0]])
sc = make_scenario(ref, settle=2.0)
log = run_closed_loop(sc)

print(f"{'t':>5} {'x':>7} {'y':>7} {'z':>7} {'th_l':>7} {'th_l est':>9}")
for k in range(0, len(log), 100):
    x, y, z = log.payload[k]
    print(f"{log.t[k]:5.1f} {x:7.3f} {y:7.3f} {z:7.3f} {log.x[k, 3]:7.3f} {log.est[k, 3]:9.3f}")

err = np.linalg.norm(log.payload[-1] - ref.positions[-1])
print(f"final payload error {err:.3f} m after {log.t[-1]:.1f} s")
