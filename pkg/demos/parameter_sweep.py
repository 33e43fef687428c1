"""Payload mass and cable length sweep on the complex trajectory.

Prints the relative tracking degradation and the cable-angle estimation RMSE
for each cell of a 3 x 3 grid at 2 s waypoint spacing. Takes several minutes.

    python demos/parameter_sweep.py
"""

from slungload.evaluation import complex_trajectory, make_scenario, sweep

masses, lengths = [0.5, 1.0, 1.5], [1.0, 2.0, 3.0]
cells = sweep({"m_l": masses, "l": lengths, "dt": [2.0]}, make_scenario(complex_trajectory(2.0)))
table = {(c.m_l, c.l): c.report for c in cells}

print("delta RMSE [%]            m_l = " + "  ".join(f"{m:6.1f}" for m in masses))
for l in lengths:
    print(f"  l = {l:.0f} m                      " + "  ".join(f"{table[(m, l)].delta_rmse:+6.2f}" for m in masses))
print("\ntheta_l estimation RMSE [rad]")
for l in lengths:
    print(f"  l = {l:.0f} m                      " + "  ".join(f"{table[(m, l)].est_rmse[0]:6.4f}" for m in masses))
for c in cells:
    if c.report.error:
        print(f"cell {c.name} failed: {c.report.error}")
