"""Closed-loop flight of the 5 m square against its open-loop benchmark.

Runs the square at three waypoint spacings, with the Kalman estimate and with
plant truth as controller feedback, and prints the tracking RMSE of both
trajectories and the relative degradation. Takes a few minutes.

    python demos/square_benchmark.py [dt ...]
"""

import sys

from slungload.evaluation import evaluate, make_scenario, square_trajectory


def main(spacings):
    print(f"{'dt':>5} {'feedback':>9} {'OL RMSE':>9} {'exec RMSE':>10} {'delta %':>8}")
    for dt in spacings:
        for feedback in ("estimate", "truth"):
            sc = make_scenario(square_trajectory(dt), feedback=feedback)
            rep, _, _ = evaluate(sc, f"square dt={dt}")
            print(f"{dt:5.2f} {feedback:>9} {rep.rmse_ol:9.3f} {rep.rmse_exec:10.3f} {rep.delta_rmse:+8.2f}")


if __name__ == "__main__":
    main([float(a) for a in sys.argv[1:]] or [1.5, 2.0, 2.5])
