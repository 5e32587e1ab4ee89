"""Shoot a geodesic from the unit circle to an ellipse of aspect ratio 3.

Prints the per-stage log and the distance, then the velocity amplitude at a
few times; the WP norm of the velocity stays constant along the path.
"""
import numpy as np

from teichons.dynamics import energy
from teichons.experiments import weld_checked
from teichons.optimizer import ShootingConfig, shoot
from teichons.shapes import ellipse
from teichons.welding import Weld

shape = ellipse(3.0, 100)
target, theta, report = weld_checked(shape)
print(f"crowding product {report.product:.1f}")

cfg = ShootingConfig(n_landmarks=100, stage_sizes=[25, 50, 100], descent_mode="levenberg-marquardt")
res = shoot(Weld.identity_weld(), target, shape, cfg, theta=theta)
for st in res.stages:
    print(f"stage {st.stage}: M = {st.n_landmarks:3d}, {st.iterations} iterations, "
          f"E2 {st.start_objective:.2e} -> {st.final_objective:.2e}")
print(f"distance {res.distance:.4f}, success {res.success}")

for snap in res.trajectory.snapshots[::5]:
    print(f"t = {snap.t:.2f}: max |p| = {np.abs(snap.p).max():.3f}, "
          f"WP norm = {np.sqrt(energy(snap.q, snap.p)):.6f}")
