"""Angle sum of a geodesic triangle between three rotated ellipses.

Vertices are one ellipse rotated by 0, 2pi/3 and 4pi/3.  In a negatively
curved space the sum falls below pi.  Takes a minute or two per ratio.

Run: python demos/triangle.py 1.6
"""
import math
import sys

from teichons.experiments import triangle

ratio = float(sys.argv[1]) if len(sys.argv) > 1 else 1.6
res = triangle(ratio)
for rec in res.records:
    print(f"edge {rec.label}: distance {rec.distance:.4f}, E2 {rec.final_objective:.1e}")
if res.success:
    print("angles", ", ".join(f"{a:.4f}" for a in res.angles))
    print(f"sum {res.angle_sum:.4f}, deficit {math.pi - res.angle_sum:.4f}")
else:
    print("failed:", res.failure)
