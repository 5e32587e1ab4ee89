"""Distance from the circle to ellipses of growing aspect ratio.

Beyond ratio 2 the curve is close to a straight line.  Takes about a minute.
"""
from teichons.experiments import ellipse_sweep

res = ellipse_sweep([1, 1.5, 2, 3, 4, 5, 6])
print("ratio  distance  E2")
for r, rec in zip(res.ratios, res.records):
    print(f"{r:5g}  {rec.distance:8.4f}  {rec.final_objective:.1e}")
print(f"tail slope {res.slope:.3f}, intercept {res.intercept:.3f}, monotone {res.monotone}")
