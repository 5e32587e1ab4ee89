"""Fingerprints of a few shapes and how crowding grows with elongation.

Run: python demos/weld_shapes.py
"""
import numpy as np

from teichons.matching import circle_cross_ratios, delaunay_quadruples
from teichons.shapes import ellipse, regular_polygon
from teichons.welding import crowding_report, fit_both, weld_from_fits

# a circle's weld is a Mobius map, so its cross ratios equal the identity's
poly = regular_polygon(128)
interior, exterior = fit_both(poly)
weld, theta = weld_from_fits(interior, exterior)
quads = delaunay_quadruples(poly)
cw, _, _ = circle_cross_ratios(weld(theta), quads)
ci, _, _ = circle_cross_ratios(theta, quads)
print(f"circle: E2 against identity = {np.mean((1 - cw / ci) ** 2):.2e}")

# elongated ellipses: boundary points bunch up on the circle
print("aspect  R_int*R_ext  min gap  warning  crowded")
for a in (1, 2, 4, 6, 8):
    rep = crowding_report(*fit_both(ellipse(a, 100)))
    print(f"{a:6g}  {rep.product:11.3e}  {min(rep.min_gap_int, rep.min_gap_ext):7.1e}  {rep.warning!s:7}  {rep.crowded}")
