import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from teichons.errors import MonotonicityViolation
from teichons.kernel import TWO_PI, wrap_angle
from teichons.matching import circle_cross_ratios, delaunay_quadruples, target_from_weld
from teichons.shapes import Polygon, ellipse, regular_polygon
from teichons.welding import (
    Weld,
    crowding_report,
    fit_both,
    fit_exterior,
    fit_interior,
    lift_cyclic,
    refine_edges,
    weld_from_shape,
)


def joukowski_angles(m):
    # exterior map w -> ((a+b) w + (a-b)/w) / 2 sends e^{it} to (a cos t, b sin t)
    return TWO_PI * np.arange(m) / m


def test_ellipse_exterior_matches_joukowski():
    poly = ellipse(3.0, 256)
    ext = fit_exterior(poly)
    err = np.abs(wrap_angle(ext.theta - joukowski_angles(256))).max()
    assert err < 1e-2
    # much better than the criterion; guards against regressions in the normalisation
    assert err < 1e-3


def test_circle_exterior_and_interior_angles():
    poly = regular_polygon(64, phase=0.3)
    interior, exterior = fit_both(poly)
    t = TWO_PI * np.arange(64) / 64 + 0.3
    # a 64-gon is not a circle: its maps differ from the identity by O(1/M^2)
    assert np.abs(wrap_angle(exterior.theta - t)).max() < 1e-3
    gaps = np.diff(lift_cyclic(interior.theta))
    assert np.allclose(gaps, TWO_PI / 64, atol=1e-3)


def test_pull_near_vertices_lands_near_circle_angles():
    # vertices themselves are slit endpoints; probe just off the boundary
    poly = ellipse(2.0, 48)
    interior, exterior = fit_both(poly)
    for fit, scale, side in ((interior, 0.999, -1), (exterior, 1.001, 1)):
        w = fit.pull(scale * poly.vertices)
        assert np.all(side * (np.abs(w) - 1) > 0)
        assert np.abs(np.abs(w) - 1).max() < 5e-3
        assert np.abs(wrap_angle(np.angle(w) - fit.theta)).max() < 2e-3


def test_interior_pull_maps_inside_to_disk():
    poly = ellipse(2.0, 64)
    interior = fit_interior(poly)
    pts = np.array([0.1 + 0.2j, -1.2 + 0.1j, 1.5 - 0.3j])
    assert np.all(np.abs(interior.pull(pts)) < 1)


def test_circle_weld_is_mobius_trivial():
    poly = regular_polygon(128)
    weld, theta = weld_from_shape(poly)
    quads = delaunay_quadruples(poly)
    c_weld, _, _ = circle_cross_ratios(weld(theta), quads)
    c_id, _, _ = circle_cross_ratios(theta, quads)
    assert np.mean((1 - c_weld / c_id) ** 2) < 1e-6


def test_similarity_invariance():
    poly = ellipse(3.0, 96)
    w1, th1 = weld_from_shape(poly)
    w2, th2 = weld_from_shape(poly.transformed(2.5, 0.7, 1 + 2j))
    quads = delaunay_quadruples(poly)
    t1 = target_from_weld(w1, th1, quads).values
    t2 = target_from_weld(w2, th2, quads).values
    assert np.abs(t1 / t2 - 1).max() < 1e-6


def test_mobius_image_converges():
    # straight edges between moved vertices are a different polygon, so agreement
    # improves with refinement rather than holding to rounding at fixed M
    errs = []
    a = 0.3 + 0.2j
    for m in (32, 64, 128):
        poly = regular_polygon(m)
        z = poly.vertices
        moved = Polygon((z - a) / (1 - np.conj(a) * z))
        wa, ta = weld_from_shape(poly)
        wb, tb = weld_from_shape(moved)
        q = delaunay_quadruples(poly)
        errs.append(np.abs(target_from_weld(wa, ta, q).values / target_from_weld(wb, tb, q).values - 1).max())
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 1e-2


def test_crowding_grows_with_aspect():
    products = []
    for a in (1.0, 2.0, 4.0, 6.0):
        rep = crowding_report(*fit_both(ellipse(a, 100)))
        products.append(rep.product)
        assert not rep.crowded
    assert np.all(np.diff(products) > 0)
    assert products[0] == pytest.approx(1.0, abs=1e-2)
    assert crowding_report(*fit_both(ellipse(6.0, 100))).warning
    assert not crowding_report(*fit_both(ellipse(2.0, 100))).warning


def test_refine_edges_keeps_vertices():
    z = regular_polygon(7).vertices
    r = refine_edges(z, 4)
    assert r.size == 28
    assert np.array_equal(r[::4], z)


def test_weld_interpolation_periodic_and_exact():
    rng = np.random.default_rng(1)
    te = np.sort(rng.uniform(0, TWO_PI, 30))
    ti = te + 0.2 * np.sin(te)
    w = Weld(te, ti)
    assert np.allclose(w(te), ti, atol=1e-14)
    x = rng.uniform(-10, 10, 50)
    assert np.allclose(w(x + TWO_PI), w(x) + TWO_PI, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_weld_monotone(seed):
    rng = np.random.default_rng(seed)
    te = np.sort(rng.uniform(0, TWO_PI, 20))
    ti = te + 0.3 * np.sin(te + rng.uniform(0, 6))
    w = Weld(te, ti)
    x = np.linspace(-TWO_PI, 2 * TWO_PI, 2000)
    assert np.all(np.diff(w(x)) > 0)


def test_weld_rejects_non_monotone():
    with pytest.raises(MonotonicityViolation):
        Weld([0.0, 1.0, 2.0, 3.0], [0.0, 2.0, 1.0, 3.0])


def test_identity_and_compose_left():
    ident = Weld.identity_weld()
    x = np.array([0.1, 2.0, 7.0])
    assert np.array_equal(ident(x), x)
    te = TWO_PI * np.arange(16) / 16
    w = Weld(te, te).compose_left(lambda t: t + 0.5)
    assert np.allclose(w(te), te + 0.5)


def test_weld_json_roundtrip(tmp_path):
    w, _ = weld_from_shape(ellipse(2.0, 40))
    w.save(tmp_path / "w.json")
    back = Weld.load(tmp_path / "w.json")
    x = np.linspace(0, TWO_PI, 77)
    assert np.allclose(back(x), w(x), atol=1e-14)
