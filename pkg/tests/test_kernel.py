import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from teichons.errors import CrowdingDetected
from teichons.kernel import (
    SERIES_CUTOFF,
    TWO_PI,
    canonical_angle,
    cross_gram,
    field_pairing,
    gram_diagnostics,
    gram_matrix,
    green,
    green_d1,
    green_d2,
    green_fourier_check,
    kernel_blocks,
    min_cyclic_gap,
    wp_norm,
    wrap_angle,
)

angles = st.floats(-20.0, 20.0, allow_nan=False)
away = angles.filter(lambda t: abs(wrap_angle(t)) > 1e-2)


def closed_form(t):
    c = np.cos(t)
    return (1 - c) * np.log(2 * (1 - c)) + 1.5 * c - 1


def test_value_at_zero():
    assert green(0.0) == 0.5
    assert green(TWO_PI) == 0.5
    assert green_d1(0.0) == 0.0
    assert green_d2(0.0) == 0.0


@given(away)
def test_matches_closed_form(t):
    assert green(t) == pytest.approx(closed_form(t), rel=1e-12, abs=1e-14)


@given(angles)
def test_even_and_periodic(t):
    assert green(t) == pytest.approx(green(-t), abs=1e-13)
    assert green(t + TWO_PI) == pytest.approx(green(t), abs=1e-12)
    assert green_d1(t) == pytest.approx(-green_d1(-t), abs=1e-12)


@given(away)
def test_first_derivative_fd(t):
    h = 1e-6
    fd = (green(t + h) - green(t - h)) / (2 * h)
    assert green_d1(t) == pytest.approx(fd, abs=1e-8)


@given(away)
def test_second_derivative_fd(t):
    h = 1e-5
    fd = (green_d1(t + h) - green_d1(t - h)) / (2 * h)
    assert green_d2(t) == pytest.approx(fd, rel=1e-6, abs=1e-7)


@pytest.mark.parametrize("t", [1e-8, 5e-7, 9.99e-7, 1.01e-6, 3e-6])
def test_series_branch_continuity(t):
    # both branches agree with a high-precision reference across the cutoff
    import mpmath as mp

    mp.mp.dps = 40
    ref = float((1 - mp.cos(t)) * mp.log(2 * (1 - mp.cos(t))) + mp.mpf(3) / 2 * mp.cos(t) - 1)
    assert green(t) == pytest.approx(ref, rel=1e-14)
    ref1 = float(mp.sin(t) * (mp.log(2 * (1 - mp.cos(t))) - mp.mpf(1) / 2))
    assert green_d1(t) == pytest.approx(ref1, rel=1e-9)


def test_small_angle_expansion():
    t = 1e-4
    exact = 0.5 + 0.5 * t * t * (np.log(t * t) - 1.5)
    assert abs(green(t) - exact) / exact < 1e-12


def test_fourier_coefficients():
    fc = green_fourier_check(n_max=10)
    assert np.abs(fc.residuals).max() < 1e-6
    assert np.abs(fc.residuals_neg).max() < 1e-6
    # 0, +-1 vanish up to aliasing of the high modes, about 2 zeta(3) / grid^3
    alias = 2 * 1.2020569 / 4096**3
    assert np.abs(fc.low_modes).max() < 1.1 * alias


def test_wp_norm_equals_fourier_sum():
    rng = np.random.default_rng(4)
    q = np.sort(rng.uniform(0, TWO_PI, 9))
    p = rng.normal(size=9)
    n = np.arange(2, 20001)
    pn = np.exp(1j * np.outer(n, q)) @ p
    fourier = 2 * np.sum(np.abs(pn) ** 2 / (n**3 - n))
    G = gram_matrix(q)
    # drop the 0 and +-1 contributions, which G does not see
    assert p @ G @ p == pytest.approx(fourier, rel=1e-7)


def test_gram_positive_semidefinite():
    rng = np.random.default_rng(5)
    q = np.sort(rng.uniform(0, TWO_PI, 30))
    ev = np.linalg.eigvalsh(gram_matrix(q))
    assert ev.min() > -1e-12


def test_wp_norm_rejects_negative_form():
    G = -np.eye(3)
    with pytest.raises(CrowdingDetected):
        wp_norm(np.ones(3), G)


def test_kernel_blocks_agree_with_scalar():
    rng = np.random.default_rng(6)
    a = rng.uniform(0, TWO_PI, 15)
    b = np.concatenate([a[:3] + 1e-9, rng.uniform(0, TWO_PI, 5)])
    G, G1, G2 = kernel_blocks(a, b)
    d = a[:, None] - b[None, :]
    assert np.allclose(G, green(d), atol=1e-13)
    assert np.allclose(G1, green_d1(d), atol=1e-13)
    assert np.allclose(G2, green_d2(d), rtol=1e-12, atol=1e-12)


def test_cross_gram_and_field_pairing():
    rng = np.random.default_rng(7)
    q1, q2 = rng.uniform(0, TWO_PI, 4), rng.uniform(0, TWO_PI, 6)
    p1, p2 = rng.normal(size=4), rng.normal(size=6)
    brute = sum(p1[k] * p2[l] * closed_form(q1[k] - q2[l]) for k in range(4) for l in range(6))
    assert field_pairing(p1, q1, p2, q2) == pytest.approx(brute, rel=1e-12)
    assert cross_gram(q1, q2).shape == (4, 6)


@settings(max_examples=50)
@given(st.lists(st.floats(-10, 10, allow_nan=False), min_size=2, max_size=20))
def test_min_cyclic_gap_brute_force(xs):
    q = np.array(xs)
    c = canonical_angle(q)
    d = np.abs(c[:, None] - c[None, :])
    brute = np.minimum(d, TWO_PI - d)[~np.eye(len(c), dtype=bool)].min()
    assert min_cyclic_gap(q) == pytest.approx(brute, abs=1e-12)


def test_gram_diagnostics_flags_close_pairs():
    q = np.array([0.0, 1e-9, 2.0, 4.0])
    assert gram_diagnostics(q).crowded
    assert not gram_diagnostics(np.linspace(0, 5, 6)).crowded


@given(angles)
def test_wrap_ranges(t):
    w, c = wrap_angle(t), canonical_angle(t)
    assert -np.pi < w <= np.pi
    assert 0 <= c < TWO_PI
    assert np.cos(w) == pytest.approx(np.cos(t), abs=1e-12)
    assert SERIES_CUTOFF > 0
