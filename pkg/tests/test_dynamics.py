import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from teichons import _accel
from teichons.checks import random_admissible
from teichons.dynamics import (
    energy,
    horizontality_residual,
    integrate,
    rhs_landmarks,
    rhs_teichon,
    rhs_variations,
    VariationState,
    snapshot_grid,
    velocity_at,
    velocity_grid,
)
from teichons.errors import EnergyDrift, OrderingViolation
from teichons.kernel import TWO_PI, green


def brute_rhs(q, p):
    n = q.size
    dq = np.array([sum(p[j] * green(q[k] - q[j]) for j in range(n)) for k in range(n)])
    h = 1e-6
    dG = lambda t: (green(t + h) - green(t - h)) / (2 * h)
    dp = np.array([-p[k] * sum(p[j] * dG(q[k] - q[j]) for j in range(n) if j != k) for k in range(n)])
    return dq, dp


def test_rhs_against_brute_force():
    rng = np.random.default_rng(0)
    q, p = random_admissible(rng, 7)
    dq, dp = rhs_teichon(q, p)
    bq, bp = brute_rhs(q, p)
    assert np.allclose(dq, bq, atol=1e-13)
    assert np.allclose(dp, bp, atol=1e-8)


def test_compiled_rhs_matches_numpy():
    rng = np.random.default_rng(1)
    q, p = random_admissible(rng, 40)
    alpha = np.sort(rng.uniform(0, TWO_PI, 13))
    dq, dp, da, e = _accel.rhs_forward(q, p, alpha)
    rq, rp = rhs_teichon(q, p)
    assert np.allclose(dq, rq, atol=1e-13)
    assert np.allclose(dp, rp, atol=1e-13)
    assert np.allclose(da, rhs_landmarks(q, p, alpha), atol=1e-13)
    assert e == pytest.approx(energy(q, p), rel=1e-12)


def test_compiled_variation_kernels_match_numpy():
    rng = np.random.default_rng(2)
    N, M = 9, 5
    q, p = random_admissible(rng, N)
    alpha = np.sort(rng.uniform(0, TWO_PI, M))
    var = VariationState(rng.normal(size=(M, N)), rng.normal(size=(N, N)), rng.normal(size=(N, N)))
    from teichons.dynamics import _stacked_terms

    K1, K2, rs = _accel.variation_kernels(q, p, alpha)
    fast = _stacked_terms(p, K1, K2, rs, var, N)
    ref = rhs_variations(q, p, alpha, var)
    for a, b in zip((fast.beta, fast.piv, fast.chi), (ref.beta, ref.piv, ref.chi)):
        assert np.allclose(a, b, atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10**6), st.integers(4, 12))
def test_conservation(seed, n):
    rng = np.random.default_rng(seed)
    q, p = random_admissible(rng, n, 0.5)
    traj = integrate(q, p, dt=1e-3)
    e = np.array([s.energy for s in traj.snapshots])
    assert np.abs(e - e[0]).max() / e[0] < 1e-6
    for s in traj.snapshots:
        assert max(horizontality_residual(s.q, s.p)) < 1e-8
        # cyclic order is unchanged
        assert np.all(np.diff(s.q) > 0) and s.q[-1] - s.q[0] < TWO_PI


def test_time_reversal():
    rng = np.random.default_rng(3)
    q, p = random_admissible(rng, 8, 0.8)
    alpha = np.sort(rng.uniform(0, TWO_PI, 6))
    fwd = integrate(q, p, alpha, dt=1e-3).final
    back = integrate(fwd.q, -fwd.p, fwd.alpha, dt=1e-3).final
    assert np.allclose(back.q, q, atol=1e-9)
    assert np.allclose(back.alpha, alpha, atol=1e-9)
    assert np.allclose(-back.p, p, atol=1e-9)


def test_rotation_equivariance():
    rng = np.random.default_rng(4)
    q, p = random_admissible(rng, 6)
    alpha = np.sort(rng.uniform(0, TWO_PI, 4))
    a = integrate(q, p, alpha, dt=2e-3).final
    b = integrate(q + 0.7, p, alpha + 0.7, dt=2e-3).final
    assert np.allclose(b.q, a.q + 0.7, atol=1e-12)
    assert np.allclose(b.alpha, a.alpha + 0.7, atol=1e-12)


def test_landmark_on_teichon_follows_it():
    rng = np.random.default_rng(5)
    q, p = random_admissible(rng, 6)
    traj = integrate(q, p, q[[1, 4]], dt=1e-3, check_order=False)
    assert np.allclose(traj.final.alpha, traj.final.q[[1, 4]], atol=1e-12)


def test_zero_momentum_is_static():
    q = TWO_PI * np.arange(5) / 5
    traj = integrate(q, np.zeros(5), q + 0.1)
    assert np.array_equal(traj.final.q, q)
    assert np.array_equal(traj.final.alpha, q + 0.1)


def test_jacobians_against_central_differences():
    rng = np.random.default_rng(6)
    N, M = 6, 9
    q, p = random_admissible(rng, N, 0.6)
    alpha = np.sort(rng.uniform(0, TWO_PI, M))
    var = integrate(q, p, alpha, with_variations=True, dt=1e-3).final.variations
    h = 1e-6
    for k in range(N):
        e = np.zeros(N)
        e[k] = h
        fp = integrate(q, p + e, alpha, dt=1e-3, energy_tol=1.0).final
        fm = integrate(q, p - e, alpha, dt=1e-3, energy_tol=1.0).final
        assert np.allclose(var.beta[:, k], (fp.alpha - fm.alpha) / (2 * h), atol=1e-7)
        assert np.allclose(var.chi[:, k], (fp.q - fm.q) / (2 * h), atol=1e-7)
        assert np.allclose(var.piv[:, k], (fp.p - fm.p) / (2 * h), atol=1e-7)


def test_snapshot_grid_and_velocity_grid():
    rng = np.random.default_rng(7)
    q, p = random_admissible(rng, 5)
    traj = integrate(q, p)
    assert np.allclose(traj.times, np.arange(21) / 20)
    assert np.allclose(snapshot_grid(), traj.times)
    th, t, V = velocity_grid(traj, 32)
    assert V.shape == (21, 32)
    s = traj.snapshots[7]
    assert V[7, 3] == pytest.approx(velocity_at(th[3], s.q, s.p)[0])


def test_energy_drift_is_reported():
    rng = np.random.default_rng(8)
    q, p = random_admissible(rng, 6, 3.0)
    with pytest.raises(EnergyDrift):
        integrate(q, p, dt=0.25, energy_tol=1e-14, max_halvings=1)


def test_ordering_violation_from_coarse_steps():
    # the exact flow never collides; a huge step makes RK4 jump two teichons past each other
    q = np.array([0.0, 0.05, 2.0, 4.0])
    p = np.array([100.0, -100.0, 0.0, 0.0])
    with pytest.raises(OrderingViolation):
        integrate(q, p, dt=0.5, times=[0.0, 1.0], energy_tol=np.inf, max_halvings=0)
