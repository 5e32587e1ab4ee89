"""N-teichon geodesic flow, landmark advection and first variations.

The teichon system is

    dq_k/dt =        sum_j p_j G (q_k - q_j)
    dp_k/dt = -p_k * sum_j p_j G'(q_k - q_j)

and landmarks move with the velocity field v(theta) = sum_j p_j G(theta - q_j).
The variational system carries beta = d alpha / d p0, piv = d p / d p0 and
chi = d q / d p0 along the flow so the final landmark Jacobian is available
after one forward pass.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import CrowdingDetected, EnergyDrift, OrderingViolation
from ._accel import rk4_forward, variation_kernels
from .kernel import SQRT_EPS, TWO_PI, canonical_angle, green, kernel_blocks

log = logging.getLogger(__name__)


@dataclass
class TeichonState:
    q: np.ndarray
    p: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float)
        self.p = np.asarray(self.p, dtype=float)
        if self.q.shape != self.p.shape:
            raise ValueError("q and p must have the same length")


@dataclass
class LandmarkSet:
    alpha: np.ndarray
    theta_ref: np.ndarray = None

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=float)
        if self.theta_ref is None:
            self.theta_ref = self.alpha.copy()
        self.theta_ref = np.asarray(self.theta_ref, dtype=float)


@dataclass
class VariationState:
    beta: np.ndarray  # (M, N)  d alpha_m / d p0
    piv: np.ndarray   # (N, N)  d p_n / d p0
    chi: np.ndarray   # (N, N)  d q_n / d p0

    @classmethod
    def initial(cls, n_teichons, n_landmarks):
        return cls(
            beta=np.zeros((n_landmarks, n_teichons)),
            piv=np.eye(n_teichons),
            chi=np.zeros((n_teichons, n_teichons)),
        )


@dataclass
class Snapshot:
    t: float
    q: np.ndarray
    p: np.ndarray
    alpha: np.ndarray
    energy: float
    variations: VariationState = None


@dataclass
class Trajectory:
    snapshots: list
    energy_log: list = field(default_factory=list)
    dt: float = None

    @property
    def final(self):
        return self.snapshots[-1]

    @property
    def times(self):
        return np.array([s.t for s in self.snapshots])

    def to_dict(self):
        return {
            "dt": self.dt,
            "snapshots": [
                {
                    "t": s.t,
                    "q": s.q.tolist(),
                    "p": s.p.tolist(),
                    "alpha": s.alpha.tolist(),
                    "energy": s.energy,
                }
                for s in self.snapshots
            ],
        }


def energy(q, p):
    """E = p^T G(q) p, the squared WP norm of the teichon velocity."""
    G, _ = kernel_blocks(q, q, order=1)
    return float(p @ G @ p)


def rhs_teichon(q, p):
    """Right-hand side (dq, dp) of the teichon ODE."""
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    B, B1 = kernel_blocks(q, q, order=1)
    return B @ p, -p * (B1 @ p)


def rhs_landmarks(q, p, alpha):
    """Landmark velocities d alpha_m = sum_n p_n G(alpha_m - q_n)."""
    A = green(np.subtract.outer(np.asarray(alpha, dtype=float), np.asarray(q, dtype=float)))
    return A @ np.asarray(p, dtype=float)


def velocity_at(theta, q, p):
    """Evaluate v(theta) = sum_j p_j G(theta - q_j)."""
    return rhs_landmarks(q, p, np.atleast_1d(theta))


def rhs_variations(q, p, alpha, var):
    """Time derivative of the first variations (beta, piv, chi).

    Differentiating the teichon and landmark equations with respect to p0:

        beta'_m = sum_k [pi_k G(a_m - q_k) + p_k G'(a_m - q_k)(beta_m - chi_k)]
        pi'_n   = -pi_n sum_k p_k G'(q_n - q_k)
                  - p_n sum_k [pi_k G'(q_n - q_k) + p_k G''(q_n - q_k)(chi_n - chi_k)]
        chi'_n  = sum_k [pi_k G(q_n - q_k) + p_k G'(q_n - q_k)(chi_n - chi_k)]

    with G''(0) = 0 (the self terms carry chi_n - chi_n = 0 anyway).
    """
    B, B1, B2 = kernel_blocks(q, q, order=2)
    A, A1 = kernel_blocks(alpha, q, order=1)
    return _variation_terms(p, B, B1, B2, A, A1, var.beta, var.piv, var.chi)


def _variation_terms(p, B, B1, B2, A, A1, beta, piv, chi):
    B1p = B1 * p
    B2p = B2 * p
    A1p = A1 * p
    s1 = B1p.sum(axis=1)
    dbeta = A @ piv + A1p.sum(axis=1)[:, None] * beta - A1p @ chi
    dchi = B @ piv + s1[:, None] * chi - B1p @ chi
    dpiv = -s1[:, None] * piv - p[:, None] * (
        B1 @ piv + B2p.sum(axis=1)[:, None] * chi - B2p @ chi
    )
    return VariationState(beta=dbeta, piv=dpiv, chi=dchi)


def _stacked_terms(p, K1, K2, rs, var, N):
    """Variational right-hand side from the stacked kernels of variation_kernels."""
    T = K1 @ var.piv
    U = K2 @ var.chi
    s1 = rs[:N, None]
    dchi = T[:N] + s1 * var.chi - U[:N]
    dpiv = -s1 * var.piv - p[:, None] * (T[N:2 * N] + rs[N:2 * N, None] * var.chi - U[N:2 * N])
    dbeta = T[2 * N:] + rs[2 * N:, None] * var.beta - U[2 * N:]
    return VariationState(beta=dbeta, piv=dpiv, chi=dchi)


def horizontality_residual(q, p):
    """(|sum p|, |Re sum p e^{iq}|, |Im sum p e^{iq}|)."""
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    z = np.sum(p * np.exp(1j * q))
    return float(abs(p.sum())), float(abs(z.real)), float(abs(z.imag))


def velocity_grid(traj, theta_res=256):
    """Sample v(theta, t) on a uniform theta grid at every snapshot time.

    Returns (theta, t, V) with V[i, j] = v(theta_j, t_i).
    """
    theta = TWO_PI * np.arange(theta_res) / theta_res
    V = np.array([velocity_at(theta, s.q, s.p) for s in traj.snapshots])
    return theta, traj.times, V


class _CyclicOrder:
    """Tracks the gaps between cyclically consecutive lifted angles."""

    def __init__(self, x0):
        x0 = np.asarray(x0, dtype=float)
        self.order = np.argsort(canonical_angle(x0), kind="stable")
        nxt = np.roll(self.order, -1)
        # integer winding offsets so that every initial gap lies in (0, 2 pi)
        gap0 = x0[nxt] - x0[self.order]
        self.offset = TWO_PI * np.ceil(-gap0 / TWO_PI)
        if x0.size == 1:
            self.offset = np.array([TWO_PI])
        self.next = nxt

    def gaps(self, x):
        return x[self.next] - x[self.order] + self.offset


def _check_order(tracker, x, what, t):
    if tracker is None or x.size < 2:
        return
    g = tracker.gaps(x)
    if np.any(g <= 0.0):
        raise OrderingViolation(f"{what} crossed at t={t:.4f}")
    if g.min() < SQRT_EPS:
        raise CrowdingDetected(f"{what} gap {g.min():.2e} below sqrt(eps) at t={t:.4f}")


def snapshot_grid(n_snapshots=21):
    return np.linspace(0.0, 1.0, n_snapshots)


def _step_count(dt, times):
    """Number of RK4 steps on [0, 1] such that each snapshot time is a step."""
    n = max(1, int(np.ceil(1.0 / dt - 1e-9)))
    # snapshot times k/(n_snap-1) need n divisible by (n_snap-1) when possible
    denom = len(times) - 1
    if denom > 0 and np.allclose(times, np.linspace(0, 1, len(times))):
        n = int(np.ceil(n / denom) * denom)
    return n


def integrate(
    q0,
    p0,
    alpha0=None,
    with_variations=False,
    dt=1.0 / 200,
    times=None,
    energy_tol=1e-6,
    max_halvings=3,
    check_order=True,
):
    """Integrate the coupled system over t in [0, 1] with classical RK4.

    ``times`` are the snapshot times (default t = n/20).  If the relative
    energy drift exceeds ``energy_tol`` the step is halved and the run retried
    up to ``max_halvings`` times before EnergyDrift is raised.
    """
    times = snapshot_grid() if times is None else np.asarray(times, dtype=float)
    if dt <= 0:
        raise ValueError("dt must be positive")
    last_err = None
    for _ in range(max_halvings + 1):
        try:
            return _integrate_fixed(q0, p0, alpha0, with_variations, dt, times, energy_tol, check_order)
        except (EnergyDrift, OrderingViolation) as err:
            last_err = err
            dt = 0.5 * dt
            log.debug("%s; retrying with dt = %.3g", err, dt)
    raise last_err


def _integrate_fixed(q0, p0, alpha0, with_variations, dt, times, energy_tol, check_order):
    q = np.array(q0, dtype=float)
    p = np.array(p0, dtype=float)
    N = q.size
    alpha = np.zeros(0) if alpha0 is None else np.array(alpha0, dtype=float)
    M = alpha.size

    n_steps = _step_count(dt, times)
    h = 1.0 / n_steps
    snap_steps = [int(round(t * n_steps)) for t in times]

    q_order = _CyclicOrder(q)
    a_order = _CyclicOrder(alpha) if M > 1 else _CyclicOrder(np.zeros(1))
    if check_order:
        _check_order(q_order, q, "teichons", 0.0)
        _check_order(a_order if M > 1 else None, alpha, "landmarks", 0.0)

    if with_variations:
        Q, P, A, E, betas, pivs, chis = _rk4_variations(
            q, p, alpha, n_steps, q_order, a_order if M > 1 else None, check_order, set(snap_steps)
        )
    else:
        Q, P, A, E, status, where, kind = rk4_forward(
            q, p, alpha, n_steps,
            q_order.order, q_order.next, q_order.offset,
            a_order.order, a_order.next, a_order.offset,
            SQRT_EPS, check_order,
        )
        if status:
            what = "landmarks" if kind else "teichons"
            t = where * h
            if status == 1:
                raise OrderingViolation(f"{what} crossed at t={t:.4f}")
            if status == 2:
                raise CrowdingDetected(f"{what} gap below sqrt(eps) at t={t:.4f}")
            raise CrowdingDetected(f"non-finite state at t={t:.4f}")

    e0 = E[0]
    if e0 > 0:
        drift = np.abs(E - e0) / e0
        if drift.max() > energy_tol:
            i = int(np.argmax(drift > energy_tol))
            raise EnergyDrift(f"relative energy drift {drift[i]:.2e} at t={i * h:.4f}")

    snapshots = []
    for t, i in zip(times, snap_steps):
        variations = None
        if with_variations:
            variations = VariationState(beta=betas[i], piv=pivs[i], chi=chis[i])
        snapshots.append(
            Snapshot(t=float(t), q=Q[i].copy(), p=P[i].copy(), alpha=A[i].copy(),
                     energy=float(E[i]), variations=variations)
        )
    energy_log = [(float(t), float(E[i])) for t, i in zip(times, snap_steps)]
    return Trajectory(snapshots=snapshots, energy_log=energy_log, dt=h)


def _rk4_variations(q, p, alpha, n_steps, q_order, a_order, check_order, keep):
    N, M = q.size, alpha.size
    h = 1.0 / n_steps
    var = VariationState.initial(N, M)
    Q = np.empty((n_steps + 1, N))
    P = np.empty((n_steps + 1, N))
    A = np.empty((n_steps + 1, M))
    E = np.empty(n_steps + 1)
    betas, pivs, chis = {}, {}, {}

    def rhs(q, p, alpha, var):
        K1, K2, rs = variation_kernels(q, p, alpha)
        v = K1 @ p
        dq = v[:N]
        dp = -p * v[N:2 * N]
        dalpha = v[2 * N:]
        dvar = _stacked_terms(p, K1, K2, rs, var, N)
        return dq, dp, dalpha, dvar, float(p @ dq)

    for step in range(n_steps + 1):
        k1 = rhs(q, p, alpha, var)
        Q[step], P[step], A[step], E[step] = q, p, alpha, k1[4]
        if step in keep:
            betas[step], pivs[step], chis[step] = var.beta, var.piv, var.chi
        if step == n_steps:
            break
        k2 = rhs(*_advance(q, p, alpha, var, k1, 0.5 * h))
        k3 = rhs(*_advance(q, p, alpha, var, k2, 0.5 * h))
        k4 = rhs(*_advance(q, p, alpha, var, k3, h))
        q = q + h / 6.0 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        p = p + h / 6.0 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        if M:
            alpha = alpha + h / 6.0 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
        var = VariationState(
            beta=var.beta + h / 6.0 * (k1[3].beta + 2 * k2[3].beta + 2 * k3[3].beta + k4[3].beta),
            piv=var.piv + h / 6.0 * (k1[3].piv + 2 * k2[3].piv + 2 * k3[3].piv + k4[3].piv),
            chi=var.chi + h / 6.0 * (k1[3].chi + 2 * k2[3].chi + 2 * k3[3].chi + k4[3].chi),
        )
        t = (step + 1) * h
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(p))):
            raise CrowdingDetected(f"non-finite state at t={t:.4f}")
        if check_order:
            _check_order(q_order, q, "teichons", t)
            _check_order(a_order, alpha, "landmarks", t)
    return Q, P, A, E, betas, pivs, chis


def _advance(q, p, alpha, var, k, h):
    qn = q + h * k[0]
    pn = p + h * k[1]
    an = alpha + h * k[2] if alpha.size else alpha
    vn = None
    if var is not None:
        vn = VariationState(
            beta=var.beta + h * k[3].beta,
            piv=var.piv + h * k[3].piv,
            chi=var.chi + h * k[3].chi,
        )
    return qn, pn, an, vn
