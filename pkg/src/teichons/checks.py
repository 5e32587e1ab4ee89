"""Fast self-checks behind ``teichons verify``.

Each check compares an implementation against an independent oracle
(closed forms, finite differences, invariance) on small random instances.
"""

import math
from dataclasses import dataclass

import numpy as np

from .dynamics import horizontality_residual, integrate
from .kernel import gram_matrix, green, green_fourier_check
from .matching import CrossRatioTarget, circle_cross_ratios, delaunay_quadruples, matching_objective
from .optimizer import constraint_matrix, equispaced, project_horizontal
from .shapes import regular_polygon
from .welding import weld_from_shape


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def disk_automorphism(a, phi):
    """Angle map of z -> e^{i phi} (z - a) / (1 - conj(a) z), |a| < 1."""
    def f(theta):
        z = np.exp(1j * np.asarray(theta, dtype=float))
        return np.angle(np.exp(1j * phi) * (z - a) / (1.0 - np.conj(a) * z))
    return f


def random_admissible(rng, n, scale=1.0):
    """Sorted positions with a minimum spacing and momenta with no 0, +-1 modes."""
    while True:
        q = np.sort(rng.uniform(0.0, 2 * np.pi, n))
        if np.min(np.diff(np.concatenate([q, [q[0] + 2 * np.pi]]))) > 0.2 / n:
            break
    p = rng.normal(size=n)
    F = constraint_matrix(q)
    p -= F.T @ np.linalg.lstsq(F @ F.T, F @ p, rcond=None)[0]
    return q, scale * p / max(np.abs(p).max(), 1e-300)


def check_kernel():
    g0 = float(green(0.0))
    th = 1e-4
    series = 0.5 + 0.5 * th**2 * (math.log(th**2) - 1.5)
    rel = abs(float(green(th)) - series) / series
    fc = green_fourier_check()
    worst = float(max(np.abs(fc.residuals).max(), np.abs(fc.residuals_neg).max()))
    ok = abs(g0 - 0.5) < 1e-15 and rel < 1e-6 and worst < 1e-6
    return CheckResult("kernel", ok, f"G(0)-1/2={g0 - 0.5:.1e}, series rel {rel:.1e}, Fourier {worst:.1e}")


def check_conservation(n_configs=5, seed=0):
    rng = np.random.default_rng(seed)
    worst_e = worst_h = 0.0
    for _ in range(n_configs):
        n = int(rng.integers(4, 13))
        q, p = random_admissible(rng, n, 0.5)
        traj = integrate(q, p, dt=1e-3, energy_tol=1.0)
        e = [s.energy for s in traj.snapshots]
        worst_e = max(worst_e, abs(e[-1] - e[0]) / abs(e[0]))
        for s in traj.snapshots:
            worst_h = max(worst_h, max(horizontality_residual(s.q, s.p)))
    ok = worst_e < 1e-6 and worst_h < 1e-8
    return CheckResult("conservation", ok, f"energy drift {worst_e:.1e}, horizontality {worst_h:.1e}")


def check_jacobian(seed=1, h=1e-6):
    rng = np.random.default_rng(seed)
    q, p = random_admissible(rng, 6, 0.5)
    alpha = np.sort(rng.uniform(0, 2 * np.pi, 8))
    beta = integrate(q, p, alpha, with_variations=True, dt=1e-3).final.variations.beta
    fd = np.empty_like(beta)
    for k in range(p.size):
        e = np.zeros_like(p)
        e[k] = h
        ap = integrate(q, p + e, alpha, dt=1e-3, energy_tol=1.0).final.alpha
        am = integrate(q, p - e, alpha, dt=1e-3, energy_tol=1.0).final.alpha
        fd[:, k] = (ap - am) / (2 * h)
    rel = float(np.abs(beta - fd).max() / np.abs(fd).max())
    return CheckResult("jacobian", rel < 1e-4, f"relative error vs central differences {rel:.1e}")


def check_projection(seed=2):
    rng = np.random.default_rng(seed)
    q = equispaced(16)
    G, F = gram_matrix(q), constraint_matrix(q)
    v = rng.normal(size=16)
    Pv = project_horizontal(v, F, G)
    idem = float(np.abs(project_horizontal(Pv, F, G) - Pv).max() / np.abs(Pv).max())
    feas = float(np.abs(F @ Pv).max() / np.abs(v).max())
    ok = idem < 1e-12 and feas < 1e-10
    return CheckResult("projection", ok, f"idempotence {idem:.1e}, F v {feas:.1e}")


def check_mobius(n_maps=20, seed=3):
    rng = np.random.default_rng(seed)
    poly = regular_polygon(12)
    quads = delaunay_quadruples(poly)
    alpha = np.sort(rng.uniform(0, 2 * np.pi, 12))
    target = CrossRatioTarget(rng.uniform(-3, -0.2, len(quads)))
    e0 = matching_objective(alpha, quads, target)
    worst = 0.0
    for _ in range(n_maps):
        a = 0.7 * rng.uniform() * np.exp(2j * np.pi * rng.uniform())
        f = disk_automorphism(a, rng.uniform(0, 2 * np.pi))
        worst = max(worst, abs(matching_objective(f(alpha), quads, target) - e0) / e0)
    return CheckResult("mobius", worst < 1e-12, f"relative change {worst:.1e}")


def check_circle_weld(m=64):
    poly = regular_polygon(m)
    weld, theta = weld_from_shape(poly)
    quads = delaunay_quadruples(poly)
    c_weld, _, _ = circle_cross_ratios(weld(theta), quads)
    c_id, _, _ = circle_cross_ratios(theta, quads)
    e2 = float(np.mean((1 - c_weld / c_id) ** 2))
    return CheckResult("circle weld", e2 < 1e-6, f"E2 against identity {e2:.1e}")


def run_checks(quick=True):
    n = 5 if quick else 20
    checks = [
        check_kernel,
        lambda: check_conservation(n),
        check_jacobian,
        check_projection,
        lambda: check_mobius(20 if quick else 100),
        lambda: check_circle_weld(64 if quick else 128),
    ]
    return [c() for c in checks]
