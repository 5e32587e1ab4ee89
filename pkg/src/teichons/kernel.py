"""Weil-Petersson Green's function, its derivatives and Gram matrices.

The kernel is

    G(theta) = (1 - cos theta) log[2 (1 - cos theta)] + 3/2 cos theta - 1,

normalised so its 0 and +-1 Fourier modes vanish.  Its Fourier coefficients
(in the convention v = sum_n v_n e^{i n theta}) are 1/|n^3 - n| for |n| >= 2,
so p^T G p is the WP norm of the teichon velocity field.
"""

from dataclasses import dataclass

import numpy as np

from .errors import CrowdingDetected

TWO_PI = 2.0 * np.pi
EPS = np.finfo(float).eps
SQRT_EPS = np.sqrt(EPS)

# below this |theta| the closed forms are replaced by their expansions
SERIES_CUTOFF = 1e-6


def wrap_angle(theta):
    """Reduce angles to (-pi, pi]."""
    theta = np.asarray(theta, dtype=float)
    r = np.mod(theta + np.pi, TWO_PI) - np.pi
    return np.where(r == -np.pi, np.pi, r)


def canonical_angle(theta):
    """Reduce angles to [0, 2 pi)."""
    r = np.mod(np.asarray(theta, dtype=float), TWO_PI)
    return np.where(r >= TWO_PI, 0.0, r)


def _evaluate(theta, closed, series):
    """Evaluate ``closed`` away from 0 and ``series`` on |theta| < SERIES_CUTOFF."""
    shape = np.shape(theta)
    t = np.atleast_1d(wrap_angle(theta)).ravel()
    small = np.abs(t) < SERIES_CUTOFF
    out = np.empty_like(t)
    big = ~small
    if big.any():
        tb = t[big]
        half = np.sin(0.5 * tb)
        out[big] = closed(tb, np.log(4.0 * half * half), half)
    if small.any():
        ts = t[small]
        zero = ts == 0.0
        ts_safe = np.where(zero, 1.0, ts)
        out[small] = np.where(zero, series(None, None), series(ts_safe, np.log(ts_safe * ts_safe)))
    out = out.reshape(shape)
    return out[()] if out.ndim == 0 else out


def green(theta):
    """G(theta); the removable singularity at 0 is filled with 1/2."""
    return _evaluate(
        theta,
        lambda t, lg, h: 2.0 * h * h * lg + 1.5 * np.cos(t) - 1.0,
        lambda t, lt2: 0.5 if t is None else 0.5 + 0.5 * t * t * (lt2 - 1.5),
    )


def green_d1(theta):
    """G'(theta) = sin(theta) (log[2(1 - cos theta)] - 1/2), zero at 0."""
    return _evaluate(
        theta,
        lambda t, lg, h: np.sin(t) * (lg - 0.5),
        lambda t, lt2: 0.0 if t is None else t * (lt2 - 0.5),
    )


def green_d2(theta):
    """G''(theta) = cos(theta) (log[2(1 - cos theta)] - 1/2) + 1 + cos(theta).

    G'' has a logarithmic singularity at 0; by convention G''(0) = 0.
    """
    return _evaluate(
        theta,
        lambda t, lg, h: np.cos(t) * (lg - 0.5) + 1.0 + np.cos(t),
        lambda t, lt2: 0.0 if t is None else lt2 + 1.5,
    )


def pairwise(a, b=None):
    """Matrix of differences a_i - b_j."""
    a = np.asarray(a, dtype=float)
    b = a if b is None else np.asarray(b, dtype=float)
    return a[:, None] - b[None, :]


def gram_matrix(q):
    """Gram matrix G_ij = G(q_i - q_j) of teichon positions."""
    q = np.atleast_1d(np.asarray(q, dtype=float))
    G = green(pairwise(q))
    # symmetrise against rounding in the wrapped differences
    return 0.5 * (G + G.T)


def cross_gram(q1, q2):
    """Rectangular kernel matrix G(q1_i - q2_j) between two teichon sets."""
    return green(pairwise(q1, q2))


def min_cyclic_gap(q):
    """Smallest distance between cyclically consecutive angles."""
    q = np.sort(canonical_angle(np.atleast_1d(q)))
    if q.size < 2:
        return np.inf
    gaps = np.diff(np.concatenate([q, [q[0] + TWO_PI]]))
    return float(gaps.min())


@dataclass
class GramDiagnostics:
    min_gap: float
    condition: float
    crowded: bool


def gram_diagnostics(q, G=None):
    """Conditioning report for a teichon configuration."""
    if G is None:
        G = gram_matrix(q)
    gap = min_cyclic_gap(q)
    cond = float(np.linalg.cond(G))
    return GramDiagnostics(min_gap=gap, condition=cond, crowded=bool(gap < SQRT_EPS))


def wp_pairing(p1, p2, G):
    """WP* pairing p1^T G p2 of two momentum vectors on the same positions."""
    return float(np.asarray(p1) @ (G @ np.asarray(p2)))


def wp_norm(p, G, tol=1e-12):
    """sqrt(p^T G p); raises CrowdingDetected if the form is negative."""
    e = wp_pairing(p, p, G)
    scale = tol * max(1.0, float(np.abs(G).max()) * float(np.dot(p, p)))
    if e < -scale:
        raise CrowdingDetected(f"negative WP* self-pairing {e:.3e}")
    return float(np.sqrt(max(e, 0.0)))


def field_pairing(p1, q1, p2, q2):
    """WP pairing sum_kl p1_k p2_l G(q1_k - q2_l) of two teichon fields."""
    return float(np.asarray(p1) @ (cross_gram(q1, q2) @ np.asarray(p2)))


@dataclass
class FourierCheck:
    modes: np.ndarray          # n = 2 .. n_max
    residuals: np.ndarray      # |n^3 - n| g_n - 1 for each n
    residuals_neg: np.ndarray  # same for -n
    low_modes: np.ndarray      # g_0, g_1, g_-1


def green_fourier_check(n_max=10, grid_size=4096):
    """Compare the DFT of G with the inverse WP symbol 1/|n^3 - n|.

    Coefficients use v(theta) = sum_n v_n e^{i n theta}, i.e. g_n is the
    grid mean of G(theta_j) e^{-i n theta_j}.
    """
    if n_max < 2 or grid_size < 4 * n_max:
        raise ValueError("need n_max >= 2 and grid_size >= 4 n_max")
    theta = TWO_PI * np.arange(grid_size) / grid_size
    g = np.fft.fft(green(theta)) / grid_size
    n = np.arange(2, n_max + 1)
    symbol = np.abs(n**3 - n)
    res_pos = symbol * g[n] - 1.0
    res_neg = symbol * g[-n] - 1.0
    low = g[[0, 1, -1]]
    return FourierCheck(modes=n, residuals=res_pos, residuals_neg=res_neg, low_modes=low)


def kernel_blocks(a, b, order=2):
    """G, G' (and G'' when ``order == 2``) at all differences a_i - b_j.

    Uses half-angle products so only one logarithm is taken per entry.
    Entries with |a_i - b_j| below the series cutoff (the diagonal when
    ``a is b``) fall back to the scalar routines.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    sa, ca = np.sin(0.5 * a), np.cos(0.5 * a)
    sb, cb = np.sin(0.5 * b), np.cos(0.5 * b)
    s = np.outer(sa, cb) - np.outer(ca, sb)     # sin((a - b) / 2)
    ch = np.outer(ca, cb) + np.outer(sa, sb)    # cos((a - b) / 2)
    near = np.abs(s) < 0.5 * SERIES_CUTOFF
    if near.any():
        s = np.where(near, 1.0, s)
    s2 = s * s
    lg = np.log(4.0 * s2)
    cos_d = 1.0 - 2.0 * s2
    G = 2.0 * s2 * lg + 1.5 * cos_d - 1.0
    G1 = 2.0 * s * ch * (lg - 0.5)
    out = [G, G1]
    if order >= 2:
        out.append(cos_d * (lg - 0.5) + 1.0 + cos_d)
    if near.any():
        d = (a[:, None] - b[None, :])[near]
        for arr, fn in zip(out, (green, green_d1, green_d2)):
            arr[near] = fn(d)
    return out
