"""Compiled inner loops for the teichon flow.

These duplicate the numpy reference path in ``kernel.kernel_blocks`` and
``dynamics`` entry for entry; tests compare the two.
"""

import math

import numpy as np
from numba import njit

_CUTOFF = 0.5e-6
_TWO_PI = 2.0 * math.pi

# vectorisable loops: no zero-division checks, reassociation allowed, but
# keep NaN/inf semantics so finiteness checks stay meaningful
_FAST = dict(cache=True, error_model="numpy", fastmath={"reassoc", "contract", "arcp", "nsz"})

_LN2_HI = 6.93147180369123816490e-01
_LN2_LO = 1.90821492927058770002e-10
_SQRT2 = math.sqrt(2.0)


@njit(**_FAST)
def vlog(x, out, n):
    """Natural log of x[:n] for positive normal x, to a few ulp.

    Exponent/mantissa split through the bit pattern, then the atanh series
    of the reduced mantissa; unlike math.log this loop vectorises.
    """
    bits = x.view(np.int64)
    ob = out.view(np.int64)
    for i in range(n):
        ob[i] = (bits[i] & 0x000FFFFFFFFFFFFF) | 0x3FF0000000000000
    for i in range(n):
        e = np.float64(((bits[i] >> 52) & 0x7FF) - 1023)
        m = out[i]
        big = m > _SQRT2
        m = 0.5 * m if big else m
        e = e + (1.0 if big else 0.0)
        z = (m - 1.0) / (m + 1.0)
        z2 = z * z
        r = 1.0 / 17
        r = r * z2 + 1.0 / 15
        r = r * z2 + 1.0 / 13
        r = r * z2 + 1.0 / 11
        r = r * z2 + 1.0 / 9
        r = r * z2 + 1.0 / 7
        r = r * z2 + 1.0 / 5
        r = r * z2 + 1.0 / 3
        out[i] = e * _LN2_HI + (2.0 * z + 2.0 * z * z2 * r + e * _LN2_LO)
    return out


@njit(cache=True)
def _wrap(d):
    r = (d + math.pi) % _TWO_PI - math.pi
    return r


@njit(cache=True)
def _g_all(s, ch, d):
    """G, G', G'' from s = sin(d/2), ch = cos(d/2); d is the raw difference."""
    if abs(s) < _CUTOFF:
        t = _wrap(d)
        if t == 0.0:
            return 0.5, 0.0, 0.0
        lt2 = math.log(t * t)
        return 0.5 + 0.5 * t * t * (lt2 - 1.5), t * (lt2 - 0.5), lt2 + 1.5
    s2 = s * s
    lg = math.log(4.0 * s2)
    cd = 1.0 - 2.0 * s2
    return 2.0 * s2 * lg + 1.5 * cd - 1.0, 2.0 * s * ch * (lg - 0.5), cd * (lg - 0.5) + 1.0 + cd


@njit(**_FAST)
def _kernel_flat(S, C, X, L, G, G1, G2, n, want_d2):
    """G, G', G'' from half-angle sines S and cosines C (flat, first n entries)."""
    vlog(X, L, n)
    for i in range(n):
        s2 = 0.25 * X[i]
        lg = L[i]
        cd = 1.0 - 2.0 * s2
        G[i] = 2.0 * s2 * lg + 1.5 * cd - 1.0
        G1[i] = 2.0 * S[i] * C[i] * (lg - 0.5)
    if want_d2:
        for i in range(n):
            cd = 1.0 - 0.5 * X[i]
            G2[i] = cd * (L[i] - 0.5) + 1.0 + cd


@njit(cache=True)
def _patch_small(S, C, D, G, G1, G2, n, want_d2):
    """Series values where the half-angle sine is below the cutoff."""
    for i in range(n):
        if abs(S[i]) < _CUTOFF:
            g, g1, g2 = _g_all(S[i], C[i], D[i])
            G[i] = g
            G1[i] = g1
            if want_d2:
                G2[i] = g2


@njit(cache=True)
def fill_blocks(a, b, want_d2):
    """Matrices G, G', G'' at a_i - b_j (G'' empty unless ``want_d2``)."""
    n, m = a.size, b.size
    size = n * m
    S = np.empty(size)
    C = np.empty(size)
    X = np.empty(size)
    L = np.empty(size)
    D = np.empty(size)
    G = np.empty(size)
    G1 = np.empty(size)
    G2 = np.empty(size if want_d2 else 0)
    sb = np.sin(0.5 * b)
    cb = np.cos(0.5 * b)
    _half_angles(a, sb, cb, b, S, C, X, D)
    _kernel_flat(S, C, X, L, G, G1, G2, size, want_d2)
    if _min_abs(S, size) < _CUTOFF:
        _patch_small(S, C, D, G, G1, G2, size, want_d2)
    G2m = G2.reshape(n, m) if want_d2 else np.empty((0, 0))
    return G.reshape(n, m), G1.reshape(n, m), G2m


@njit(**_FAST)
def _half_angles(a, sb, cb, b, S, C, X, D):
    m = b.size
    for i in range(a.size):
        sa = math.sin(0.5 * a[i])
        ca = math.cos(0.5 * a[i])
        base = i * m
        for j in range(m):
            s = sa * cb[j] - ca * sb[j]
            S[base + j] = s
            C[base + j] = ca * cb[j] + sa * sb[j]
            X[base + j] = 4.0 * s * s
            D[base + j] = a[i] - b[j]


@njit(cache=True)
def _rhs(q, p, alpha, dq, dp, dalpha):
    n = q.size
    m = alpha.size
    sq = np.sin(0.5 * q)
    cq = np.cos(0.5 * q)
    acc1 = np.zeros(n)
    for k in range(n):
        dq[k] = 0.5 * p[k]
    # G is even and G' odd, so each unordered pair is evaluated once
    for k in range(n):
        for j in range(k + 1, n):
            s = sq[k] * cq[j] - cq[k] * sq[j]
            ch = cq[k] * cq[j] + sq[k] * sq[j]
            g, g1, _ = _g_all(s, ch, q[k] - q[j])
            dq[k] += p[j] * g
            dq[j] += p[k] * g
            acc1[k] += p[j] * g1
            acc1[j] -= p[k] * g1
    e = 0.0
    for k in range(n):
        dp[k] = -p[k] * acc1[k]
        e += p[k] * dq[k]
    for i in range(m):
        sa = math.sin(0.5 * alpha[i])
        ca = math.cos(0.5 * alpha[i])
        acc = 0.0
        for j in range(n):
            s = sa * cq[j] - ca * sq[j]
            ch = ca * cq[j] + sa * sq[j]
            g, _, _ = _g_all(s, ch, alpha[i] - q[j])
            acc += p[j] * g
        dalpha[i] = acc
    return e


@njit(**_FAST)
def _min_abs(S, n):
    r = np.inf
    for i in range(n):
        r = min(r, abs(S[i]))
    return r


@njit(**_FAST)
def _row(sk, ck, sq, cq, lo, n, sb, cb, xb, lb):
    """Half-angle sine/cosine of x_k - q_j for j in [lo, n) into row buffers; returns min |s|."""
    r = np.inf
    L = n - lo
    for t in range(L):
        s = sk * cq[lo + t] - ck * sq[lo + t]
        sb[t] = s
        cb[t] = ck * cq[lo + t] + sk * sq[lo + t]
        xb[t] = 4.0 * s * s
        r = min(r, abs(s))
    vlog(xb, lb, L)
    return r


@njit(cache=True)
def _row_patch(xk, q, lo, n, sb, cb, gb, g1b, g2b, want_d2):
    """Series values for the entries of a row whose pair nearly coincides."""
    for t in range(n - lo):
        if abs(sb[t]) < _CUTOFF:
            g, g1, g2 = _g_all(sb[t], cb[t], xk - q[lo + t])
            gb[t] = g
            g1b[t] = g1
            if want_d2:
                g2b[t] = g2


@njit(**_FAST)
def _row_values(sb, cb, xb, lb, L, gb, g1b):
    for t in range(L):
        s2 = 0.25 * xb[t]
        lg = lb[t]
        gb[t] = 2.0 * s2 * lg + 1.5 * (1.0 - 2.0 * s2) - 1.0
        g1b[t] = 2.0 * sb[t] * cb[t] * (lg - 0.5)


@njit(**_FAST)
def _row_accumulate(p, k, lo, n, gb, g1b, dq, acc1):
    pk = p[k]
    sg = 0.0
    s1 = 0.0
    for t in range(n - lo):
        g = gb[t]
        g1 = g1b[t]
        sg += p[lo + t] * g
        s1 += p[lo + t] * g1
        dq[lo + t] += pk * g
        acc1[lo + t] -= pk * g1
    dq[k] += sg
    acc1[k] += s1


@njit(**_FAST)
def _dot_row(p, gb, n):
    acc = 0.0
    for t in range(n):
        acc += p[t] * gb[t]
    return acc


@njit(cache=True)
def _rhs_fast(q, p, alpha, dq, dp, dalpha, sb, cb, xb, lb, gb, g1b, acc1):
    """Same as _rhs, row by row through small buffers and the vectorised log."""
    n = q.size
    sq = np.sin(0.5 * q)
    cq = np.cos(0.5 * q)
    for k in range(n):
        dq[k] = 0.5 * p[k]
        acc1[k] = 0.0
    for k in range(n - 1):
        lo = k + 1
        r = _row(sq[k], cq[k], sq, cq, lo, n, sb, cb, xb, lb)
        _row_values(sb, cb, xb, lb, n - lo, gb, g1b)
        if r < _CUTOFF:
            _row_patch(q[k], q, lo, n, sb, cb, gb, g1b, gb, False)
        _row_accumulate(p, k, lo, n, gb, g1b, dq, acc1)
    e = 0.0
    for k in range(n):
        dp[k] = -p[k] * acc1[k]
        e += p[k] * dq[k]
    for i in range(alpha.size):
        sa = math.sin(0.5 * alpha[i])
        ca = math.cos(0.5 * alpha[i])
        r = _row(sa, ca, sq, cq, 0, n, sb, cb, xb, lb)
        _row_values(sb, cb, xb, lb, n, gb, g1b)
        if r < _CUTOFF:
            _row_patch(alpha[i], q, 0, n, sb, cb, gb, g1b, gb, False)
        dalpha[i] = _dot_row(p, gb, n)
    return e


@njit(**_FAST)
def _row_d2(xb, lb, L, g2b):
    for t in range(L):
        cd = 1.0 - 0.5 * xb[t]
        g2b[t] = cd * (lb[t] - 0.5) + 1.0 + cd


@njit(cache=True)
def variation_kernels(q, p, alpha):
    """Stacked kernel matrices for the variational flow.

    K1 = [G; G'; A] and K2 = [G' p; G'' p; A' p] (columns scaled by p), with
    G.. = G..(q_n - q_k) and A.. = G..(alpha_m - q_k), plus the row sums of
    K2.  K1 @ p also gives the teichon and landmark velocities.
    """
    n, m = q.size, alpha.size
    K1 = np.empty((2 * n + m, n))
    K2 = np.empty((2 * n + m, n))
    rs = np.empty(2 * n + m)
    sq = np.sin(0.5 * q)
    cq = np.cos(0.5 * q)
    sb = np.empty(n); cb = np.empty(n); xb = np.empty(n); lb = np.empty(n)
    gb = np.empty(n); g1b = np.empty(n); g2b = np.empty(n)
    for r_ in range(n + m):
        if r_ < n:
            x = q[r_]
            sx, cx = sq[r_], cq[r_]
        else:
            x = alpha[r_ - n]
            sx, cx = math.sin(0.5 * x), math.cos(0.5 * x)
        r = _row(sx, cx, sq, cq, 0, n, sb, cb, xb, lb)
        _row_values(sb, cb, xb, lb, n, gb, g1b)
        want_d2 = r_ < n
        if want_d2:
            _row_d2(xb, lb, n, g2b)
        if r < _CUTOFF:
            _row_patch(x, q, 0, n, sb, cb, gb, g1b, g2b, want_d2)
        if want_d2:
            _store_self(K1, K2, rs, r_, n, p, gb, g1b, g2b)
        else:
            _store_landmark(K1, K2, rs, 2 * n + r_ - n, n, p, gb, g1b)
    return K1, K2, rs


@njit(**_FAST)
def _store_self(K1, K2, rs, k, n, p, gb, g1b, g2b):
    s1 = 0.0
    s2 = 0.0
    for t in range(n):
        K1[k, t] = gb[t]
        K1[n + k, t] = g1b[t]
        a = g1b[t] * p[t]
        b = g2b[t] * p[t]
        K2[k, t] = a
        K2[n + k, t] = b
        s1 += a
        s2 += b
    rs[k] = s1
    rs[n + k] = s2


@njit(**_FAST)
def _store_landmark(K1, K2, rs, row, n, p, gb, g1b):
    s1 = 0.0
    for t in range(n):
        K1[row, t] = gb[t]
        a = g1b[t] * p[t]
        K2[row, t] = a
        s1 += a
    rs[row] = s1


@njit(cache=True)
def rhs_forward(q, p, alpha):
    """Teichon and landmark velocities (dq, dp, dalpha) and the energy p . dq."""
    n, m = q.size, alpha.size
    dq = np.empty(n)
    dp = np.empty(n)
    da = np.empty(m)
    e = _rhs_fast(q, p, alpha, dq, dp, da, np.empty(n), np.empty(n), np.empty(n),
                  np.empty(n), np.empty(n), np.empty(n), np.empty(n))
    return dq, dp, da, e


@njit(cache=True)
def _cyclic_status(x, order, nxt, offset, tol):
    """0 ordered, 1 crossed, 2 crowded."""
    gmin = np.inf
    for i in range(order.size):
        g = x[nxt[i]] - x[order[i]] + offset[i]
        if g <= 0.0:
            return 1
        if g < gmin:
            gmin = g
    if gmin < tol:
        return 2
    return 0


@njit(cache=True)
def rk4_forward(q0, p0, a0, n_steps, q_order, q_next, q_off, a_order, a_next, a_off, tol, check):
    """Fixed-step RK4 of the teichon + landmark flow.

    Returns the state history (one row per step), the energy at each step,
    a status code (0 ok, 1 crossing, 2 crowding, 3 non-finite) and the step
    index at which a failure occurred; ``kind`` is 0 for teichons and 1 for
    landmarks.
    """
    n = q0.size
    m = a0.size
    h = 1.0 / n_steps
    Q = np.empty((n_steps + 1, n))
    P = np.empty((n_steps + 1, n))
    A = np.empty((n_steps + 1, m))
    E = np.empty(n_steps + 1)
    q = q0.copy()
    p = p0.copy()
    a = a0.copy()
    k1q = np.empty(n); k1p = np.empty(n); k1a = np.empty(m)
    k2q = np.empty(n); k2p = np.empty(n); k2a = np.empty(m)
    k3q = np.empty(n); k3p = np.empty(n); k3a = np.empty(m)
    k4q = np.empty(n); k4p = np.empty(n); k4a = np.empty(m)
    sb = np.empty(n); cb = np.empty(n); xb = np.empty(n); lb = np.empty(n)
    gb = np.empty(n); g1b = np.empty(n); acc1 = np.empty(n)
    for step in range(n_steps + 1):
        e = _rhs_fast(q, p, a, k1q, k1p, k1a, sb, cb, xb, lb, gb, g1b, acc1)
        Q[step] = q
        P[step] = p
        A[step] = a
        E[step] = e
        if step == n_steps:
            break
        _rhs_fast(q + 0.5 * h * k1q, p + 0.5 * h * k1p, a + 0.5 * h * k1a, k2q, k2p, k2a,
                  sb, cb, xb, lb, gb, g1b, acc1)
        _rhs_fast(q + 0.5 * h * k2q, p + 0.5 * h * k2p, a + 0.5 * h * k2a, k3q, k3p, k3a,
                  sb, cb, xb, lb, gb, g1b, acc1)
        _rhs_fast(q + h * k3q, p + h * k3p, a + h * k3a, k4q, k4p, k4a,
                  sb, cb, xb, lb, gb, g1b, acc1)
        q = q + h / 6.0 * (k1q + 2.0 * k2q + 2.0 * k3q + k4q)
        p = p + h / 6.0 * (k1p + 2.0 * k2p + 2.0 * k3p + k4p)
        a = a + h / 6.0 * (k1a + 2.0 * k2a + 2.0 * k3a + k4a)
        for i in range(n):
            if not (math.isfinite(q[i]) and math.isfinite(p[i])):
                return Q, P, A, E, 3, step + 1, 0
        if check:
            st = _cyclic_status(q, q_order, q_next, q_off, tol)
            if st != 0:
                return Q, P, A, E, st, step + 1, 0
            if m > 1:
                st = _cyclic_status(a, a_order, a_next, a_off, tol)
                if st != 0:
                    return Q, P, A, E, st, step + 1, 1
    return Q, P, A, E, 0, n_steps, 0
