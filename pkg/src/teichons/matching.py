"""Cross-ratio matching over Delaunay quadrilaterals of a polygon.

Each interior diagonal of a Delaunay triangulation of the shape polygon
contributes the four vertices of its quadrilateral; the matching functional
compares cross-ratios of the flowed landmarks with those of the target weld.
"""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DegenerateQuadruple, TriangulationFailure

# relative slack in the angle tests; shields cocircular ties from flip cycles
ANGLE_TOL = 1e-10
IMAG_TOL = 1e-8


@dataclass
class QuadrupleSet:
    quads: np.ndarray  # (K, 4) vertex indices, cyclic around each quadrilateral
    n_points: int

    def __post_init__(self):
        self.quads = np.asarray(self.quads, dtype=np.int64).reshape(-1, 4)

    def __len__(self):
        return len(self.quads)

    @property
    def used(self):
        return np.unique(self.quads)

    def to_json(self):
        return json.dumps({"n_points": int(self.n_points), "quads": self.quads.tolist()})

    @classmethod
    def from_json(cls, text):
        data = json.loads(text)
        if isinstance(data, list):
            quads = np.asarray(data, dtype=np.int64)
            return cls(quads=quads, n_points=int(quads.max()) + 1)
        return cls(quads=data["quads"], n_points=data["n_points"])

    def save(self, path):
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path):
        return cls.from_json(Path(path).read_text())


@dataclass
class CrossRatioTarget:
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(self.values)) or np.any(self.values == 0):
            raise DegenerateQuadruple("target cross-ratios must be finite and nonzero")


# -- triangulation -----------------------------------------------------------

def _cross(a, b, c):
    return ((b - a).conjugate() * (c - a)).imag


def _angle(at, u, v):
    """Interior angle at ``at`` between rays to u and v."""
    return abs(np.angle((u - at) / (v - at)))


def _ear_clip(z):
    n = z.size
    idx = list(range(n))
    scale = float(np.abs(z - z.mean()).max()) ** 2
    tris = []
    while len(idx) > 3:
        m = len(idx)
        pts = z[idx]
        best, best_q = None, -1.0
        for r in range(m):
            a, b, c = pts[r - 1], pts[r], pts[(r + 1) % m]
            if _cross(a, b, c) <= ANGLE_TOL * scale:
                continue
            others = np.delete(np.arange(m), [r - 1 if r else m - 1, r, (r + 1) % m])
            w = pts[others]
            # closed-triangle containment; a vertex on the chord blocks the ear
            inside = (
                (_cross(a, b, w) >= -ANGLE_TOL * scale)
                & (_cross(b, c, w) >= -ANGLE_TOL * scale)
                & (_cross(c, a, w) >= -ANGLE_TOL * scale)
            )
            if inside.any():
                continue
            quality = min(_angle(a, b, c), _angle(b, c, a), _angle(c, a, b))
            if quality > best_q + 1e-12:
                best, best_q = r, quality
        if best is None:
            raise TriangulationFailure("no valid ear; polygon is degenerate")
        m_prev = best - 1 if best else m - 1
        tris.append((idx[m_prev], idx[best], idx[(best + 1) % m]))
        del idx[best]
    a, b, c = (z[i] for i in idx)
    if _cross(a, b, c) <= ANGLE_TOL * scale:
        raise TriangulationFailure("final triangle is degenerate")
    tris.append(tuple(idx))
    return tris


def _edge(i, j):
    return (i, j) if i < j else (j, i)


def _opposite_sum(z, i, j, k, l):
    """Angles at k and l subtended by the diagonal (i, j)."""
    return _angle(z[k], z[i], z[j]) + _angle(z[l], z[i], z[j])


def delaunay_triangles(z):
    """Constrained Delaunay triangulation of a CCW simple polygon (vertices only).

    Ear clipping followed by Lawson flips of interior diagonals.
    """
    z = np.asarray(z, dtype=complex)
    n = z.size
    tris = [tuple(t) for t in _ear_clip(z)]
    boundary = {_edge(i, (i + 1) % n) for i in range(n)}

    changed = True
    sweeps = 0
    while changed:
        changed = False
        sweeps += 1
        if sweeps > 10 * n * n:
            raise TriangulationFailure("edge flipping did not terminate")
        adj = {}
        for t_id, t in enumerate(tris):
            for e in range(3):
                adj.setdefault(_edge(t[e], t[(e + 1) % 3]), []).append(t_id)
        for e, owners in sorted(adj.items()):
            if e in boundary or len(owners) != 2:
                continue
            t1, t2 = tris[owners[0]], tris[owners[1]]
            i, j = e
            k = next(v for v in t1 if v not in e)
            l = next(v for v in t2 if v not in e)
            if _opposite_sum(z, i, j, k, l) > np.pi * (1 + ANGLE_TOL):
                # the quadrilateral is convex here, so (k, l) is a valid diagonal
                tris[owners[0]] = _ccw(z, (k, l, i))
                tris[owners[1]] = _ccw(z, (l, k, j))
                changed = True
                break
    return tris


def _ccw(z, t):
    a, b, c = t
    return (a, b, c) if _cross(z[a], z[b], z[c]) > 0 else (a, c, b)


def diagonals(z, tris=None):
    """Interior diagonals with their two opposite vertices: list of (i, j, k, l)."""
    n = len(z)
    if tris is None:
        tris = delaunay_triangles(z)
    boundary = {_edge(i, (i + 1) % n) for i in range(n)}
    adj = {}
    for t in tris:
        for e in range(3):
            edge = _edge(t[e], t[(e + 1) % 3])
            adj.setdefault(edge, []).append(next(v for v in t if v not in edge))
    out = []
    for edge, opp in sorted(adj.items()):
        if edge in boundary:
            continue
        if len(opp) != 2:
            raise TriangulationFailure(f"diagonal {edge} is not shared by two triangles")
        out.append((edge[0], edge[1], opp[0], opp[1]))
    return out


def delaunay_quadruples(poly, subset=None):
    """Quadruples of the M - 3 Delaunay diagonals.

    ``poly`` is a Polygon or CCW vertex array.  With ``subset`` the
    triangulation is built on those vertices and indices refer back to the
    full polygon.
    """
    z = getattr(poly, "vertices", poly)
    z = np.asarray(z, dtype=complex)
    n_points = z.size
    idx = np.arange(n_points) if subset is None else np.asarray(subset)
    zs = z[idx]
    if zs.size < 4:
        raise TriangulationFailure("need at least 4 vertices")
    diag = diagonals(zs)
    if len(diag) != zs.size - 3:
        raise TriangulationFailure(f"expected {zs.size - 3} diagonals, got {len(diag)}")
    quads = np.sort(np.array(diag, dtype=np.int64), axis=1)
    return QuadrupleSet(quads=idx[quads], n_points=n_points)


# -- cross-ratios ------------------------------------------------------------

def cross_ratio(z1, z2, z3, z4):
    """(z1 - z3)(z2 - z4) / ((z2 - z3)(z1 - z4))."""
    z1, z2, z3, z4 = (np.asarray(z, dtype=complex) for z in (z1, z2, z3, z4))
    den = (z2 - z3) * (z1 - z4)
    if np.any(den == 0):
        raise DegenerateQuadruple("cross-ratio denominator vanishes")
    return (z1 - z3) * (z2 - z4) / den


def _unit_diff(a, b):
    """e^{ia} - e^{ib}, computed without cancellation."""
    return 2j * np.exp(0.5j * (a + b)) * np.sin(0.5 * (a - b))


def circle_cross_ratios(alpha, quads):
    """Cross-ratios of e(alpha) on every quadruple, with the real-part check."""
    alpha = np.asarray(alpha, dtype=float)
    Q = quads.quads if isinstance(quads, QuadrupleSet) else np.asarray(quads)
    a1, a2, a3, a4 = (alpha[Q[:, c]] for c in range(4))
    d13, d24 = _unit_diff(a1, a3), _unit_diff(a2, a4)
    d23, d14 = _unit_diff(a2, a3), _unit_diff(a1, a4)
    den = d23 * d14
    if np.any(np.abs(den) == 0):
        raise DegenerateQuadruple("coincident landmarks in a quadruple")
    C = d13 * d24 / den
    mag = np.abs(C)
    if np.any(np.abs(C.imag) > IMAG_TOL * np.maximum(mag, np.finfo(float).tiny)):
        raise DegenerateQuadruple("cross-ratio of circle points is not real")
    return C.real, (a1, a2, a3, a4), (d13, d24, d23, d14)


def matching_objective(alpha, quads, target):
    """E2 = mean_k (1 - C_k(e(alpha)) / target_k)^2."""
    t = _target_values(target)
    C, _, _ = circle_cross_ratios(alpha, quads)
    r = 1.0 - C / t
    return float(np.mean(r * r))


def _partials(alpha, quads):
    """Cross-ratios C_k and dC_k/dalpha at each of the four quadruple slots."""
    alpha = np.asarray(alpha, dtype=float)
    Q = quads.quads if isinstance(quads, QuadrupleSet) else np.asarray(quads)
    C, (a1, a2, a3, a4), (d13, d24, d23, d14) = circle_cross_ratios(alpha, quads)
    z1, z2, z3, z4 = (np.exp(1j * a) for a in (a1, a2, a3, a4))
    # dC/dz_j times dz_j/dalpha_j = i z_j
    dC = np.stack(
        [
            C * (1.0 / d13 - 1.0 / d14) * 1j * z1,
            C * (1.0 / d24 - 1.0 / d23) * 1j * z2,
            C * (-1.0 / d13 + 1.0 / d23) * 1j * z3,
            C * (-1.0 / d24 + 1.0 / d14) * 1j * z4,
        ],
        axis=1,
    ).real
    return C, Q, dC


def _target_values(target):
    return target.values if isinstance(target, CrossRatioTarget) else np.asarray(target, dtype=float)


def objective_gradient_alpha(alpha, quads, target):
    """Analytic dE2/dalpha through e(x) = exp(ix) and the cross-ratio."""
    t = _target_values(target)
    C, Q, dC = _partials(alpha, quads)
    w = -2.0 * (1.0 - C / t) / t / len(C)
    grad = np.zeros(np.size(alpha))
    np.add.at(grad, Q, w[:, None] * dC)
    return grad


def residual_jacobian_alpha(alpha, quads, target):
    """Residuals r_k = 1 - C_k / target_k and the dense Jacobian dr/dalpha.

    E2 = mean(r^2), so dE2/dalpha = 2 J^T r / K.
    """
    t = _target_values(target)
    C, Q, dC = _partials(alpha, quads)
    K = len(C)
    J = np.zeros((K, np.size(alpha)))
    np.add.at(J, (np.repeat(np.arange(K), 4), Q.ravel()), (-dC / t[:, None]).ravel())
    return 1.0 - C / t, J


def target_from_weld(weld, theta, quads):
    """Cross-ratios of e(psi(theta_m)) for the target weld psi."""
    values, _, _ = circle_cross_ratios(weld(np.asarray(theta, dtype=float)), quads)
    return CrossRatioTarget(values)
