"""Conformal welding of polygons with the geodesic zipper.

One pass of the zipper maps the plane, cut along a curve of hyperbolic
geodesic arcs through the polygon vertices, onto two half-planes: the
interior lands in the lower half-plane and the exterior in the upper one.
Each vertex therefore has two real images, one per side, and the weld is
read off after a Möbius normalisation of each half-plane onto the disk
(interior) or the disk exterior (exterior, with infinity fixed and a
positive derivative there).
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import PchipInterpolator

from .errors import MonotonicityViolation, NumericalBreakdown
from .kernel import EPS, SQRT_EPS, TWO_PI, canonical_angle


# -- elementary maps ---------------------------------------------------------

def _slit_params(c):
    """(b, d) for the map opening the geodesic from 0 to c; b is inf if Re c == 0."""
    r2 = c.real * c.real + c.imag * c.imag
    b = np.inf if c.real == 0.0 else r2 / c.real
    return b, r2 / c.imag


def _mobius(z, b):
    if np.isinf(b):
        return z, np.ones_like(z)
    den = 1.0 - z / b
    return z / den, 1.0 / (den * den)


def _open_complex(w, d):
    """sqrt(w^2 + d^2) with the branch ~ w at infinity, for w in the upper half-plane."""
    return w * np.sqrt(1.0 + (d / w) ** 2)


def _open_real(x, d):
    return np.copysign(np.hypot(x, d), x)


def _slit_map(z, b, d):
    """Apply one slit map to complex points, returning images and derivatives."""
    w, dw = _mobius(z, b)
    f = _open_complex(w, d)
    return f, dw * w / f


def _slit_map_real(x, b, d):
    w, _ = _mobius(x, b)
    return _open_real(w, d)


def _first_map(z, z0, z1):
    return 1j * np.sqrt((z - z1) / (z - z0))


def _point_in_polygon(pt, z):
    """Winding-number test."""
    ang = np.angle((np.roll(z, -1) - pt) / (z - pt))
    return abs(ang.sum()) > np.pi


def _interior_point(z):
    c = z.mean()
    if _point_in_polygon(c, z):
        # pull towards the area centroid for a point well away from the edges
        return c
    from .matching import _ear_clip

    tris = _ear_clip(z)
    areas = [abs(((z[b] - z[a]).conjugate() * (z[c_] - z[a])).imag) for a, b, c_ in tris]
    a, b, c_ = tris[int(np.argmax(areas))]
    return (z[a] + z[b] + z[c_]) / 3.0


# -- map approximation -------------------------------------------------------

@dataclass
class ConformalMapApprox:
    """One side of a zipper fit.

    ``theta`` are the circle angles whose images are the polygon vertices.
    The slit parameters and normalisation are shared by both sides; ``pull``
    replays them to send points of the region to the disk side.
    """

    side: str                 # "interior" or "exterior"
    vertices: np.ndarray
    theta: np.ndarray
    z0: complex
    z1: complex
    slits: np.ndarray         # (M - 2, 2) rows (b, d)
    zeta0: float
    anchor: complex           # half-plane image of the normalisation point
    rotation: complex = 1.0
    extra: dict = field(default_factory=dict)
    theta_refined: np.ndarray = None  # angles of every refined boundary point, vertices first in each edge

    def _to_half_plane(self, z):
        z = np.asarray(z, dtype=complex)
        h = _first_map(z, self.z0, self.z1)
        for b, d in self.slits:
            h, _ = _slit_map(h, b, d)
        if np.isfinite(self.zeta0):
            h, _ = _mobius(h, self.zeta0)
        return h * h

    def pull(self, z):
        """Approximate inverse map: region point(s) to the disk side."""
        h = self._to_half_plane(z)
        if self.side == "interior":
            return (h - self.anchor) / (h - np.conj(self.anchor))
        return self.rotation * (h - np.conj(self.anchor)) / (h - self.anchor)

    def boundary_speed(self):
        """Chord over angle increment on consecutive vertices, |f'| on the circle."""
        chord = np.abs(np.roll(self.vertices, -1) - self.vertices)
        dth = np.mod(np.roll(self.theta, -1) - self.theta, TWO_PI)
        with np.errstate(divide="ignore"):
            # coincident angles (a crowded fit) give an infinite speed
            return chord / dth


def _zip(z):
    """Run the geodesic zipper on CCW vertices z; returns shared fit data."""
    M = z.size
    z0, z1 = z[0], z[1]
    pin = _interior_point(z)

    # points still in the open half-plane: pending vertices 2..M-1, interior anchor
    pending = _first_map(z[2:], z0, z1)
    anchor_in = complex(_first_map(np.array([pin]), z0, z1)[0])
    # exterior anchor is the image of infinity; track d/du with u = 1/z
    p_inf = 1j
    dp_inf = 0.5j * (z0 - z1)

    # two real images per vertex; z0 sits at infinity until the first slit map
    x_in = np.full(M, np.nan)
    x_out = np.full(M, np.nan)
    zeta0 = np.inf
    slits = np.empty((M - 2, 2))

    for k in range(2, M):
        c = pending[k - 2]
        if not (np.isfinite(c) and c.imag > 0.0):
            raise NumericalBreakdown(f"vertex {k} left the upper half-plane", index=k)
        b, d = _slit_params(c)
        slits[k - 2] = b, d

        done = slice(1, k - 1)
        x_in[done] = _slit_map_real(x_in[done], b, d)
        x_out[done] = _slit_map_real(x_out[done], b, d)
        # vertex k-1 sits at 0 and splits across the slit
        x_in[k - 1], x_out[k - 1] = -d, d
        if np.isinf(zeta0):
            zeta0 = -b if np.isfinite(b) else np.inf
            if np.isfinite(zeta0):
                zeta0 = float(_open_real(zeta0, d))
        else:
            zeta0 = float(_slit_map_real(zeta0, b, d))

        rest = pending[k - 1:]
        if rest.size:
            pending[k - 1:], _ = _slit_map(rest, b, d)
        anchor_in, _ = _slit_map(anchor_in, b, d)
        p_inf, der = _slit_map(p_inf, b, d)
        dp_inf = dp_inf * der
        pending[k - 2] = 0.0

        if not (np.all(np.isfinite(x_in[done])) and np.all(np.isfinite(x_out[done]))
                and np.isfinite(anchor_in) and np.isfinite(p_inf)):
            raise NumericalBreakdown(f"non-finite image after vertex {k}", index=k)

    # last vertex at 0, z0 at zeta0: send zeta0 to infinity and fold
    x_in[M - 1] = x_out[M - 1] = 0.0
    if np.isfinite(zeta0):
        x_in[1:], _ = _mobius(x_in[1:], zeta0)
        x_out[1:], _ = _mobius(x_out[1:], zeta0)
        anchor_in, _ = _mobius(anchor_in, zeta0)
        p_inf, der = _mobius(p_inf, zeta0)
        dp_inf = dp_inf * der
    x_in, x_out = x_in * x_in, x_out * x_out
    dp_inf = dp_inf * 2.0 * p_inf
    anchor_in, p_inf = anchor_in * anchor_in, p_inf * p_inf

    if not np.all(np.isfinite(x_in[1:])) or not np.all(np.isfinite(x_out[1:])):
        raise NumericalBreakdown("non-finite boundary image", index=None)
    if not anchor_in.imag < 0.0:
        raise NumericalBreakdown("interior point mapped to the exterior side", index=None)
    if not p_inf.imag > 0.0:
        raise NumericalBreakdown("infinity mapped to the interior side", index=None)
    return dict(
        z0=z0, z1=z1, slits=slits, zeta0=zeta0, x_in=x_in, x_out=x_out,
        anchor_in=anchor_in, p_inf=p_inf, dp_inf=dp_inf,
    )


def _boundary_angles(w):
    """arg of circle images; vertex 0 (image infinity) has w = 1 by construction."""
    return canonical_angle(np.angle(w))


def refine_edges(z, factor):
    """Insert factor - 1 equispaced points on every edge."""
    if factor <= 1:
        return z
    t = np.arange(factor) / factor
    return (z[:, None] + (np.roll(z, -1) - z)[:, None] * t[None, :]).ravel()


# geodesic arcs between refined points hug the straight edges; the circle weld
# drops from ~1e-5 to ~1e-7 in matching objective at this setting
DEFAULT_REFINE = 8


def _fits(poly, refine=DEFAULT_REFINE):
    z = np.asarray(getattr(poly, "vertices", poly), dtype=complex)
    if z.size < 4:
        raise ValueError("polygon needs at least 4 vertices")
    refine = max(1, int(refine))
    try:
        data = _zip(refine_edges(z, refine))
    except NumericalBreakdown as err:
        if err.index is not None:
            err.index //= refine
        raise
    pc, pi, D = data["anchor_in"], data["p_inf"], data["dp_inf"]

    # interior: lower half-plane to the disk, anchor to 0; infinity goes to 1
    n = z.size * refine
    w_in = np.empty(n, dtype=complex)
    w_in[0] = 1.0
    x = data["x_in"][1:]
    w_in[1:] = (x - pc) / (x - np.conj(pc))

    # exterior: upper half-plane to the disk exterior, image of infinity to infinity
    lam = 2j * pi.imag / D
    rot = np.conj(lam) / abs(lam)
    w_out = np.empty(n, dtype=complex)
    w_out[0] = rot
    x = data["x_out"][1:]
    w_out[1:] = rot * (x - np.conj(pi)) / (x - pi)

    common = dict(vertices=z, z0=data["z0"], z1=data["z1"], slits=data["slits"], zeta0=data["zeta0"])
    interior = ConformalMapApprox(
        side="interior", theta=_boundary_angles(w_in[::refine]), anchor=pc,
        theta_refined=_boundary_angles(w_in), **common,
    )
    exterior = ConformalMapApprox(
        side="exterior", theta=_boundary_angles(w_out[::refine]), anchor=pi, rotation=rot,
        extra={"capacity": 1.0 / abs(lam)}, theta_refined=_boundary_angles(w_out), **common,
    )
    return interior, exterior


def fit_interior(poly, refine=DEFAULT_REFINE):
    """Zipper approximation of the disk-to-interior map of ``poly``."""
    return _fits(poly, refine)[0]


def fit_exterior(poly, refine=DEFAULT_REFINE):
    """Zipper approximation of the exterior map, fixing infinity with positive derivative."""
    return _fits(poly, refine)[1]


def fit_both(poly, refine=DEFAULT_REFINE):
    """Interior and exterior fits from a single zipper pass."""
    return _fits(poly, refine)


WARN_PRODUCT = 1e5


# -- welds -------------------------------------------------------------------

def lift_cyclic(theta):
    """Unwrap a cyclically increasing angle sequence to a strictly increasing one."""
    theta = np.asarray(theta, dtype=float)
    steps = np.mod(np.diff(theta), TWO_PI)
    return theta[0] + np.concatenate([[0.0], np.cumsum(steps)])


def _cyclic_gaps(lifted):
    return np.diff(np.concatenate([lifted, [lifted[0] + TWO_PI]]))


class Weld:
    """Circle homeomorphism theta_ext -> theta_int stored as samples.

    Evaluation is a shape-preserving cubic (PCHIP) on the lifted line, padded
    by one period each side so the interpolant is periodic to rounding.
    """

    def __init__(self, theta_ext, theta_int, identity=False):
        te = np.asarray(theta_ext, dtype=float).ravel()
        ti = np.asarray(theta_int, dtype=float).ravel()
        if te.shape != ti.shape or te.size < 2:
            raise ValueError("weld needs matching sample arrays of length >= 2")
        te = canonical_angle(te)
        order = np.argsort(te, kind="stable")
        te, ti = te[order], lift_cyclic(ti[order])
        gaps_e = np.diff(np.concatenate([te, [te[0] + TWO_PI]]))
        if np.any(gaps_e <= 0) or ti[-1] - ti[0] >= TWO_PI or np.any(np.diff(ti) <= 0):
            raise MonotonicityViolation("weld samples are not strictly cyclically increasing")
        self.theta_ext = te
        self.theta_int = ti
        self.identity = identity
        x = np.concatenate([te - TWO_PI, te, te + TWO_PI])
        y = np.concatenate([ti - TWO_PI, ti, ti + TWO_PI])
        self._interp = PchipInterpolator(x, y, extrapolate=True)

    def __len__(self):
        return self.theta_ext.size

    @classmethod
    def identity_weld(cls, n=64):
        t = TWO_PI * np.arange(n) / n
        return cls(t, t, identity=True)

    def __call__(self, theta):
        return weld_eval(self, theta)

    def compose_left(self, mobius):
        """Weld A o psi for a circle map A acting on angles."""
        return Weld(self.theta_ext, mobius(self.theta_int))

    def gaps(self):
        return _cyclic_gaps(self.theta_ext), _cyclic_gaps(self.theta_int)

    def to_json(self):
        return json.dumps(np.column_stack([self.theta_ext, self.theta_int]).tolist())

    @classmethod
    def from_json(cls, text):
        data = json.loads(text)
        if isinstance(data, dict):
            data = data["samples"]
        arr = np.asarray(data, dtype=float)
        if arr.ndim != 2 or arr.shape[1] != 2:
            raise ValueError("weld JSON must be a list of [theta_ext, theta_int] pairs")
        return cls(arr[:, 0], arr[:, 1])

    def save(self, path):
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path):
        return cls.from_json(Path(path).read_text())


def weld_eval(w, theta):
    """psi(theta), with psi(theta + 2 pi) = psi(theta) + 2 pi."""
    theta = np.asarray(theta, dtype=float)
    if w.identity:
        return theta.copy() if theta.ndim else theta[()]
    k = np.floor(theta / TWO_PI)
    r = theta - TWO_PI * k
    # canonical form may round up to exactly 2 pi
    r = np.where(r >= TWO_PI, r - TWO_PI, r)
    base = w._interp(r)
    # exact at samples: PCHIP already interpolates, but guard the padding seam
    idx = np.searchsorted(w.theta_ext, r)
    hit = (idx < w.theta_ext.size) & (w.theta_ext[np.minimum(idx, w.theta_ext.size - 1)] == r)
    base = np.where(hit, w.theta_int[np.minimum(idx, w.theta_ext.size - 1)], base)
    out = base + TWO_PI * k
    return out[()] if out.ndim == 0 else out


@dataclass
class CrowdingReport:
    r_int: float
    r_ext: float
    product: float
    min_gap_ext: float
    min_gap_int: float
    crowded: bool
    warning: bool = False

    def to_dict(self):
        return {k: (bool(v) if isinstance(v, (bool, np.bool_)) else float(v)) for k, v in self.__dict__.items()}


def crowding_report(map_int, map_ext):
    """Derivative-ratio diagnostics R = max|f'| / min|f'| for both fits."""
    s_int = map_int.boundary_speed()
    s_ext = map_ext.boundary_speed()
    r_int = float(s_int.max() / s_int.min())
    r_ext = float(s_ext.max() / s_ext.min())
    g_ext = float(_cyclic_gaps(np.sort(map_ext.theta)).min())
    g_int = float(_cyclic_gaps(np.sort(map_int.theta)).min())
    product = r_int * r_ext
    crowded = product > 1.0 / EPS or min(g_ext, g_int) < SQRT_EPS
    # five of the ~16 digits lost: landmarks start to bunch long before failure
    warning = crowded or product > WARN_PRODUCT
    return CrowdingReport(r_int, r_ext, product, g_ext, g_int, bool(crowded), bool(warning))


def weld_from_shape(poly, return_maps=False, refine=DEFAULT_REFINE):
    """Weld samples (theta_m, interior angle of z_m) and the exterior angles theta_m."""
    interior, exterior = fit_both(poly, refine)
    return weld_from_fits(interior, exterior, return_maps)


def weld_from_fits(interior, exterior, return_maps=False):
    """Weld from already computed interior and exterior fits."""
    # the weld of a polygon has corner singularities at the vertices; the refined
    # edge points resolve them, cutting the error off the vertices about tenfold
    te = exterior.theta if exterior.theta_refined is None else exterior.theta_refined
    ti = interior.theta if interior.theta_refined is None else interior.theta_refined
    try:
        w = Weld(te, ti)
    except MonotonicityViolation as err:
        raise MonotonicityViolation(f"sampled weld is not monotone ({err}); shape is likely crowded")
    # theta in vertex order, as used for the landmarks
    if return_maps:
        return w, exterior.theta.copy(), (interior, exterior)
    return w, exterior.theta.copy()
