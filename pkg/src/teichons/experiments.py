"""Circle-to-ellipse distance sweep and the geodesic triangle angle sum.

Both experiments are batches of independent shoots.  With ``jobs > 1`` the
shoots run in worker processes; results are gathered in submission order so
the output does not depend on scheduling.
"""

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import CrowdingDetected, MonotonicityViolation, TeichonError
from .kernel import field_pairing
from .optimizer import ShootingConfig, shoot
from .shapes import ellipse
from .welding import DEFAULT_REFINE, Weld, crowding_report, fit_both, weld_from_fits

log = logging.getLogger(__name__)

TRIANGLE_ROTATIONS = (0.0, 2.0 * np.pi / 3.0, 4.0 * np.pi / 3.0)

# Batch runs default to damped Gauss-Newton steps: CG is far too slow at N = 100
SWEEP_DEFAULTS = {"n_landmarks": 100, "stage_sizes": [25, 50, 100], "descent_mode": "levenberg-marquardt"}
TRIANGLE_DEFAULTS = {
    "n_landmarks": 128,
    "stage_sizes": [32, 64, 128],
    "descent_mode": "levenberg-marquardt",
    # near-circular vertices start below any fixed tolerance; angles need real momenta
    "final_rel_tol": 1e-2,
}


@dataclass
class ShootRecord:
    label: str
    distance: float
    final_objective: float
    success: bool
    failure: str = None
    iterations: int = 0
    seconds: float = 0.0
    crowding_product: float = float("nan")
    p0: list = None

    def row(self):
        d = asdict(self)
        d.pop("p0")
        return d


def weld_checked(poly, force_crowded=False, report_hook=None, refine=DEFAULT_REFINE):
    """Weld a polygon, refusing crowded shapes unless forced.

    The crowding check runs on the two fits before the weld is assembled;
    a crowded weld is usually not even monotone.  ``report_hook`` sees the
    report first (the CLI writes it out even when refusing).
    """
    interior, exterior = fit_both(poly, refine)
    report = crowding_report(interior, exterior)
    if report_hook is not None:
        report_hook(report)
    if report.crowded and not force_crowded:
        raise CrowdingDetected(
            f"crowding product {report.product:.3g}, min gap {min(report.min_gap_ext, report.min_gap_int):.3g}"
        )
    weld, theta = weld_from_fits(interior, exterior)
    return weld, theta, report


def _run_shoot(label, template, target_weld, target_poly, theta, cfg, report):
    t0 = time.perf_counter()
    try:
        res = shoot(template, target_weld, target_poly, cfg, theta=theta)
    except TeichonError as err:
        return ShootRecord(label, float("nan"), float("nan"), False, f"{type(err).__name__}: {err}",
                           seconds=time.perf_counter() - t0, crowding_product=report.product)
    its = sum(s.iterations for s in res.stages)
    rec = ShootRecord(
        label, float(res.distance), float(res.final_objective), bool(res.success), res.failure,
        its, time.perf_counter() - t0, float(report.product), np.asarray(res.p0).tolist(),
    )
    log.info("shoot %s: distance %.5f, E2 %.2e, %d iterations, %.1f s",
             label, rec.distance, rec.final_objective, its, rec.seconds)
    return rec


def _ellipse_job(ratio, cfg, force_crowded):
    label = f"aspect={ratio:g}"
    try:
        poly = ellipse(ratio, cfg.n_landmarks)
        weld, theta, report = weld_checked(poly, force_crowded)
    except (TeichonError, ValueError) as err:
        return ShootRecord(label, float("nan"), float("nan"), False, f"{type(err).__name__}: {err}")
    return _run_shoot(label, Weld.identity_weld(), weld, poly, theta, cfg, report)


def _map_jobs(fn, args, jobs):
    if jobs <= 1 or len(args) <= 1:
        return [fn(*a) for a in args]
    with ProcessPoolExecutor(max_workers=min(jobs, len(args))) as pool:
        futures = [pool.submit(fn, *a) for a in args]
        return [f.result() for f in futures]


# -- ellipse sweep ------------------------------------------------------------

@dataclass
class SweepResult:
    ratios: list
    records: list
    slope: float = float("nan")
    intercept: float = float("nan")
    tail: list = field(default_factory=list)
    monotone: bool = False
    max_tail_residual: float = float("nan")

    @property
    def distances(self):
        return np.array([r.distance for r in self.records])

    @property
    def success(self):
        return all(r.success for r in self.records) and self.monotone

    def to_dict(self):
        return {
            "ratios": list(self.ratios),
            "records": [asdict(r) for r in self.records],
            "slope": self.slope,
            "intercept": self.intercept,
            "tail": list(self.tail),
            "monotone": self.monotone,
            "max_tail_residual": self.max_tail_residual,
        }


def fit_tail(ratios, distances, tail_start=2.0):
    """Least-squares line through the points with ratio >= tail_start."""
    r = np.asarray(ratios, dtype=float)
    d = np.asarray(distances, dtype=float)
    keep = (r >= tail_start) & np.isfinite(d)
    if keep.sum() < 2:
        return float("nan"), float("nan"), r[keep].tolist(), float("nan")
    slope, intercept = np.polyfit(r[keep], d[keep], 1)
    resid = d[keep] - (slope * r[keep] + intercept)
    return float(slope), float(intercept), r[keep].tolist(), float(np.abs(resid).max())


def check_monotone(ratios, distances):
    order = np.argsort(ratios)
    d = np.asarray(distances, dtype=float)[order]
    if not np.all(np.isfinite(d)):
        return False
    return bool(np.all(np.diff(d) > 0))


def ellipse_sweep(ratios, cfg=None, jobs=1, force_crowded=False, tail_start=2.0):
    """Shoot from the circle to ellipses of each aspect ratio and fit the tail slope.

    Per-ratio failures are recorded and the sweep continues.
    """
    ratios = [float(r) for r in ratios]
    if any(r < 1 for r in ratios):
        raise ValueError("aspect ratios must be >= 1")
    cfg = cfg or ShootingConfig(**SWEEP_DEFAULTS)
    records = _map_jobs(_ellipse_job, [(r, cfg, force_crowded) for r in ratios], jobs)
    for rec in records:
        log.info("%s: distance %.4f, E2 %.2e, %s", rec.label, rec.distance, rec.final_objective,
                 "ok" if rec.success else rec.failure)
    ok = [rec.success for rec in records]
    d_ok = [rec.distance if s else float("nan") for rec, s in zip(records, ok)]
    slope, intercept, tail, resid = fit_tail(ratios, d_ok, tail_start)
    monotone = check_monotone(ratios, d_ok)
    if not monotone:
        log.warning("%s", MonotonicityViolation("distances are not strictly increasing in aspect ratio"))
    return SweepResult(ratios, records, slope, intercept, tail, monotone, resid)


# -- triangle ------------------------------------------------------------------

@dataclass
class TriangleResult:
    ratio: float
    angles: list
    angle_sum: float
    records: list
    success: bool
    failure: str = None

    def to_dict(self):
        return {
            "ratio": self.ratio,
            "angles": list(self.angles),
            "angle_sum": self.angle_sum,
            "deficit": math.pi - self.angle_sum if math.isfinite(self.angle_sum) else float("nan"),
            "success": self.success,
            "failure": self.failure,
            "records": [asdict(r) for r in self.records],
        }


# Finer edge refinement (tried up to 64) lowers the off-vertex weld error but not
# the spread of the angle sums, which comes from weakly determined low modes.
TRIANGLE_REFINE = DEFAULT_REFINE


def _triangle_vertex(k, ratio, n, force_crowded):
    poly = ellipse(ratio, n, rotation=TRIANGLE_ROTATIONS[k])
    try:
        return poly, weld_checked(poly, force_crowded, refine=TRIANGLE_REFINE)
    except (TeichonError, ValueError) as err:
        return poly, f"{type(err).__name__}: {err}"


def _triangle_job(i, j, vertices, cfg):
    (_, weld_i), (poly_j, weld_j) = vertices[i], vertices[j]
    for w in (weld_i, weld_j):
        if isinstance(w, str):
            return ShootRecord(f"{i}->{j}", float("nan"), float("nan"), False, w)
    target, theta_j, report = weld_j
    return _run_shoot(f"{i}->{j}", weld_i[0], target, poly_j, theta_j, cfg, report)


def vertex_angle(v1, v2, q):
    """arccos of the normalised WP pairing of two teichon fields on the grid q."""
    c12 = field_pairing(v1, q, v2, q)
    c11 = field_pairing(v1, q, v1, q)
    c22 = field_pairing(v2, q, v2, q)
    return float(np.arccos(np.clip(c12 / math.sqrt(c11 * c22), -1.0, 1.0)))


def triangle(ratio, cfg=None, jobs=1, force_crowded=False):
    """Angle sum of the geodesic triangle with ellipses rotated by 0, 2pi/3, 4pi/3.

    Shoots all six ordered pairs; v_ij is the initial momentum from vertex i
    towards j and the angle at i is taken between v_ij and v_ik.
    """
    from .optimizer import equispaced

    if ratio <= 1:
        raise ValueError("triangle needs an aspect ratio > 1")
    cfg = cfg or ShootingConfig(**TRIANGLE_DEFAULTS)
    pairs = [(i, j) for i in range(3) for j in range(3) if i != j]
    vertices = [_triangle_vertex(k, ratio, cfg.n_landmarks, force_crowded) for k in range(3)]
    records = []
    if jobs <= 1:
        # sequential: stop at the first failed edge
        for i, j in pairs:
            rec = _triangle_job(i, j, vertices, cfg)
            records.append(rec)
            if not rec.success:
                break
    else:
        records = _map_jobs(_triangle_job, [(i, j, vertices, cfg) for i, j in pairs], jobs)
    bad = next((r for r in records if not r.success), None)
    if bad is not None:
        return TriangleResult(ratio, [], float("nan"), records, False, f"edge {bad.label}: {bad.failure}")
    q = equispaced(cfg.n_teichons)
    v = {pair: np.asarray(r.p0) for pair, r in zip(pairs, records)}
    angles = []
    for i in range(3):
        j, k = [m for m in range(3) if m != i]
        angles.append(vertex_angle(v[i, j], v[i, k], q))
    return TriangleResult(float(ratio), angles, float(sum(angles)), records, True)
