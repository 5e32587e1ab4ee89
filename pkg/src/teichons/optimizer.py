"""Shooting for the initial teichon momentum.

The objective is the cross-ratio mismatch of the flowed landmarks; its
momentum gradient comes from the variational flow.  Updates are natural
(WP*) gradients restricted to momenta whose 0 and +-1 Fourier modes vanish,
driven by steepest descent and then Polak-Ribière conjugate gradients over a
coarse-to-fine sequence of landmark subsets.
"""

import dataclasses
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import cho_factor, cho_solve, null_space
from scipy.optimize import minimize_scalar

from .dynamics import horizontality_residual, integrate
from .errors import (
    CrowdingDetected,
    EnergyDrift,
    NoDecrease,
    NumericalBreakdown,
    OrderingViolation,
    SingularGram,
    TeichonError,
)
from .kernel import EPS, TWO_PI, gram_matrix, wp_norm
from .matching import (
    delaunay_quadruples,
    matching_objective,
    objective_gradient_alpha,
    residual_jacobian_alpha,
    target_from_weld,
)

log = logging.getLogger(__name__)

GOLDEN = 0.5 * (3.0 - math.sqrt(5.0))   # 0.381966...
STATIONARY_NORM = 1e-8
TINY_STEP = 1e-12
DESCENT_MODES = ("steepest", "conjugate", "levenberg-marquardt")


# -- configuration -----------------------------------------------------------

@dataclass
class ShootingConfig:
    n_teichons: int = 100
    n_landmarks: int = 128
    dt: float = 1.0 / 200
    stage_sizes: list = None
    objective_tol: float = 1e-4
    max_iters: int = 200
    descent_mode: str = "conjugate"
    switch_threshold: int = 25
    line_search_evals: int = 40
    line_search_rtol: float = 1e-3
    line_search_method: str = "brent"
    energy_tol: float = 1e-6
    repair: bool = True
    cg_pairing: str = "dual"
    lm_damping: float = 1e-3
    final_rel_tol: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.stage_sizes is None:
            self.stage_sizes = default_stages(self.n_landmarks)
        self.stage_sizes = [int(s) for s in self.stage_sizes]
        if self.descent_mode not in DESCENT_MODES:
            raise ValueError(f"descent_mode must be one of {DESCENT_MODES}")
        if self.line_search_method not in ("golden", "brent"):
            raise ValueError("line_search_method must be 'golden' or 'brent'")
        if self.cg_pairing not in ("dual", "wp"):
            raise ValueError("cg_pairing must be 'dual' or 'wp'")
        s = self.stage_sizes
        if not s or s[-1] != self.n_landmarks:
            raise ValueError("final stage must equal n_landmarks")
        if any(b <= a or b % a for a, b in zip(s, s[1:])):
            raise ValueError("stage sizes must increase, each dividing the next")
        if s[0] < 4:
            raise ValueError("stages need at least 4 landmarks")
        if not 0.0 <= self.final_rel_tol < 1.0:
            raise ValueError("final_rel_tol must lie in [0, 1)")
        if self.n_teichons < 4:
            raise ValueError("need at least 4 teichons")

    @classmethod
    def from_dict(cls, data):
        data = dict(data.get("shooting", data))
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown configuration keys: {sorted(unknown)}")
        if "stage_sizes" in data and "n_landmarks" not in data:
            data["n_landmarks"] = data["stage_sizes"][-1]
        return cls(**data)

    @classmethod
    def from_toml(cls, path):
        try:
            import tomllib
        except ModuleNotFoundError:  # Python < 3.11
            import tomli as tomllib
        with open(path, "rb") as fh:
            return cls.from_dict(tomllib.load(fh))

    def replace(self, **changes):
        data = asdict(self)
        data.update({k: v for k, v in changes.items() if v is not None})
        if "n_landmarks" in changes and changes["n_landmarks"] is not None and "stage_sizes" not in changes:
            data["stage_sizes"] = None
        return ShootingConfig(**data)


def default_stages(m, smallest=8):
    """Repeated halving of m while the result stays even-divisible and >= smallest."""
    stages = [int(m)]
    while stages[0] % 2 == 0 and stages[0] // 2 >= smallest:
        stages.insert(0, stages[0] // 2)
    return stages


def equispaced(n):
    return TWO_PI * np.arange(n) / n


# -- constraint algebra ------------------------------------------------------

def constraint_matrix(q0):
    """Rows (1...1), cos q, sin q: momenta with F p = 0 have no 0, +-1 modes."""
    q0 = np.asarray(q0, dtype=float)
    return np.vstack([np.ones_like(q0), np.cos(q0), np.sin(q0)])


class _Metric:
    """Cached Cholesky factors of G and of the 3x3 Schur block F G^-1 F^T."""

    def __init__(self, F, G):
        cond = np.linalg.cond(G)
        if not np.isfinite(cond) or cond > 1.0 / math.sqrt(EPS):
            raise SingularGram(f"Gram condition number {cond:.3e} exceeds 1/sqrt(eps)")
        self.F = F
        self.G = G
        self.cond = cond
        try:
            self.Gc = cho_factor(G)
        except np.linalg.LinAlgError as err:
            raise SingularGram(f"Gram matrix is not positive definite: {err}")
        self.GiFt = cho_solve(self.Gc, F.T)
        self.S = F @ self.GiFt
        self.Sc = cho_factor(self.S)
        self._Ginv = None

    @property
    def Ginv(self):
        if self._Ginv is None:
            self._Ginv = cho_solve(self.Gc, np.eye(self.G.shape[0]))
        return self._Ginv

    def project(self, v):
        return v - self.GiFt @ cho_solve(self.Sc, self.F @ v)

    @property
    def Z(self):
        """Orthonormal basis of ker F, the admissible momentum directions."""
        if getattr(self, "_Z", None) is None:
            self._Z = null_space(self.F)
        return self._Z

    def natural(self, dE):
        return self.G @ dE - self.F.T @ cho_solve(self.Sc, self.F @ dE)


_metric_cache = {}


def _metric(F, G):
    key = (F.tobytes(), G.tobytes())
    m = _metric_cache.get(key)
    if m is None:
        if len(_metric_cache) > 8:
            _metric_cache.clear()
        m = _metric_cache[key] = _Metric(F, G)
    return m


def project_horizontal(dp, F, G):
    """[I - G^-1 F^T (F G^-1 F^T)^-1 F] dp, the WP*-closest update with F dp = 0."""
    return _metric(np.asarray(F, float), np.asarray(G, float)).project(np.asarray(dp, float))


def proper_gradient(dE, F, G, repair=True):
    """[G - F^T (F G^-1 F^T)^-1 F] dE, re-projected so F . result = 0 when ``repair``."""
    m = _metric(np.asarray(F, float), np.asarray(G, float))
    r = m.natural(np.asarray(dE, float))
    return m.project(r) if repair else r


def cg_step(rho_n, rho_prev, omega_prev, G):
    """Polak-Ribière direction; returns (omega, beta).

    ``G`` is the matrix of the pairing <a, b> = a^T G b used for beta.
    """
    den = float(rho_prev @ G @ rho_prev)
    if den < 1e-30:
        return rho_n.copy(), 0.0
    beta = max(0.0, float(rho_n @ G @ (rho_n - rho_prev)) / den)
    return rho_n + beta * omega_prev, beta


def geodesic_distance(p0, q0):
    """sqrt(p0^T G(q0) p0); constant along the geodesic."""
    return wp_norm(np.asarray(p0, float), gram_matrix(q0))


# -- line search -------------------------------------------------------------

def line_search(f, f0, eps0=1.0, max_evals=40, rtol=1e-3, method="golden"):
    """Minimise f(eps) for eps > 0 given f(0) = f0.

    Bracketing by expansion or contraction from ``eps0``, then refinement
    to relative width ``rtol``: plain golden section, or with ``method =
    "brent"`` scipy's Brent iteration (golden section plus parabolic steps)
    on the same bracket.  If bracketing finds nothing below f0, halve from
    eps = 1.  Returns (eps, f(eps), evaluations); raises NoDecrease when no
    trial point improves on f0.
    """
    evals = [0]
    best = [None, f0]
    seen = {}

    def F(e):
        if e in seen:
            return seen[e]
        evals[0] += 1
        v = f(e)
        if not np.isfinite(v):
            v = np.inf
        if v < best[1]:
            best[0], best[1] = e, v
        seen[e] = v
        return v

    def out():
        e = None if best[0] is None else float(best[0])
        return e, float(best[1]), evals[0]

    def budget():
        return evals[0] < max_evals

    a, fa = 0.0, f0
    b, fb = eps0, F(eps0)
    if fb < fa:
        c = b / GOLDEN
        fc = F(c)
        while fc < fb and budget():
            a, fa, b, fb = b, fb, c, fc
            c = b + (b - a) / GOLDEN
            fc = F(c)
        if fc < fb:
            return out()
    else:
        c, fc = b, fb
        b = GOLDEN * c
        fb = F(b)
        while fb >= fa and budget() and b > TINY_STEP * 1e-6:
            c, fc = b, fb
            b = GOLDEN * c
            fb = F(b)
        if fb >= fa:
            return _backtrack(F, f0, budget, out)

    if method == "brent":
        remaining = max_evals - evals[0]
        if remaining > 0:
            seen[0.0] = f0
            # Brent stops when the bracket is ~4 xtol |x| wide
            minimize_scalar(
                F, bracket=(a, b, c), method="brent",
                options={"xtol": 0.25 * rtol, "maxiter": remaining},
            )
        return out()

    # golden section on [a, c] with interior best b
    while budget() and (c - a) > rtol * b:
        if (c - b) > (b - a):
            x = b + GOLDEN * (c - b)
            fx = F(x)
            if fx < fb:
                a, fa, b, fb = b, fb, x, fx
            else:
                c, fc = x, fx
        else:
            x = b - GOLDEN * (b - a)
            fx = F(x)
            if fx < fb:
                c, fc, b, fb = b, fb, x, fx
            else:
                a, fa = x, fx
    return out()


def _backtrack(F, f0, budget, out):
    e = 1.0
    while budget():
        if F(e) < f0:
            return out()
        e *= 0.5
    if out()[0] is None:
        raise NoDecrease("no step along the search direction decreases the objective")
    return out()


# -- shooting problem --------------------------------------------------------

class _StageProblem:
    """Objective and gradient on one landmark stage."""

    def __init__(self, q0, alpha0, quads, target, cfg):
        self.q0 = q0
        self.alpha0 = alpha0
        self.quads = quads
        self.target = target
        self.cfg = cfg
        self.n_flows = 0

    def _flow(self, p0, variations):
        self.n_flows += 1
        return integrate(
            self.q0, p0, self.alpha0, with_variations=variations,
            dt=self.cfg.dt, energy_tol=self.cfg.energy_tol,
        )

    def value(self, p0):
        try:
            traj = self._flow(p0, False)
            return matching_objective(traj.final.alpha, self.quads, self.target)
        except (CrowdingDetected, OrderingViolation, EnergyDrift, TeichonError):
            return np.inf

    def value_and_grad(self, p0):
        traj = self._flow(p0, True)
        return (
            matching_objective(traj.final.alpha, self.quads, self.target),
            energy_gradient_p0(traj, self.quads, self.target),
            traj,
        )

    def residuals(self, p0, safe=False):
        """E2, residual vector and its momentum Jacobian dr/dp0 = (dr/dalpha) beta.

        With ``safe`` a failed flow gives E2 = inf instead of raising.
        """
        try:
            traj = self._flow(p0, True)
        except (CrowdingDetected, OrderingViolation, EnergyDrift, TeichonError):
            if not safe:
                raise
            return np.inf, None, None
        snap = traj.final
        r, J = residual_jacobian_alpha(snap.alpha, self.quads, self.target)
        return float(np.mean(r * r)), r, J @ snap.variations.beta


def energy_gradient_p0(traj, quads, target):
    """dE2/dp0 = (dE2/dalpha(1)) (dalpha(1)/dp0) from a variational trajectory."""
    snap = traj.final
    if snap.variations is None:
        raise ValueError("trajectory was integrated without variations")
    return objective_gradient_alpha(snap.alpha, quads, target) @ snap.variations.beta


@dataclass
class IterationRecord:
    stage: int
    iteration: int
    objective: float
    step: float
    grad_norm: float


@dataclass
class StageRecord:
    stage: int
    n_landmarks: int
    iterations: int
    start_objective: float
    final_objective: float
    converged: bool
    reason: str


@dataclass
class GeodesicResult:
    p0: np.ndarray
    q0: np.ndarray
    trajectory: object
    distance: float
    final_objective: float
    iteration_log: list = field(default_factory=list)
    stages: list = field(default_factory=list)
    success: bool = True
    failure: str = None

    def to_dict(self, snapshots=True):
        out = {
            "p0": np.asarray(self.p0).tolist(),
            "q0": np.asarray(self.q0).tolist(),
            "distance": self.distance,
            "final_objective": self.final_objective,
            "success": self.success,
            "failure": self.failure,
            "iteration_log": [asdict(r) for r in self.iteration_log],
            "stages": [asdict(s) for s in self.stages],
        }
        if snapshots and self.trajectory is not None:
            out["trajectory"] = self.trajectory.to_dict()
        return out

    def save(self, path):
        Path(path).write_text(json.dumps(_jsonable(self.to_dict()), indent=1))


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, float) and not math.isfinite(x):
        return str(x)
    if isinstance(x, np.generic):
        return _jsonable(x.item())
    return x


def stage_subsets(m, stage_sizes):
    """Every (m / m_s)-th landmark index for each stage size m_s."""
    subsets = []
    for ms in stage_sizes:
        if m % ms:
            raise ValueError(f"stage size {ms} does not divide {m}")
        subsets.append(np.arange(0, m, m // ms))
    return subsets


def shoot(template, target, shape, cfg=None, theta=None, p_init=None, callback=None):
    """Staged search for p0 carrying the template weld to the target weld.

    ``theta`` are the target's exterior landmark parameters in vertex order;
    when omitted they are computed from ``shape``.  Returns a GeodesicResult,
    with ``success`` False if the final stage did not converge.
    """
    from .welding import fit_exterior

    cfg = ShootingConfig(n_landmarks=len(shape)) if cfg is None else cfg
    z = np.asarray(getattr(shape, "vertices", shape), dtype=complex)
    if z.size != cfg.n_landmarks:
        raise ValueError(f"shape has {z.size} vertices, config expects {cfg.n_landmarks}")
    if theta is None:
        theta = fit_exterior(shape).theta
    theta = np.asarray(theta, dtype=float)

    N = cfg.n_teichons
    q0 = equispaced(N)
    G = gram_matrix(q0)
    F = constraint_matrix(q0)
    metric = _metric(F, G)
    p = np.zeros(N) if p_init is None else metric.project(np.asarray(p_init, float))

    records, stages = [], []
    failure = None
    stage_ok = True
    objective = np.inf
    for s, idx in enumerate(stage_subsets(z.size, cfg.stage_sizes)):
        quads = delaunay_quadruples(z[idx])
        tgt = target_from_weld(target, theta[idx], quads)
        alpha0 = template(theta[idx])
        prob = _StageProblem(q0, alpha0, quads, tgt, cfg)
        descend = _descend_lm if cfg.descent_mode == "levenberg-marquardt" else _descend
        stage_cfg = cfg
        if cfg.final_rel_tol > 0 and s == len(cfg.stage_sizes) - 1:
            # small mismatches need a tolerance that scales with them
            tol = min(cfg.objective_tol, cfg.final_rel_tol * prob.value(np.zeros(N)))
            stage_cfg = dataclasses.replace(cfg, objective_tol=tol)
        try:
            p, objective, its, converged, reason = descend(prob, p, metric, stage_cfg, s, records, callback)
        except (CrowdingDetected, SingularGram, OrderingViolation, EnergyDrift, NumericalBreakdown) as err:
            failure = f"stage {s}: {type(err).__name__}: {err}"
            stages.append(StageRecord(s, len(idx), 0, float("nan"), float("nan"), False, failure))
            stage_ok = False
            break
        if stage_cfg is not cfg and not converged and reason in ("stationary", "no_decrease"):
            # the relative target is aspirational: a stall at the discretisation floor counts
            # as long as the absolute tolerance holds
            converged = objective <= cfg.objective_tol
            reason = f"{reason} below objective_tol" if converged else reason
        stages.append(StageRecord(s, len(idx), its, _stage_start(records, s), objective, converged, reason))
        stage_ok = converged
        if not converged:
            log.info("stage %d stalled at E2 = %.3e (%s); continuing", s, objective, reason)

    try:
        traj = integrate(q0, p, template(theta), dt=cfg.dt, energy_tol=cfg.energy_tol)
    except TeichonError as err:
        traj = None
        failure = failure or f"final flow: {err}"
    success = stage_ok and failure is None
    if not success and failure is None:
        failure = f"final stage ended with E2 = {objective:.3e} above tolerance"
    return GeodesicResult(
        p0=p, q0=q0, trajectory=traj, distance=geodesic_distance(p, q0),
        final_objective=float(objective), iteration_log=records, stages=stages,
        success=success, failure=failure,
    )


def _stage_start(records, s):
    for r in records:
        if r.stage == s:
            return r.objective
    return float("nan")


def _search(prob, p, E, omega, slope, eps_prev, metric, cfg):
    # first trial: previous step, or the step that zeroes the linear model
    eps0 = eps_prev if eps_prev else E / slope

    def phi(e):
        return prob.value(metric.project(p - e * omega))

    eps, E_new, _ = line_search(
        phi, E, eps0, cfg.line_search_evals, cfg.line_search_rtol, cfg.line_search_method
    )
    return eps, E_new


def _descend(prob, p, metric, cfg, stage, records, callback):
    """Steepest descent then Polak-Ribière CG on one stage."""
    G = metric.G
    # proper gradients are G-preconditioned, so conjugacy is measured with G^-1
    pairing = metric.Ginv if cfg.cg_pairing == "dual" else G
    E, dE, _ = prob.value_and_grad(p)
    rho_prev = omega = None
    eps_prev = None
    restart = True
    reason = "max_iters"
    it = 0
    for it in range(cfg.max_iters + 1):
        rho = metric.project(metric.natural(dE)) if cfg.repair else metric.natural(dE)
        gnorm = math.sqrt(max(float(rho @ G @ rho), 0.0))
        records.append(IterationRecord(stage, it, float(E), 0.0 if it == 0 else eps_prev, gnorm))
        if callback is not None:
            callback(records[-1])
        if E <= cfg.objective_tol:
            reason = "objective_tol"
            break
        if gnorm < STATIONARY_NORM:
            reason = "stationary"
            break
        if it == cfg.max_iters:
            break

        use_cg = cfg.descent_mode == "conjugate" and it >= cfg.switch_threshold and not restart
        if use_cg:
            omega, _ = cg_step(rho, rho_prev, omega, pairing)
            if float(dE @ omega) <= 0.0:
                omega = rho
        else:
            omega = rho
        slope = float(dE @ omega)
        if slope <= 0.0:
            reason = "not_descent"
            break
        try:
            eps, E_new = _search(prob, p, E, omega, slope, eps_prev, metric, cfg)
        except NoDecrease:
            if omega is rho:
                reason = "no_decrease"
                break
            # conjugate direction failed: restart along the gradient
            omega = rho
            try:
                eps, E_new = _search(prob, p, E, omega, float(dE @ rho), eps_prev, metric, cfg)
            except NoDecrease:
                reason = "no_decrease"
                break
        if not E_new < E:
            raise AssertionError("line search accepted a non-decreasing step")
        restart = eps < TINY_STEP
        rho_prev = rho
        p = metric.project(p - eps * omega)
        eps_prev = eps
        E, dE, _ = prob.value_and_grad(p)
    h = horizontality_residual(prob.q0, p)
    if max(h) > 1e-9 * max(1.0, float(np.abs(p).max())):
        raise AssertionError(f"iterate left the admissible set: residuals {h}")
    # a stationary point above the tolerance is reported, not counted as converged
    return p, float(E), it, reason == "objective_tol", reason


def _descend_lm(prob, p, metric, cfg, stage, records, callback):
    """Damped Gauss-Newton on the cross-ratio residuals.

    The variational flow already yields the full landmark Jacobian, so the
    residual Jacobian in p0 costs nothing extra.  Steps live in ker F and are
    damped in the WP* metric: (A^T A + lam Z^T G Z) y = -A^T r, A = J Z.
    """
    G, Z = metric.G, metric.Z
    D = Z.T @ G @ Z
    E, r, J = prob.residuals(p)
    lam = None
    reason = "max_iters"
    it = 0
    step = 0.0
    for it in range(cfg.max_iters + 1):
        K = r.size
        dE = 2.0 * (J.T @ r) / K
        rho = metric.project(metric.natural(dE))
        gnorm = math.sqrt(max(float(rho @ G @ rho), 0.0))
        records.append(IterationRecord(stage, it, float(E), step, gnorm))
        if callback is not None:
            callback(records[-1])
        if E <= cfg.objective_tol:
            reason = "objective_tol"
            break
        if gnorm < STATIONARY_NORM:
            reason = "stationary"
            break
        if it == cfg.max_iters:
            break
        A = J @ Z
        H = A.T @ A
        g = A.T @ r
        if lam is None:
            lam = cfg.lm_damping * float(np.trace(H) / np.trace(D))
        accepted = False
        for _ in range(cfg.line_search_evals):
            try:
                y = cho_solve(cho_factor(H + lam * D), -g)
            except np.linalg.LinAlgError:
                lam *= 4.0
                continue
            p_new = metric.project(p + Z @ y)
            # trial with the variational flow itself, so an accepted step is always usable
            E_new, r_new, J_new = prob.residuals(p_new, safe=True)
            if E_new < E:
                accepted = True
                lam = max(lam / 3.0, 1e-12 * float(np.trace(H) / np.trace(D)))
                break
            lam *= 4.0
        if not accepted:
            reason = "no_decrease"
            break
        dp = p_new - p
        step = math.sqrt(max(float(dp @ G @ dp), 0.0))
        p, E, r, J = p_new, E_new, r_new, J_new
    h = horizontality_residual(prob.q0, p)
    if max(h) > 1e-9 * max(1.0, float(np.abs(p).max())):
        raise AssertionError(f"iterate left the admissible set: residuals {h}")
    return p, float(E), it, reason == "objective_tol", reason
