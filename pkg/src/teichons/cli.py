"""Command-line driver: ``teichons weld | shoot | ellipse-sweep | triangle | verify``.

Every run writes ``manifest.json`` into the output directory and every
result file carries that manifest's id.
"""

import argparse
import csv
import hashlib
import json
import logging
import math
import sys
import time
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .dynamics import velocity_grid
from .errors import (
    CrowdingDetected,
    EnergyDrift,
    MonotonicityViolation,
    NumericalBreakdown,
    OrderingViolation,
    SingularGram,
    TeichonError,
    TriangulationFailure,
)
from .optimizer import DESCENT_MODES, ShootingConfig, _jsonable, shoot

log = logging.getLogger("teichons")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_CONVERGENCE = 3
EXIT_CROWDED = 4
EXIT_BREAKDOWN = 5


class InputError(Exception):
    """Bad files, flags or configuration."""


class ConvergenceFailure(Exception):
    pass


# -- manifest ------------------------------------------------------------------

def _now():
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def file_digest(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@dataclass
class RunManifest:
    command: str
    config: dict
    inputs: dict = field(default_factory=dict)
    version: str = __version__
    started: str = field(default_factory=_now)
    finished: str = None
    stages: list = field(default_factory=list)
    failures: list = field(default_factory=list)
    outputs: list = field(default_factory=list)
    exit_code: int = None
    seconds: float = None

    @property
    def run_id(self):
        """Digest of what determines the results, so reruns reproduce files exactly."""
        key = json.dumps(_jsonable([self.command, self.config, self.inputs, self.version]), sort_keys=True)
        return hashlib.sha256(key.encode()).hexdigest()[:16]

    def add_input(self, path):
        self.inputs[str(path)] = file_digest(path)

    def write(self, out_dir):
        self.finished = _now()
        path = Path(out_dir) / "manifest.json"
        body = {"run_id": self.run_id, **asdict(self)}
        path.write_text(json.dumps(_jsonable(body), indent=1))
        return path


class Writer:
    """Serialises result files and tags each with the manifest id."""

    def __init__(self, out_dir, manifest):
        self.dir = Path(out_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.manifest = manifest

    def json(self, name, payload):
        path = self.dir / name
        body = {"manifest": self.manifest.run_id, **payload}
        path.write_text(json.dumps(_jsonable(body), indent=1))
        self.manifest.outputs.append(name)
        return path

    def csv(self, name, header, rows):
        path = self.dir / name
        with open(path, "w", newline="") as fh:
            fh.write(f"# manifest: {self.manifest.run_id}\n")
            w = csv.writer(fh)
            w.writerow(header)
            for r in rows:
                w.writerow([_fmt(v) for v in r])
        self.manifest.outputs.append(name)
        return path


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


# -- configuration ---------------------------------------------------------------

def _load_toml(path):
    try:
        import tomllib
    except ModuleNotFoundError:  # Python < 3.11
        import tomli as tomllib
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as err:
        raise InputError(f"cannot read config {path}: {err}")


def build_config(args, defaults=None):
    """Defaults, then the config file's [shooting] table, then command-line flags."""
    data = dict(defaults or {})
    file_data = _load_toml(args.config) if args.config else {}
    shooting = dict(file_data.get("shooting", {}))
    if "n_landmarks" in shooting and "stage_sizes" not in shooting:
        data.pop("stage_sizes", None)
    data.update(shooting)
    flags = {
        "dt": args.dt,
        "n_teichons": args.teichons,
        "n_landmarks": args.landmarks,
        "stage_sizes": args.stages,
        "objective_tol": args.tol,
        "seed": args.seed,
        "descent_mode": getattr(args, "descent", None),
    }
    if args.landmarks is not None and args.stages is None:
        data.pop("stage_sizes", None)
    data.update({k: v for k, v in flags.items() if v is not None})
    if data.get("stage_sizes") is None:
        data.pop("stage_sizes", None)
    try:
        return ShootingConfig.from_dict(data), file_data
    except (TypeError, ValueError) as err:
        raise InputError(f"invalid configuration: {err}")


def _stages(text):
    try:
        return [int(s) for s in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad stage list {text!r}")


# -- subcommands -------------------------------------------------------------------

def _load_shape(path, manifest):
    from .shapes import read_shape

    try:
        poly = read_shape(path)
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as err:
        raise InputError(f"{path}: {err}")
    manifest.add_input(path)
    return poly


def cmd_weld(args, manifest, writer):
    from .experiments import weld_checked
    from .welding import DEFAULT_REFINE

    poly = _load_shape(args.shape, manifest)
    manifest.config = {"refine": DEFAULT_REFINE}

    def report_hook(report):
        writer.json("crowding.json", report.to_dict())
        if report.warning:
            log.warning("crowding: R_int * R_ext = %.3g", report.product)

    weld, theta, _ = weld_checked(poly, args.force_crowded, report_hook)
    writer.json("weld.json", {"samples": np.column_stack([weld.theta_ext, weld.theta_int]).tolist()})
    writer.json("theta.json", {"theta": theta.tolist(), "reversed": bool(poly.reversed)})
    log.info("weld of %d vertices written to %s", len(poly), writer.dir)
    return EXIT_OK


def _load_weld(source, manifest):
    from .welding import Weld

    if source == "identity":
        return Weld.identity_weld()
    try:
        weld = Weld.load(source)
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as err:
        raise InputError(f"{source}: {err}")
    manifest.add_input(source)
    return weld


def _load_theta(path, manifest):
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as err:
        raise InputError(f"{path}: {err}")
    manifest.add_input(path)
    return np.asarray(data["theta"] if isinstance(data, dict) else data, dtype=float)


def cmd_shoot(args, manifest, writer):
    from .experiments import weld_checked

    poly = _load_shape(args.shape, manifest)
    cfg, _ = build_config(args, {"n_landmarks": len(poly)})
    manifest.config = asdict(cfg)
    template = _load_weld(args.template, manifest)
    if args.target:
        target = _load_weld(args.target, manifest)
        theta = _load_theta(args.theta, manifest) if args.theta else None
    else:
        target, theta, _ = weld_checked(poly, args.force_crowded)
    if theta is not None and theta.size != len(poly):
        raise InputError(f"theta has {theta.size} entries, shape has {len(poly)} vertices")

    res = shoot(template, target, poly, cfg, theta=theta)
    manifest.stages = [asdict(s) for s in res.stages]
    writer.json("geodesic.json", res.to_dict(snapshots=False) | {"partial": not res.success})
    if res.trajectory is not None:
        writer.json("snapshots.json", res.trajectory.to_dict())
        th, t, V = velocity_grid(res.trajectory, args.theta_res)
        rows = ((ti, tj, V[i, j]) for i, ti in enumerate(t) for j, tj in enumerate(th))
        writer.csv("velocity.csv", ["t", "theta", "v"], rows)
    log.info("distance %.6f, E2 %.3e", res.distance, res.final_objective)
    if not res.success:
        manifest.failures.append(res.failure)
        raise ConvergenceFailure(res.failure)
    return EXIT_OK


def cmd_ellipse_sweep(args, manifest, writer):
    from .experiments import SWEEP_DEFAULTS, ellipse_sweep

    cfg, file_data = build_config(args, SWEEP_DEFAULTS)
    manifest.config = asdict(cfg)
    ratios = args.ratios or file_data.get("sweep", {}).get("ratios") or [1, 2, 3, 4, 5, 6]
    if any(r < 1 for r in ratios):
        raise InputError("aspect ratios must be >= 1")
    res = ellipse_sweep(ratios, cfg, jobs=args.jobs, force_crowded=args.force_crowded)
    header = ["ratio", "distance", "final_objective", "success", "iterations", "seconds", "crowding_product", "failure"]
    rows = [
        [r, rec.distance, rec.final_objective, rec.success, rec.iterations, rec.seconds,
         rec.crowding_product, rec.failure or ""]
        for r, rec in zip(res.ratios, res.records)
    ]
    writer.csv("sweep.csv", header, rows)
    summary = {k: v for k, v in res.to_dict().items() if k != "records"}
    writer.json("sweep_fit.json", summary)
    manifest.stages = [rec.row() for rec in res.records]
    manifest.failures += [f"{rec.label}: {rec.failure}" for rec in res.records if not rec.success]
    if not res.monotone:
        manifest.failures.append(str(MonotonicityViolation("distance not strictly increasing")))
    log.info("tail slope %.4f over ratios %s", res.slope, res.tail)
    if manifest.failures:
        raise ConvergenceFailure("; ".join(manifest.failures))
    return EXIT_OK


def cmd_triangle(args, manifest, writer):
    from .experiments import TRIANGLE_DEFAULTS, triangle

    cfg, _ = build_config(args, TRIANGLE_DEFAULTS)
    manifest.config = asdict(cfg)
    if args.ratio <= 1:
        raise InputError("triangle needs an aspect ratio > 1")
    res = triangle(args.ratio, cfg, jobs=args.jobs, force_crowded=args.force_crowded)
    writer.json("triangle.json", res.to_dict())
    manifest.stages = [rec.row() for rec in res.records]
    if not res.success:
        manifest.failures.append(res.failure)
        if "CrowdingDetected" in (res.failure or ""):
            raise CrowdingDetected(res.failure)
        raise ConvergenceFailure(res.failure)
    log.info("angles %s, sum %.6f (pi - sum = %.3e)", np.round(res.angles, 6), res.angle_sum,
             math.pi - res.angle_sum)
    return EXIT_OK


def cmd_verify(args, manifest, writer):
    from .checks import run_checks

    results = run_checks(quick=not args.full)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name}: {r.detail}")
    writer.json("verify.json", {"checks": [asdict(r) for r in results]})
    failed = [r.name for r in results if not r.passed]
    if failed:
        manifest.failures += failed
        raise ConvergenceFailure(f"{len(failed)} check(s) failed")
    return EXIT_OK


COMMANDS = {
    "weld": cmd_weld,
    "shoot": cmd_shoot,
    "ellipse-sweep": cmd_ellipse_sweep,
    "triangle": cmd_triangle,
    "verify": cmd_verify,
}


# -- argument parsing ----------------------------------------------------------------

def _global_flags(parser, suppress):
    d = argparse.SUPPRESS if suppress else None
    g = parser.add_argument_group("global options")
    g.add_argument("--config", default=d, help="TOML file with a [shooting] table")
    g.add_argument("--dt", type=float, default=d, help="RK4 step on [0, 1]")
    g.add_argument("--teichons", type=int, default=d, help="number of teichons N")
    g.add_argument("--landmarks", type=int, default=d, help="number of landmarks M")
    g.add_argument("--stages", type=_stages, default=d, help="stage sizes, e.g. '25,50,100'")
    g.add_argument("--tol", type=float, default=d, help="objective tolerance on E2")
    g.add_argument("--descent", choices=DESCENT_MODES, default=d, help="descent rule")
    g.add_argument("--force-crowded", action="store_true", default=argparse.SUPPRESS if suppress else False,
                   help="proceed even when the crowding check refuses a shape")
    g.add_argument("--seed", type=int, default=d)
    g.add_argument("--out-dir", default=argparse.SUPPRESS if suppress else "out", help="output directory")
    g.add_argument("-v", "--verbose", action="count", default=argparse.SUPPRESS if suppress else 0)


def build_parser():
    parser = argparse.ArgumentParser(prog="teichons", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("weld", help="weld a polygon and report crowding")
    p.add_argument("shape", help="CSV (x,y rows) or JSON vertex list")
    _global_flags(p, suppress=True)

    p = sub.add_parser("shoot", help="staged geodesic shoot between two welds")
    p.add_argument("shape", help="target shape; its vertices define the landmarks")
    p.add_argument("--template", default="identity", help="template weld JSON or 'identity' (circle)")
    p.add_argument("--target", help="target weld JSON (default: weld the shape)")
    p.add_argument("--theta", help="landmark parameters JSON (default: exterior fit of the shape)")
    p.add_argument("--theta-res", type=int, default=256, help="theta samples in velocity.csv")
    _global_flags(p, suppress=True)

    p = sub.add_parser("ellipse-sweep", help="distance from the circle to ellipses of given aspect ratios")
    p.add_argument("ratios", nargs="*", type=float, help="aspect ratios (default 1..6)")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    _global_flags(p, suppress=True)

    p = sub.add_parser("triangle", help="angle sum of the triangle of three rotated ellipses")
    p.add_argument("ratio", type=float)
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    _global_flags(p, suppress=True)

    p = sub.add_parser("verify", help="run the built-in property checks")
    p.add_argument("--full", action="store_true", help="larger instances")
    _global_flags(p, suppress=True)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")

    manifest = RunManifest(command=" ".join(sys.argv[1:] if argv is None else argv), config={})
    try:
        writer = Writer(args.out_dir, manifest)
    except OSError as err:
        print(f"error: cannot create {args.out_dir}: {err}", file=sys.stderr)
        return EXIT_INPUT

    t0 = time.perf_counter()
    try:
        if args.config and Path(args.config).is_file():
            manifest.add_input(args.config)
        code = COMMANDS[args.command](args, manifest, writer)
    except InputError as err:
        code, msg = EXIT_INPUT, f"input error: {err}"
    except (TriangulationFailure, ValueError) as err:
        code, msg = EXIT_INPUT, f"input error: {err}"
    except CrowdingDetected as err:
        code, msg = EXIT_CROWDED, f"crowding refusal: {err}"
    except ConvergenceFailure as err:
        code, msg = EXIT_CONVERGENCE, f"convergence failure: {err}"
    except (NumericalBreakdown, SingularGram, EnergyDrift, OrderingViolation, MonotonicityViolation) as err:
        code, msg = EXIT_BREAKDOWN, f"numerical breakdown: {type(err).__name__}: {err}"
    except TeichonError as err:
        code, msg = EXIT_BREAKDOWN, f"numerical breakdown: {type(err).__name__}: {err}"
    else:
        msg = None
    if msg:
        print(msg, file=sys.stderr)
        if msg not in manifest.failures:
            manifest.failures.append(msg)
    manifest.exit_code = code
    manifest.seconds = time.perf_counter() - t0
    manifest.write(args.out_dir)
    return code


if __name__ == "__main__":
    sys.exit(main())
