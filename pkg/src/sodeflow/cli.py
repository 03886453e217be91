"""Batch command-line interface: scene ingestion, subcommand dispatch, and
emission of CSV curves, SVG figures, and JSON reports.

Every invocation prints one JSON run report to stdout (stable key order;
re-running with the same seed and inputs reproduces the results payload
bit-for-bit) and writes any CSV/SVG artifacts atomically.  Exit codes:
0 success, 2 domain or validation error, 3 numerical failure, 64 usage.
"""

from __future__ import annotations

import argparse
import os
import sys
import time

import numpy as np

from . import connection as conn_mod
from . import expmap, probes, sceneio
from .core import (
    Box,
    EXCLUDES_ZERO,
    Scene,
    SodeField,
    classify_connection_shape,
    classify_homogeneity,
)
from .errors import DomainError, NumericalError, SceneError, SodeflowError
from .finsler import FinslerStructure
from .flow import geodesic_residual, integrate
from .probes import BumpSpec, ProbeSampling

USAGE_EXIT = 64
DOMAIN_EXIT = 2
NUMERICAL_EXIT = 3

_COMMANDS = (
    "geodesic",
    "expmap",
    "plume",
    "classify",
    "connection",
    "finsler",
    "probe",
    "connect",
    "perturb",
    "report",
)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _vec_arg(text: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in text.split(",")])
    except ValueError as exc:
        raise _UsageError(f"bad vector {text!r}: {exc}") from exc


def _pair_arg(text: str) -> tuple[np.ndarray, np.ndarray]:
    parts = text.split(";")
    if len(parts) != 2:
        raise _UsageError(f"expected 'x1,..;y1,..', got {text!r}")
    return _vec_arg(parts[0]), _vec_arg(parts[1])


def _range_arg(text: str, default_step: float | None = None) -> np.ndarray:
    parts = text.split(":")
    if len(parts) == 3:
        lo, hi, step = (float(p) for p in parts)
    elif len(parts) == 2 and default_step is not None:
        lo, hi = (float(p) for p in parts)
        step = default_step
    else:
        raise _UsageError(f"expected 'lo:hi:step', got {text!r}")
    if step <= 0 or hi <= lo:
        raise _UsageError(f"bad range {text!r}")
    count = int(round((hi - lo) / step))
    return np.round(lo + step * np.arange(count + 1), 12)


def _box_arg(text: str, dim: int) -> Box:
    return sceneio._parse_box(text, dim, 0)


def _build_parser() -> _Parser:
    parser = _Parser(prog="sodeflow", description=__doc__)
    sub = parser.add_subparsers(dest="command", metavar="|".join(_COMMANDS))

    def add(name, **kwargs):
        p = sub.add_parser(name, **kwargs)
        p.add_argument("--scene", required=True, help="scene file path")
        p.add_argument("--seed", type=int, default=None, help="override the scene seed")
        p.add_argument("--out-file", default=None, help="artifact path or stem")
        return p

    p = add("geodesic", help="integrate a geodesic and emit CSV samples")
    p.add_argument("--p", required=True, help="base point x1,..,xn")
    p.add_argument("--v", required=True, help="initial velocity y1,..,yn")
    p.add_argument("--t", required=True, help="time grid t0:t1:dt")
    p.add_argument("--out", choices=("csv", "svg", "both"), default="csv")

    p = add("expmap", help="evaluate the generalized exponential map")
    p.add_argument("--p", required=True)
    p.add_argument("--v", required=True)
    p.add_argument("--eps", required=True, type=float)
    p.add_argument("--jacobian", action="store_true")
    p.add_argument("--domain", action="store_true",
                   help="also estimate the eps-interval")
    p.add_argument("--horizon", type=float, default=None)

    p = add("plume", help="two-parameter exp family; CSV/SVG figure data")
    p.add_argument("--p", required=True)
    p.add_argument("--dirs", default="1,0;0.70710678118654752,0.70710678118654752;0,1")
    p.add_argument("--eps", default="0:3", help="eps grid lo:hi[:step]")
    p.add_argument("--a", default="0.05:1:0.05", help="a grid lo:hi:step")
    p.add_argument("--out", choices=("csv", "svg", "both"), default="csv")

    add("classify", help="homogeneity / connection-shape classification")

    p = add("connection", help="connection from a field scene, or the induced field")
    p.add_argument("--mode", choices=("euler", "direct"), default="euler")

    p = add("finsler", help="pointwise Finsler diagnostics")
    p.add_argument("--at", required=True, help="point 'x1,..;y1,..'")

    p = add("probe", help="pseudoconvexity / disprisonment evidence probes")
    p.add_argument("--property", dest="prop", required=True,
                   choices=("pseudoconvexity", "disprisonment", "both"))
    p.add_argument("--K", required=True, help="probe box, e.g. box(-1,1; -1,1)")
    p.add_argument("--horizon", type=float, default=None)
    p.add_argument("--base-grid", type=int, default=32)
    p.add_argument("--dirs", type=int, default=32)
    p.add_argument("--speeds", default="1")

    p = add("connect", help="geodesic connectivity by damped-Newton shooting")
    p.add_argument("--p", required=True)
    p.add_argument("--q", required=True)
    p.add_argument("--eps", required=True, type=float)
    p.add_argument("--v0", default=None)
    p.add_argument("--max-iter", type=int, default=20)

    p = add("perturb", help="write a bump-perturbed copy of a field scene")
    p.add_argument("--center", required=True, help="bump center 'x1,..;y1,..'")
    p.add_argument("--radii", required=True, help="bump radii 'r1,..;r1,..'")
    p.add_argument("--amplitude", required=True, help="per-equation amplitudes a1,..,an")

    add("report", help="scene summary battery")
    return parser


def _field_of(scene: Scene) -> SodeField:
    if scene.kind == "sode":
        return scene.field
    if scene.kind == "finsler":
        return scene.field.semispray()
    return conn_mod.spray_from_connection(scene.field)


def _stem(args) -> str:
    if args.out_file:
        return args.out_file
    base = os.path.splitext(os.path.basename(args.scene))[0]
    return f"{base}-{args.command}"


# ---------------------------------------------------------------------------
# Subcommand bodies: each returns (results dict, list of written files)


def _cmd_geodesic(scene, args):
    field = _field_of(scene)
    p = _vec_arg(args.p)
    v = _vec_arg(args.v)
    grid = _range_arg(args.t)
    opts = scene.options
    tr = integrate(field, (p, v), float(grid[0]), float(grid[-1]),
                   (opts.abs_tol, opts.rel_tol), blowup=opts.blowup)
    covered = grid[(grid >= tr.t_min) & (grid <= tr.t_max)]
    states = tr.eval_many(covered)
    outputs = []
    stem = _stem(args)
    if args.out in ("csv", "both"):
        path = stem if stem.endswith(".csv") else f"{stem}.csv"
        sceneio.write_text_atomic(path, sceneio.trajectory_csv(scene.n, covered, states))
        outputs.append(path)
    if args.out in ("svg", "both"):
        path = f"{stem}.svg"
        sceneio.write_text_atomic(path, sceneio.trajectory_svg(states[:, : scene.n]))
        outputs.append(path)
    probe_ts = covered[1:-1][:: max(1, len(covered) // 50)]
    results = {
        "t_end": float(tr.t[-1]),
        "x_end": tr.states[-1][: scene.n].tolist(),
        "y_end": tr.states[-1][scene.n :].tolist(),
        "cause": tr.cause,
        "rows": int(len(covered)),
        "geodesic_residual": (
            geodesic_residual(field, tr, probe_ts) if len(probe_ts) else 0.0
        ),
    }
    return results, outputs


def _cmd_expmap(scene, args):
    field = _field_of(scene)
    p = _vec_arg(args.p)
    v = _vec_arg(args.v)
    opts = scene.options
    tol = (opts.abs_tol, opts.rel_tol)
    point = expmap.exp_map(field, p, v, args.eps, tol, blowup=opts.blowup)
    results = {"point": point.tolist(), "eps": args.eps}
    if args.jacobian:
        results["jacobian"] = expmap.exp_jacobian(field, p, v, args.eps, tol=tol).to_dict()
    if args.domain:
        horizon = args.horizon if args.horizon is not None else opts.horizon
        results["domain"] = expmap.eps_domain(
            field, p, v, horizon, blowup=opts.blowup, tol=tol
        ).to_dict()
    return results, []


def _cmd_plume(scene, args):
    field = _field_of(scene)
    p = _vec_arg(args.p)
    dirs = [(_vec_arg(d)) for d in args.dirs.split(";")]
    eps_grid = _range_arg(args.eps, default_step=0.05)
    eps_grid = eps_grid[eps_grid > 0]
    a_grid = _range_arg(args.a, default_step=0.05)
    data = expmap.plume(field, p, dirs, a_grid, eps_grid)
    outputs = []
    stem = _stem(args)
    if args.out in ("csv", "both"):
        geo = f"{stem}-geodesics.csv"
        acu = f"{stem}-acurves.csv"
        sceneio.write_text_atomic(geo, sceneio.plume_geodesics_csv(data))
        sceneio.write_text_atomic(acu, sceneio.plume_acurves_csv(data))
        outputs += [geo, acu]
    if args.out in ("svg", "both"):
        path = f"{stem}.svg"
        sceneio.write_text_atomic(path, sceneio.plume_svg(data))
        outputs.append(path)
    results = data.to_dict()
    del results["directions"]  # echoed via argv
    results["n_failures"] = len(data.failures)
    results.pop("failures")
    return results, outputs


def _cmd_classify(scene, args):
    if scene.kind == "connection":
        return {"connection_shape": classify_connection_shape(scene.field).to_dict()}, []
    if scene.kind == "finsler":
        spray = scene.field.semispray()
        hom = classify_homogeneity(spray)
        shape = classify_connection_shape(scene.field.connection())
        return {
            "semispray_homogeneity": hom.to_dict(),
            "connection_shape": shape.to_dict(),
            "traditional_labels": {
                "semispray": "h(1) in the semispray literature convention",
                "connection": "vh(0) in the nonlinear-connection literature convention",
                "note": (
                    "the classifier reports fiber-coefficient degrees under its "
                    "own scaling definition; both are recorded, neither asserted"
                ),
            },
        }, []
    return {"homogeneity": classify_homogeneity(scene.field).to_dict()}, []


def _cmd_connection(scene, args):
    if scene.kind == "connection":
        spray = conn_mod.spray_from_connection(scene.field)
        results = {
            "induced_field": spray.display(),
            "homogeneity": classify_homogeneity(spray).to_dict(),
            "shape": classify_connection_shape(scene.field).to_dict(),
        }
        return results, []
    field = _field_of(scene)
    if scene.kind == "finsler" and args.mode == "direct":
        c = scene.field.connection()  # the traditional fiber derivative
    else:
        c = conn_mod.connection_from_spray(field, args.mode)
    comp = conn_mod.compatibility(c, field)
    results = {
        "mode": args.mode,
        "coefficients": c.display(),
        "compatibility": comp.to_dict(),
    }
    return results, []


def _cmd_finsler(scene, args):
    if scene.kind != "finsler":
        raise SceneError("the finsler subcommand needs a finsler scene")
    f: FinslerStructure = scene.field
    x, y = _pair_arg(args.at)
    results = {
        "L": f.lagrangian(x, y),
        "causal_type": f.causal_type(x, y),
        "arclength_density": f.arclength_density(x, y),
        "vertical_hessian": f.vertical_hessian(x, y).tolist(),
        "geodesic_coefficients": f.geodesic_coefficients(x, y).tolist(),
        "connection_matrix": f.connection().matrix(x, y).tolist(),
    }
    return results, []


def _cmd_probe(scene, args, seed):
    field = _field_of(scene)
    K = _box_arg(args.K, scene.n)
    opts = scene.options
    horizon = args.horizon if args.horizon is not None else opts.horizon
    speeds = tuple(float(v) for v in args.speeds.split(","))
    sampling = ProbeSampling(
        base_per_axis=args.base_grid, directions=args.dirs, speeds=speeds, seed=seed
    )
    tol = (opts.abs_tol, opts.rel_tol)
    results = {}
    if args.prop in ("pseudoconvexity", "both"):
        rep = probes.probe_pseudoconvexity(
            field, K, sampling, horizon, blowup=opts.blowup, tol=tol
        )
        if rep.verdict == "counterexample-found":
            rep_dict = rep.to_dict()
            rep_dict["witness_replays"] = probes.replay(field, rep, tol=tol)
        else:
            rep_dict = rep.to_dict()
        results["pseudoconvexity"] = rep_dict
    if args.prop in ("disprisonment", "both"):
        rep = probes.probe_disprisonment(
            field, sampling, base_box=K, horizon=horizon, blowup=opts.blowup, tol=tol
        )
        rep_dict = rep.to_dict()
        if rep.verdict == "counterexample-found":
            rep_dict["witness_replays"] = probes.replay(
                field, rep, horizon=horizon, tol=tol
            )
        results["disprisonment"] = rep_dict
    return results, []


def _cmd_connect(scene, args):
    field = _field_of(scene)
    p = _vec_arg(args.p)
    q = _vec_arg(args.q)
    v0 = _vec_arg(args.v0) if args.v0 else None
    opts = scene.options
    tol = (opts.abs_tol, opts.rel_tol)
    result = probes.connect_geodesically(
        field, p, q, args.eps, v0, args.max_iter, tol=tol
    )
    tr = integrate(field, (p, result.v), 0.0, args.eps, tol)
    interior = np.linspace(0.0, args.eps, 20)[1:-1]
    results = result.to_dict()
    results["verification"] = {
        "endpoint_error": float(np.max(np.abs(tr.eval(args.eps)[0] - q))),
        "geodesic_residual": geodesic_residual(field, tr, interior),
    }
    return results, []


def _cmd_perturb(scene, args):
    if scene.kind != "sode":
        raise SceneError("perturb needs a [sode] scene (expression-backed field)")
    field: SodeField = scene.field
    cx, cy = _pair_arg(args.center)
    rx, ry = _pair_arg(args.radii)
    amp = _vec_arg(args.amplitude)
    bump = BumpSpec(np.concatenate([cx, cy]), np.concatenate([rx, ry]), amp)
    perturbed = probes.perturb(field, bump)
    distance = probes.c0_distance(field, perturbed, bump.support())
    stem = _stem(args)
    path = stem if stem.endswith(".scene") else f"{stem}.scene"
    text = sceneio.write_scene_text(
        "sode",
        scene.n,
        {f"S{k+1}": str(e) for k, e in
         enumerate(perturbed.display())},
        chart=scene.chart,
        exclude_zero=field.domain == EXCLUDES_ZERO,
        options=scene.options,
    )
    sceneio.write_text_atomic(path, text)
    results = {
        "bump": bump.to_dict(),
        "sampled_c0_distance": distance,
        "scene_file": path,
    }
    return results, [path]


def _cmd_report(scene, args):
    results = {
        "dim": scene.n,
        "kind": scene.kind,
        "chart": None if scene.chart is None else scene.chart.to_dict(),
        "options": scene.options.to_dict(),
    }
    if scene.kind == "sode":
        results["field"] = scene.field.display()
        results["homogeneity"] = classify_homogeneity(scene.field).to_dict()
    elif scene.kind == "connection":
        results["field"] = scene.field.display()
        results["shape"] = classify_connection_shape(scene.field).to_dict()
    else:
        results["field"] = [str(scene.field.L)]
        results["semispray_homogeneity"] = classify_homogeneity(
            scene.field.semispray()
        ).to_dict()
    return results, []


# ---------------------------------------------------------------------------


def run(argv) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        raise _UsageError("a subcommand is required")
    started = time.perf_counter()
    scene, digest = sceneio.load_scene(args.scene)
    seed = args.seed if args.seed is not None else scene.options.seed

    if args.command == "geodesic":
        results, outputs = _cmd_geodesic(scene, args)
    elif args.command == "expmap":
        results, outputs = _cmd_expmap(scene, args)
    elif args.command == "plume":
        results, outputs = _cmd_plume(scene, args)
    elif args.command == "classify":
        results, outputs = _cmd_classify(scene, args)
    elif args.command == "connection":
        results, outputs = _cmd_connection(scene, args)
    elif args.command == "finsler":
        results, outputs = _cmd_finsler(scene, args)
    elif args.command == "probe":
        results, outputs = _cmd_probe(scene, args, seed)
    elif args.command == "connect":
        results, outputs = _cmd_connect(scene, args)
    elif args.command == "perturb":
        results, outputs = _cmd_perturb(scene, args)
    else:
        results, outputs = _cmd_report(scene, args)

    report = {
        "command": args.command,
        "argv": list(argv),
        "scene": {"path": args.scene, "sha256": digest,
                  "dim": scene.n, "kind": scene.kind},
        "seed": seed,
        "options": scene.options.to_dict(),
        "results": results,
        "outputs": outputs,
        "wall_time_s": round(time.perf_counter() - started, 6),
    }
    sys.stdout.write(sceneio.json_dumps(report))
    return 0


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        return run(argv)
    except _UsageError as exc:
        sys.stderr.write(f"usage error: {exc}\n")
        return USAGE_EXIT
    except (SceneError, DomainError, ValueError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return DOMAIN_EXIT
    except (NumericalError, np.linalg.LinAlgError) as exc:
        sys.stderr.write(f"numerical failure: {exc}\n")
        return NUMERICAL_EXIT
    except SodeflowError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return DOMAIN_EXIT


if __name__ == "__main__":
    raise SystemExit(main())
