"""Command line front end.

Every command reads one geometry (``--config FILE`` or ``--geometry NAME``), writes
``<command>.csv`` and/or ``<command>_report.txt`` into ``--out`` together with a
``manifest.json``, and exits with 0 on success, 1 on invalid input and 2 on a
numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import bgg, cone, modelalg, strat
from . import exprfield as ef
from .chartgeom import curvature, geodesic
from .config import GeometryConfig, load_geometry, registry_config
from .errors import (CertificateError, DomainExit, EvaluationError, ParseError, ShootingError,
                     ValidationError)
from .normalframe import build_normal_frame
from .ode import Polyline
from .tractor import transport_matrix

COMMANDS = ("curvature", "geodesic", "transport", "cone-geodesic", "hom-coords", "bgg", "prolong",
            "model", "stratify", "einstein-check", "complete")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ValidationError(message)


# ------------------------------------------------------------------ parsing helpers

def _vec(text: str, what: str) -> np.ndarray:
    try:
        v = np.array([float(t) for t in text.split(",")])
    except ValueError:
        raise ValidationError(f"{what}: expected comma separated numbers, got {text!r}") from None
    if not np.all(np.isfinite(v)):
        raise ValidationError(f"{what}: values must be finite")
    return v


def _points(args, geom, default_random: int | None = 10) -> np.ndarray:
    n = geom.n
    if args.at:
        pts = np.array([_vec(p, "--at") for p in args.at.split(";")])
    elif args.grid:
        pts = _grid(args.grid, n).points()
    elif default_random:
        pts = geom.domain.sample(np.random.default_rng(args.seed), default_random)
    else:
        raise ValidationError("give --at or --grid")
    if pts.shape[1] != n:
        raise ValidationError(f"points need {n} coordinates")
    if not np.all(geom.domain.contains(pts)):
        raise ValidationError("a requested point lies outside the chart domain")
    return pts


def _grid(text: str, n: int) -> strat.Grid:
    v = _vec(text, "--grid")
    if len(v) != 3 or not v[0] < v[1] or v[2] < 2 or v[2] != int(v[2]):
        raise ValidationError("--grid takes lo,hi,m with lo < hi and integer m >= 2")
    return strat.Grid((v[0],) * n, (v[1],) * n, int(v[2]))


def _fmt(x) -> str:
    return "%.17g" % float(x)


class Outputs:
    def __init__(self, directory: str):
        self.dir = Path(directory)
        self.files: list[str] = []

    def csv(self, name: str, header: list[str], rows) -> None:
        self.dir.mkdir(parents=True, exist_ok=True)
        path = self.dir / name
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([c if isinstance(c, str) else _fmt(c) for c in r])
        self.files.append(name)

    def text(self, name: str, body: str) -> None:
        self.dir.mkdir(parents=True, exist_ok=True)
        (self.dir / name).write_text(body)
        self.files.append(name)
        sys.stdout.write(body)


def _idx(*parts) -> str:
    return "".join(str(p + 1) for p in parts)


# ------------------------------------------------------------------ commands

def cmd_curvature(args, cfg: GeometryConfig, out: Outputs):
    g = cfg.geometry
    pts = _points(args, g)
    cd = curvature(g, pts)
    n = g.n
    pairs = [(a, b) for a in range(n) for b in range(n)]
    header = [f"x{i + 1}" for i in range(n)] + [f"P_{_idx(a, b)}" for a, b in pairs] \
        + [f"Ric_{_idx(a, b)}" for a, b in pairs] + ["max_abs_R", "max_abs_dP"]
    rows = []
    for i, x in enumerate(pts):
        rows.append(list(x) + [cd.P[i, a, b] for a, b in pairs] + [cd.Ric[i, a, b] for a, b in pairs]
                    + [np.max(np.abs(cd.R[i])), np.max(np.abs(cd.dP[i]))])
    out.csv("curvature.csv", header, rows)


def cmd_geodesic(args, cfg, out):
    g = cfg.geometry
    x0 = _points(args, g, None)[0]
    v0 = _vec(args.vel, "--vel")
    if len(v0) != g.n:
        raise ValidationError(f"--vel needs {g.n} components")
    res = geodesic(g, x0, v0, args.T, args.step)
    n = g.n
    out.csv("geodesic.csv", ["t"] + [f"x{i + 1}" for i in range(n)] + [f"v{i + 1}" for i in range(n)],
            [[t, *x, *v] for t, x, v in zip(res.t, res.x, res.v)])
    out.text("geodesic_report.txt", f"steps: {len(res.t) - 1}\nexited_domain: {str(res.exited).lower()}\n")


def cmd_transport(args, cfg, out):
    g = cfg.geometry
    if not args.path:
        raise ValidationError("--path is required")
    pts = np.array([_vec(p, "--path") for p in args.path.split(";")])
    if pts.ndim != 2 or pts.shape[1] != g.n or len(pts) < 2:
        raise ValidationError(f"--path needs at least two points with {g.n} coordinates")
    if args.closed:
        pts = np.vstack([pts, pts[:1]])
    res = transport_matrix(g, Polyline(pts), args.step)
    M = res.matrix
    n1 = g.n + 1
    out.csv("transport.csv", ["row"] + [f"c{j}" for j in range(n1)], [[str(i), *M[i]] for i in range(n1)])
    dev = float(np.max(np.abs(M - np.eye(n1))))
    out.text("transport_report.txt",
             f"log_density_scale: {_fmt(res.log_scale)}\nmax_abs_deviation_from_identity: {_fmt(dev)}\n")


def cmd_cone_geodesic(args, cfg, out):
    g = cfg.geometry
    x0 = _points(args, g, None)[0]
    xi = _vec(args.xi, "--xi")
    if len(xi) != g.n:
        raise ValidationError(f"--xi needs {g.n} components")
    p0 = cone.ConePoint(x0, args.rho)
    cg = cone.cone_geodesic(g, p0, cone.ConeTangent(xi, args.v), args.T, args.step)
    n = g.n
    header = ["t", "rho"] + [f"x{i + 1}" for i in range(n)] + ["drho"] + [f"dx{i + 1}" for i in range(n)]
    out.csv("cone-geodesic.csv", header,
            [[t, r, *x, dr, *dx] for t, r, x, dr, dx in zip(cg.t, cg.rho, cg.x, cg.drho, cg.dx)])
    out.text("cone-geodesic_report.txt", f"exited_domain: {str(cg.exited).lower()}\n")


def _normal_frame(args, g):
    q = _vec(args.base, "--base") if args.base else np.zeros(g.n)
    if len(q) != g.n:
        raise ValidationError(f"--base needs {g.n} coordinates")
    return build_normal_frame(g, q, h=args.step)


def cmd_hom_coords(args, cfg, out):
    g = cfg.geometry
    pts = _points(args, g, None)
    nf = _normal_frame(args, g)
    X = nf.hom_coords(pts)
    n = g.n
    out.csv("hom-coords.csv", [f"x{i + 1}" for i in range(n)] + [f"X{i}" for i in range(n + 1)],
            [[*x, *Xi] for x, Xi in zip(pts, X)])
    out.text("hom-coords_report.txt", f"validity_radius: {_fmt(nf.W)}\n")


def cmd_bgg(args, cfg, out):
    g = cfg.geometry
    if args.action != "check":
        raise ValidationError(f"unknown bgg action {args.action!r}")
    pts = _points(args, g)
    if not args.sigma:
        raise ValidationError("--sigma is required")
    if args.op == "k1":
        r = bgg.bgg_residual_k1(g, ef.parse(args.sigma, g.n), pts)
    elif args.op == "k2":
        r = bgg.bgg_residual_k2(g, ef.parse(args.sigma, g.n), pts)
    else:
        if not args.sigma2:
            raise ValidationError("--op skew needs --sigma and --sigma2")
        r = bgg.bgg_residual_skew(g, bgg.skew_from_pair(args.sigma, args.sigma2, g.n), pts)
    per = np.max(np.abs(r.value).reshape(len(pts), -1), axis=1)
    out.csv("bgg.csv", [f"x{i + 1}" for i in range(g.n)] + ["residual"], [[*x, v] for x, v in zip(pts, per)])
    out.text("bgg_report.txt", f"operator: {args.op}\npoints: {len(pts)}\nmax_residual: {_fmt(per.max())}\n")


def _tractor_from_args(args, cfg: GeometryConfig):
    g = cfg.geometry
    if args.tractor:
        if args.tractor not in cfg.tractors:
            raise ValidationError(f"no tractor named {args.tractor!r} in the config")
        return cfg.tractors[args.tractor]
    if not args.sigma:
        raise ValidationError("give --tractor or --op with --sigma")
    if args.op == "k1":
        return "Covector", bgg.prolong_k1(g, ef.parse(args.sigma, g.n))
    if args.op == "k2":
        return "Sym2", bgg.prolong_k2(g, ef.parse(args.sigma, g.n))
    if args.op == "pair":
        if not args.sigma2:
            raise ValidationError("--op pair needs --sigma2")
        return "PairCovectors", bgg.pair(bgg.prolong_k1(g, ef.parse(args.sigma, g.n)),
                                         bgg.prolong_k1(g, ef.parse(args.sigma2, g.n)))
    raise ValidationError(f"--op {args.op} does not define a tractor here")


def cmd_prolong(args, cfg, out):
    g = cfg.geometry
    family, V = _tractor_from_args(args, cfg)
    pts = _points(args, g)
    comps = V.comp(pts).reshape(len(pts), -1)
    shape = V.comp(pts[:1]).shape[1:]
    names = ["T_" + "".join(map(str, ix)) for ix in np.ndindex(*shape)]
    out.csv("prolong.csv", [f"x{i + 1}" for i in range(g.n)] + names, [[*x, *c] for x, c in zip(pts, comps)])
    rng = np.random.default_rng(args.seed)
    norm = bgg.normality_check(g, V, bgg.random_curves(g, rng, 4))
    out.text("prolong_report.txt", f"family: {family}\nnormality: {_fmt(norm)}\n"
             f"parallel: {str(bool(norm < args.tol)).lower()}\n")


def cmd_model(args, cfg, out):
    if not args.family or args.tensor is None:
        raise ValidationError("--family and --tensor are required")
    try:
        comp = json.loads(args.tensor)
    except json.JSONDecodeError as e:
        raise ValidationError(f"--tensor: invalid JSON ({e})") from None
    I = modelalg.ModelTensor(args.family, comp)
    lines = [f"family: {I.family}", f"g_type: {json.dumps(modelalg.g_type(I), sort_keys=True)}"]
    if args.ray:
        X = _vec(args.ray, "--ray")
        if len(X) != I.dim:
            raise ValidationError(f"--ray needs {I.dim} components")
        lab = modelalg.p_type(I, X, args.band)
        lines.append(f"p_type: {lab}")
        if lab in ("0", "{1}", "{2}", "{1,2}", "k=0"):
            lines.append(f"zero_locus: {modelalg.zero_locus_smooth(I, X, args.band)}")
    if args.census:
        c = modelalg.census(I, np.random.default_rng(args.seed), args.census, args.band)
        for lab in sorted(c.counts):
            lines.append(f"census[{lab}]: {c.counts[lab]}")
        lines.append(f"census_singular: {len(c.singular)}")
    out.text("model_report.txt", "\n".join(lines) + "\n")


def cmd_stratify(args, cfg, out):
    g = cfg.geometry
    family, V = _tractor_from_args(args, cfg)
    grid = _grid(args.grid or "-1.2,1.2,101", g.n)
    nf = None if args.no_normal_frame else _normal_frame(args, g)
    rep = strat.stratify(g, V, family, grid, band=args.band, tol=args.tol, nf=nf, h=args.step,
                         seed=args.seed, use_normal_frame=not args.no_normal_frame)
    pts = grid.points()
    rows = [[*x, rep.labels[i], rep.normal_labels.get(i, "")] for i, x in enumerate(pts)]
    out.csv("stratify.csv", [f"x{i + 1}" for i in range(g.n)] + ["label", "normal_frame_label"], rows)
    out.csv("stratify_zeros.csv", [f"x{i + 1}" for i in range(g.n)] + ["label", "smooth", "grad_norm"],
            [[*z.x, z.label, str(z.smooth).lower(), z.grad_norm] for z in rep.zero_points])
    out.text("stratify_report.txt", rep.to_text())


def cmd_einstein(args, cfg, out):
    g = cfg.geometry
    if not args.sigma:
        raise ValidationError("--sigma is required")
    pts = _points(args, g, args.samples)
    sig = ef.parse(args.sigma, g.n)
    r = strat.scale_geometry_check(g, sig, args.weight, pts, args.band)
    lines = [f"points: {len(pts)}", f"sup_P_hat: {_fmt(r.P_sup)}", f"sup_nabla_P_hat: {_fmt(r.dP_sup)}"]
    if r.c is not None:
        lines += [f"einstein_constant: {_fmt(r.c_mean)}", f"einstein_spread: {_fmt(r.c_spread)}",
                  f"pointwise_residual: {_fmt(r.pointwise)}", f"metric_signature: {list(r.signature)}"]
    out.text("einstein-check_report.txt", "\n".join(lines) + "\n")


def cmd_complete(args, cfg, out):
    g = cfg.geometry
    if not args.sigma or not args.vel:
        raise ValidationError("--sigma and --vel are required")
    x0 = _points(args, g, None)[0]
    v0 = _vec(args.vel, "--vel")
    pr = strat.completeness_profile(g, ef.parse(args.sigma, g.n), args.weight, x0, v0, h=args.step,
                                    band=args.band)
    out.csv("complete.csv", ["s", "t", "sigma"], zip(pr.s, pr.t, pr.sigma))
    out.text("complete_report.txt", f"samples: {len(pr.s)}\nreached_band: {str(pr.reached_band).lower()}\n"
             f"final_s: {_fmt(pr.s[-1])}\nfinal_t: {_fmt(pr.t[-1])}\n")


HANDLERS = {"curvature": cmd_curvature, "geodesic": cmd_geodesic, "transport": cmd_transport,
            "cone-geodesic": cmd_cone_geodesic, "hom-coords": cmd_hom_coords, "bgg": cmd_bgg,
            "prolong": cmd_prolong, "model": cmd_model, "stratify": cmd_stratify,
            "einstein-check": cmd_einstein, "complete": cmd_complete}


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    src = common.add_mutually_exclusive_group()
    src.add_argument("--config", help="geometry configuration (JSON)")
    src.add_argument("--geometry", help="registry geometry, e.g. flat, klein(3), ppwave")
    common.add_argument("--out", default=".", help="output directory (default: current)")
    common.add_argument("--step", type=float, default=1e-3, help="RK4 step (default 1e-3)")
    common.add_argument("--band", type=float, default=1e-9, help="zero band (default 1e-9)")
    common.add_argument("--tol", type=float, default=1e-6, help="normality tolerance (default 1e-6)")
    common.add_argument("--seed", type=int, default=42, help="seed for random probe points")
    common.add_argument("--at", help="point(s) 'x1,x2,...' separated by ';'")
    common.add_argument("--grid", help="square grid 'lo,hi,m'")

    p = _Parser(prog="projtractor", description="Projective tractor calculus on coordinate charts.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("curvature", parents=[common], help="Riemann, Ricci and Schouten tensors")
    s = sub.add_parser("geodesic", parents=[common], help="RK4 geodesic from --at with --vel")
    s.add_argument("--vel", required=True)
    s.add_argument("--T", type=float, default=1.0)
    s = sub.add_parser("transport", parents=[common], help="tractor transport along a polyline")
    s.add_argument("--path", help="vertices 'x1,x2;y1,y2;...'")
    s.add_argument("--closed", action="store_true", help="return to the first vertex")
    s = sub.add_parser("cone-geodesic", parents=[common], help="geodesic of the cone connection")
    s.add_argument("--rho", type=float, default=1.0)
    s.add_argument("--xi", required=True, help="horizontal velocity components")
    s.add_argument("--v", type=float, default=0.0, help="fibre velocity")
    s.add_argument("--T", type=float, default=1.0)
    s = sub.add_parser("hom-coords", parents=[common], help="normal-frame homogeneous coordinates")
    s.add_argument("--base", help="base point of the normal frame (default: origin)")
    s = sub.add_parser("bgg", parents=[common], help="first BGG operator residuals")
    s.add_argument("action", choices=["check"])
    s.add_argument("--op", choices=["k1", "k2", "skew"], required=True)
    s.add_argument("--sigma")
    s.add_argument("--sigma2")
    for name, hlp in (("prolong", "prolonged tractor components and normality"),
                      ("stratify", "P-type stratification on a grid")):
        s = sub.add_parser(name, parents=[common], help=hlp)
        s.add_argument("--tractor", help="tractor name from the config")
        s.add_argument("--op", choices=["k1", "k2", "pair"], default="k2")
        s.add_argument("--sigma")
        s.add_argument("--sigma2")
        if name == "stratify":
            s.add_argument("--base", help="base point of the normal frame (default: origin)")
            s.add_argument("--no-normal-frame", action="store_true",
                           help="label from direct saturation only")
    s = sub.add_parser("model", parents=[common], help="G-type, P-type and census of a constant tensor")
    s.add_argument("--family", choices=list(modelalg.FAMILIES))
    s.add_argument("--tensor", help="components as JSON")
    s.add_argument("--ray")
    s.add_argument("--census", type=int, default=0, help="number of random rays")
    s = sub.add_parser("einstein-check", parents=[common], help="Schouten tensor of a scale connection")
    s.add_argument("--sigma")
    s.add_argument("--weight", type=float, default=2.0)
    s.add_argument("--samples", type=int, default=20)
    s = sub.add_parser("complete", parents=[common], help="affine parameter profile toward the zero set")
    s.add_argument("--sigma")
    s.add_argument("--weight", type=float, default=2.0)
    s.add_argument("--vel")
    return p


def _load(args) -> GeometryConfig:
    if args.command == "model":
        return GeometryConfig(None, {}, "")
    if args.config:
        try:
            text = Path(args.config).read_text()
        except OSError as e:
            raise ValidationError(f"cannot read config: {e}") from None
        return load_geometry(text)
    if args.geometry:
        return registry_config(args.geometry)
    raise ValidationError("give --config or --geometry")


def _manifest(args, cfg: GeometryConfig, out: Outputs) -> None:
    skip = {"config", "out"}
    arguments = {k: v for k, v in sorted(vars(args).items()) if k not in skip}
    m = {
        "command": args.command,
        "arguments": arguments,
        "config_sha256": cfg.digest,
        "tool_version": __version__,
        "tolerances": {"step": args.step, "band": args.band, "normality": args.tol},
        "outputs": out.files,
    }
    out.dir.mkdir(parents=True, exist_ok=True)
    (out.dir / "manifest.json").write_text(json.dumps(m, indent=2, sort_keys=True) + "\n")


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        for flag in ("step", "band", "tol"):
            if not getattr(args, flag) > 0:
                raise ValidationError(f"--{flag} must be positive")
        cfg = _load(args)
        out = Outputs(args.out)
        HANDLERS[args.command](args, cfg, out)
        _manifest(args, cfg, out)
        return 0
    except (ValidationError, ParseError, CertificateError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (ShootingError, DomainExit, EvaluationError, FloatingPointError, np.linalg.LinAlgError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
