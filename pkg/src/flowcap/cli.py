"""Command-line front end.  Exit codes: 0 ok, 2 usage, 3 violated hypothesis, 4 numeric failure."""

from __future__ import annotations

import argparse
import csv
import json
import sys

import numpy as np

from . import __version__
from . import io as fio
from .capacity import scaling_study
from .construct1d import approximate_target_1d, pwg_synthesize
from .densities import PiecewiseGaussian1D
from .errors import FlowcapError
from .experiments import DEFAULTS, ExperimentConfig, run_experiment
from .flows import Pushforward, Radial
from .lincompile import compile_linear
from .metrics import l1_grid_1d, l1_pushforward_mc
from .topology import gaussian_feasibility, residual_radial, residual_relu, residual_span


def _emit(obj, out=None):
    if out:
        fio.dump_json(obj, out)
    else:
        json.dump(fio._plain(obj), sys.stdout, indent=2)
        sys.stdout.write("\n")


def _read_points(args, dim):
    if args.z is not None:
        pts = [[float(v) for v in args.z.split(",")]]
    else:
        with open(args.points) as fh:
            pts = json.load(fh)
    Z = np.atleast_2d(np.asarray(pts, dtype=float))
    if dim == 1 and Z.shape[1] != 1:
        Z = Z.reshape(-1, 1)
    return Z


def cmd_flow(args):
    stack = fio.load_stack(args.flow)
    Z = _read_points(args, stack.dim)
    if args.action == "eval":
        Y, logdet = stack._forward(Z)
        _emit({"y": Y, "log_abs_det": logdet}, args.out)
    else:
        _emit({"z": stack._inverse(Z)}, args.out)


def cmd_synth(args):
    target = fio.load_dist(args.target)
    if isinstance(target, PiecewiseGaussian1D):
        synth = pwg_synthesize(target, elide_identity=args.elide_identity)
        push = Pushforward(synth.base, synth.stack)
        report = {
            "pieces": target.n_pieces,
            "layers": len(synth.stack),
            "achieved_l1": l1_grid_1d(target, push).value,
            "elided_identity_layers": synth.elided_identity_layers,
        }
        base, stack = synth.base, synth.stack
    else:
        approx = approximate_target_1d(target, args.eps, args.pieces, elide_identity=args.elide_identity)
        report, base, stack, push = approx.report(), approx.base, approx.stack, approx.pushforward
    report["base"] = base.to_dict()
    if args.out:
        fio.dump_json(stack.to_dict(), args.out)
    if args.curves:
        # the target's range, padded; the approximation's outer tails can be very wide
        lo, hi = (float(v) for v in target.quantile([1e-6, 1 - 1e-6]))
        pad = 0.1 * (hi - lo)
        x = np.linspace(lo - pad, hi + pad, 2001)
        with open(args.curves, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["x", "p", "approx"])
            for row in zip(x, target.density(x), push.density(x)):
                w.writerow([repr(float(v)) for v in row])
    _emit(report, args.report)


def cmd_compile(args):
    A = fio.load_matrix(args.matrix)
    result = compile_linear(A)
    if args.out:
        fio.dump_json(result.stack.to_dict(), args.out)
    _emit(result.report(), args.report)


def cmd_topo(args):
    stack = fio.load_stack(args.flow)
    base = fio.load_dist(args.base)
    check = args.check
    if check == "auto":
        if len(stack) == 1 and isinstance(stack.layers[0], Radial):
            check = "radial"
        elif all(getattr(layer, "piecewise_linear", False) or layer.variant == "householder" for layer in stack):
            check = "relu"
        else:
            check = "span"
    if check == "relu":
        rep = residual_relu(stack, base, n=args.n, seed=args.seed)
    elif check == "span":
        rep = residual_span(stack, base, n=args.n, seed=args.seed)
    else:
        rep = residual_radial(stack.layers[0], base, n=args.n, seed=args.seed)
    if args.out:
        rep.write_csv(args.out)
    _emit(rep.summary())


def cmd_feasibility(args):
    Sq, Sp = fio.load_matrix(args.sigma_q), fio.load_matrix(args.sigma_p)
    families = [args.family] if args.family else ["planar-smooth", "radial", "relu-sylvester"]
    out = []
    for fam in families:
        v = gaussian_feasibility(Sq, Sp, fam, m=args.m)
        out.append({"family": v.family, "verdict": v.verdict, "witness": v.witness})
    _emit(out, args.out)


def cmd_capacity(args):
    dims = [int(d) for d in args.dims.split(",")]
    table = scaling_study(args.family, dims, gap=args.gap, kappa=args.kappa, tau=args.tau, c_h=args.c_h)
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["d", "lhat_bound", "depth_lb", "slope_estimate"])
            for r in table.rows:
                w.writerow([r["d"], repr(r["lhat_bound"]), repr(r["depth_lb"]), repr(table.slope)])
    _emit({"family": args.family, "slope": table.slope, "rows": table.rows})


def cmd_l1(args):
    p, q = fio.load_dist(args.p), fio.load_dist(args.q)
    if args.method == "mc":
        stack = fio.load_stack(args.flow) if args.flow else None
        est = l1_pushforward_mc(stack, q, p, n=args.n, seed=args.seed)
    else:
        other = Pushforward(q, fio.load_stack(args.flow)) if args.flow else q
        est = l1_grid_1d(p, other)
    _emit(est.to_dict(), args.out)


def cmd_repro(args):
    params, seed = {}, args.seed
    if args.config:
        with open(args.config) as fh:
            cfg = json.load(fh)
        params = cfg.get("parameters", {})
        seed = cfg.get("seed", seed)
    manifest = run_experiment(ExperimentConfig(args.name, params, seed, args.out or "out"))
    _emit(manifest)


def cmd_validate(args):
    report = fio.validate_files(args.files)
    _emit(report.to_dict(), args.out)
    return 0 if report.ok else 2


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="flowcap", description=__doc__)
    ap.add_argument("--version", action="version", version=f"flowcap {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("flow", help="evaluate or invert a flow stack")
    p.add_argument("action", choices=["eval", "invert"])
    p.add_argument("--flow", required=True)
    grp = p.add_mutually_exclusive_group(required=True)
    grp.add_argument("--points", help="JSON list of points")
    grp.add_argument("--z", help="single comma-separated point")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_flow)

    p = sub.add_parser("synth-1d", help="ReLU planar stack approximating a 1D target")
    p.add_argument("--target", required=True)
    p.add_argument("--eps", type=float, default=0.05)
    p.add_argument("--pieces", type=int, default=300)
    p.add_argument("--elide-identity", action="store_true")
    p.add_argument("--out", help="stack JSON")
    p.add_argument("--report", help="report JSON (stdout when omitted)")
    p.add_argument("--curves", help="CSV with columns x, p, approx")
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("compile-linear", help="compile a matrix into ReLU planar and Householder layers")
    p.add_argument("--matrix", required=True)
    p.add_argument("--out")
    p.add_argument("--report")
    p.set_defaults(fn=cmd_compile)

    p = sub.add_parser("topo-check", help="topology-matching residuals")
    p.add_argument("--flow", required=True)
    p.add_argument("--base", required=True)
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--check", choices=["auto", "relu", "span", "radial"], default="auto")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_topo)

    p = sub.add_parser("feasibility", help="Gaussian-to-Gaussian feasibility verdicts")
    p.add_argument("--sigma-q", required=True)
    p.add_argument("--sigma-p", required=True)
    p.add_argument("--family", choices=["planar-smooth", "sylvester-smooth", "radial", "relu-sylvester"])
    p.add_argument("--m", type=int)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_feasibility)

    p = sub.add_parser("capacity", help="depth lower-bound scaling table")
    p.add_argument("--family", choices=["householder", "local_planar"], required=True)
    p.add_argument("--dims", required=True, help="comma-separated dimensions")
    p.add_argument("--kappa", type=float, default=1.0)
    p.add_argument("--tau", type=float, default=0.5)
    p.add_argument("--c-h", type=float, default=2.0)
    p.add_argument("--gap", type=float, default=1.0)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_capacity)

    p = sub.add_parser("l1", help="l1 distance between p and q (or the pushforward of q)")
    p.add_argument("--p", required=True)
    p.add_argument("--q", required=True)
    p.add_argument("--flow")
    p.add_argument("--method", choices=["grid", "mc"], default="grid")
    p.add_argument("--n", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_l1)

    p = sub.add_parser("repro", help="run a named experiment")
    p.add_argument("name", choices=sorted(DEFAULTS))
    p.add_argument("--config")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_repro)

    p = sub.add_parser("validate", help="validate flow and distribution JSON files")
    p.add_argument("files", nargs="+")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_validate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        code = args.fn(args)
    except FlowcapError as exc:
        print(f"error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error (I/O): {exc}", file=sys.stderr)
        return 2
    return code or 0


if __name__ == "__main__":
    sys.exit(main())
