"""Command-line front end: ``pfsense <command> [options]``.

Exit status is 0 on success, 1 on domain errors (singular matrices, solver
failures, bad data) and 2 on usage errors.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys

import numpy as np

from .exceptions import PfsenseError
from .numkit import format_float, read_matrix_csv, write_matrix_csv

logger = logging.getLogger("pfsense")


class UsageError(Exception):
    pass


def _emit(text, out):
    if out in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


def _csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([format_float(x) if isinstance(x, (float, np.floating)) else x for x in r])
    return buf.getvalue()


def _solve(case_path, tol):
    from .netmodel import build_admittance, load_case
    from .powerflow import solve_newton_raphson
    from .exceptions import NoConvergence

    case = load_case(case_path)
    y = build_admittance(case)
    point = solve_newton_raphson(case, tol=tol)
    if not point.converged:
        raise NoConvergence(f"power flow did not converge (mismatch {point.mismatch_norm:.3e})")
    return case, y, point


# -- commands -----------------------------------------------------------------

def cmd_solve(args):
    case, _, point = _solve(args.case, args.tol)
    rows = [(b, float(point.v[i]), float(math.degrees(point.theta[i])),
             float(point.p_inj[i]), float(point.q_inj[i]))
            for i, b in enumerate(case.bus_ids)]
    _emit(_csv_text(("bus", "v", "theta_deg", "p", "q"), rows), args.out)
    return 0


def cmd_sensitivities(args):
    from .sensitivity import sensitivities

    case, y, point = _solve(args.case, args.tol)
    s_v_p, s_v_q = sensitivities(y, point, args.bus_set, args.route, case=case, eps=args.eps)
    buf = io.StringIO()
    write_matrix_csv(buf, np.hstack([s_v_p, s_v_q]))
    _emit(buf.getvalue(), args.out)
    return 0


def cmd_check(args):
    from .observability import check_case, report_render

    reports = [check_case(c, args.bus_set) for c in args.case]
    fmt = "json" if args.json else args.format
    _emit(report_render(reports, fmt, machine=fmt != "text"), args.out)
    return 1 if any(r.error for r in reports) else 0


def cmd_pfcurve(args):
    from .observability import alpha_min_curve, profile_from_point
    from .powerflow import assemble_jacobian

    if args.grid < 1:
        raise UsageError("--grid must be at least 1")
    if not 0 < args.alpha_lo <= 1:
        raise UsageError("--alpha-lo must lie in (0, 1]")
    _, y, point = _solve(args.case, args.tol)
    j = assemble_jacobian(y, point, args.bus_set)
    curve = alpha_min_curve(j, profile_from_point(point, args.bus_set),
                            np.linspace(args.alpha_lo, 1.0, args.grid))
    _emit(_csv_text(("alpha_max", "alpha_min"), curve), args.out)
    return 0


def cmd_estimate(args):
    from .amisim import read_ami_csv
    from .estimation import estimate_injections_phaseless, finite_differences, per_bus_rmse
    from .observability import build_K, profile_from_point, s_dagger
    from .powerflow import assemble_jacobian, bus_positions
    from .sensitivity import invert_jacobian

    case, y, point = _solve(args.case, args.tol)
    pos = bus_positions(point.kinds, "pq")
    ids = [case.bus_ids[i] for i in pos]
    series = read_ami_csv(args.series)
    missing = [b for b in ids if b not in series.bus_ids]
    if missing:
        raise UsageError(f"series lacks PQ buses {missing}")
    series = series.select([series.bus_ids.index(b) for b in ids])
    deltas = finite_differences(series)
    blocks = invert_jacobian(assemble_jacobian(y, point, "pq"))
    K = build_K(profile_from_point(point, "pq"))
    dp, dq = estimate_injections_phaseless(s_dagger(blocks, K), K, deltas.dV.T)
    if args.per_bus_rmse:
        rp = per_bus_rmse(dp.T, deltas.dP)
        rq = per_bus_rmse(dq.T, deltas.dQ)
        rows = [(b, float(a), float(c)) for b, a, c in zip(ids, rp, rq)]
        _emit(_csv_text(("bus", "rmse_p", "rmse_q"), rows), args.out)
    else:
        rows = [(t + 1, b, float(dp[k, t]), float(dq[k, t]))
                for t in range(deltas.m) for k, b in enumerate(ids)]
        _emit(_csv_text(("t", "bus", "dp", "dq"), rows), args.out)
    return 0


def cmd_simulate(args):
    from .amisim import default_loadshape, simulate_series, write_ami_csv
    from .netmodel import load_case

    if args.steps < 1:
        raise UsageError("--steps must be at least 1")
    if args.noise < 0:
        raise UsageError("--noise must be nonnegative")
    case = load_case(args.case)
    shape = default_loadshape(args.steps, args.profile, args.seed)
    series = simulate_series(case, shape, args.pf, args.noise, args.seed,
                             relative_noise=not args.absolute_noise)
    write_ami_csv(series, sys.stdout if args.out in (None, "-") else args.out)
    return 0


def cmd_complete(args):
    from .lowrank import MaskedMatrix, complete_nuclear, complete_rank_constrained

    s0 = read_matrix_csv(args.matrix)
    omega = read_matrix_csv(args.mask)
    if s0.shape != omega.shape:
        raise UsageError("matrix and mask shapes differ")
    if not np.all(np.isin(omega, (0.0, 1.0))):
        raise UsageError("mask entries must be 0 (known) or 1 (unknown)")
    truth = read_matrix_csv(args.truth) if args.truth else None
    mm = MaskedMatrix(s0, omega.astype(bool))
    if args.rank is not None:
        res = complete_rank_constrained(mm, args.rank, args.iters, args.tol, truth)
    else:
        res = complete_nuclear(mm, args.lam, args.delta, args.iters, args.tol, truth)
    if args.out:
        write_matrix_csv(args.out, res.s_hat)
    summary = {"iterations": res.iterations, "converged": res.converged,
               "final_objective": res.objective_trace[-1] if res.objective_trace else None,
               "known_fraction": float(mm.known_fraction),
               "rel_fro_error": res.rel_fro_error_vs_reference}
    sys.stdout.write(json.dumps(summary, indent=2) + "\n")
    if not args.out:
        buf = io.StringIO()
        write_matrix_csv(buf, res.s_hat)
        sys.stdout.write(buf.getvalue())
    return 0


def cmd_spectral(args):
    from .lowrank import spectral_report
    from .powerflow import assemble_jacobian
    from .sensitivity import invert_jacobian

    if bool(args.matrix) == bool(args.case):
        raise UsageError("give exactly one of --matrix or --case")
    if args.matrix:
        s = read_matrix_csv(args.matrix)
    else:
        _, y, point = _solve(args.case, args.tol)
        s = invert_jacobian(assemble_jacobian(y, point, args.bus_set)).s_wide
    rep = spectral_report(s)
    rows = [(g, k + 1, float(x)) for g, vals in rep.items() for k, x in enumerate(vals)]
    _emit(_csv_text(("group", "index", "sigma_normalized"), rows), args.out)
    return 0


# -- parser -------------------------------------------------------------------

def _nonneg(text):
    x = float(text)
    if not x >= 0:
        raise argparse.ArgumentTypeError("must be nonnegative")
    return x


def build_parser():
    p = argparse.ArgumentParser(prog="pfsense", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", metavar="command")

    def add(name, func, help_):
        sp = sub.add_parser(name, help=help_)
        sp.set_defaults(func=func)
        return sp

    def case_opts(sp, multi=False):
        sp.add_argument("--case", required=True, nargs="+" if multi else None,
                        help="case file (.m/.json) or bundled case name")
        sp.add_argument("--tol", type=float, default=1e-10, help="power flow tolerance (pu)")

    def bus_set(sp):
        sp.add_argument("--bus-set", choices=("pq", "nonslack"), default="pq")

    sp = add("solve", cmd_solve, "solve the AC power flow")
    case_opts(sp)
    sp.add_argument("--out")

    sp = add("sensitivities", cmd_sensitivities, "voltage-magnitude sensitivity matrix")
    case_opts(sp)
    bus_set(sp)
    sp.add_argument("--route", choices=("inverse", "schur", "phasor", "perturb"),
                    default="inverse")
    sp.add_argument("--eps", type=float, default=1e-5, help="perturb-and-observe step (pu)")
    sp.add_argument("--out")

    sp = add("check", cmd_check, "evaluate the invertibility conditions")
    case_opts(sp, multi=True)
    bus_set(sp)
    sp.add_argument("--json", action="store_true", help="shorthand for --format json")
    sp.add_argument("--format", choices=("csv", "json", "text"), default="csv")
    sp.add_argument("--out")

    sp = add("pfcurve", cmd_pfcurve, "alpha_min(alpha_max) feasibility curve")
    case_opts(sp)
    bus_set(sp)
    sp.add_argument("--grid", type=int, default=50)
    sp.add_argument("--alpha-lo", type=float, default=0.7)
    sp.add_argument("--out")

    sp = add("estimate", cmd_estimate, "recover injection changes from voltage magnitudes")
    case_opts(sp)
    sp.add_argument("--series", required=True, help="AMI CSV (t,bus,v,p,q)")
    sp.add_argument("--per-bus-rmse", action="store_true")
    sp.add_argument("--out")

    sp = add("simulate", cmd_simulate, "generate a synthetic AMI series")
    case_opts(sp)
    sp.add_argument("--steps", type=int, default=96)
    sp.add_argument("--noise", type=float, default=0.005)
    sp.add_argument("--absolute-noise", action="store_true")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--profile", choices=("flat", "residential"), default="residential")
    sp.add_argument("--pf", type=float, default=None, help="fixed load power factor")
    sp.add_argument("--out")

    sp = add("complete", cmd_complete, "complete a partially known matrix")
    sp.add_argument("--matrix", required=True)
    sp.add_argument("--mask", required=True, help="0/1 CSV, 1 marks unknown entries")
    sp.add_argument("--lambda", dest="lam", type=_nonneg, default=0.125)
    sp.add_argument("--delta", type=_nonneg, default=0.06)
    sp.add_argument("--rank", type=int, default=None)
    sp.add_argument("--iters", type=int, default=1000)
    sp.add_argument("--tol", type=float, default=1e-8)
    sp.add_argument("--truth")
    sp.add_argument("--out")

    sp = add("spectral", cmd_spectral, "normalized singular values per column group")
    sp.add_argument("--matrix")
    sp.add_argument("--case")
    sp.add_argument("--tol", type=float, default=1e-10)
    bus_set(sp)
    sp.add_argument("--out")
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"pfsense {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (PfsenseError, np.linalg.LinAlgError) as exc:
        print(f"pfsense {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"pfsense {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
