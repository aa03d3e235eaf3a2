"""Command-line interface: ``kerneldist <command> ...``.

Commands:
    dist     kernel distance between two point files (exact, wspd, rff, ifgt)
    align    best translation or rigid motion of the second file onto the first
    coreset  random coreset of a point file plus its discrepancy report
    embed    feature vector of a point file in the binary format
    fdist    distance between two embedded feature files
    bench    benchmark tables as CSV

Exit codes: 0 success, 2 unreadable input, 3 invalid parameters,
4 numerical instability, 5 work budget exceeded.
"""
from __future__ import annotations

import argparse
import csv
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import _backend, bench, io
from .align import (best_rigid_motion, best_rigid_motion_coreset, best_translation,
                    best_translation_coreset)
from .core import GaussianKernel, kernel_distance_sq_exact
from .coreset import coreset_feature_bound, coreset_random, coreset_size_random, discrepancy_report
from .errors import InvalidParameterError, KernelDistError
from .features import (draw_frequencies, embed, ifgt_choose_tau, ifgt_error_bound,
                       kernel_distance_features, make_taylor_basis, rff_dimension, taylor_center,
                       taylor_delta)
from .reduce import kernel_distance_sq_oriented
from .rng import check_seed
from .wspd import wspd_estimate

PROG = "kerneldist"
# the query grid of the coreset report needs eps < 1
REPORT_EPS_MAX = 0.5


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if not math.isfinite(x):
            raise InvalidParameterError(f"non-finite value {x} in report")
        return x
    return x


def _emit(report: dict, out: str | None) -> None:
    text = io.dumps_report(_jsonable(report))
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _base(command: str, method: str, params: dict, t0: float) -> dict:
    return {"command": command, "method": method, "params": params,
            "wall_time_ms": (time.perf_counter() - t0) * 1e3, "backend": _backend.backend_name()}


def _pair(args):
    A = io.read_points(args.P, args.format)
    B = io.read_points(args.Q, args.format)
    if A.points.dim != B.points.dim:
        raise InvalidParameterError(
            f"{args.P} has dimension {A.points.dim} but {args.Q} has {B.points.dim}")
    return A, B


# ------------------------------------------------------------------ commands

def cmd_dist(args) -> int:
    t0 = time.perf_counter()
    A, B = _pair(args)
    k = GaussianKernel(args.sigma)
    P, Q = A.points, B.points
    W2 = max(P.total_mass, Q.total_mass) ** 2
    span = (P.total_mass + Q.total_mass) ** 2
    params = {"sigma": k.sigma}
    if args.oriented:
        if args.method != "exact":
            raise InvalidParameterError("--oriented is supported with --method exact only")
        d2 = kernel_distance_sq_oriented(k, A.oriented, B.oriented)
        cert = {"kind": "exact", "bound": 0.0}
    elif args.method == "exact":
        d2 = kernel_distance_sq_exact(k, P, Q)
        cert = {"kind": "exact", "bound": 0.0}
    elif args.method == "wspd":
        est = wspd_estimate(k, P, Q, args.eps)
        d2 = est.d2
        params["eps"] = args.eps
        cert = {"kind": "wspd", "bound": args.eps * W2, "n_pairs": est.n_pairs,
                "n_pruned": est.n_pruned, "alpha": est.alpha}
    elif args.method == "rff":
        seed = check_seed(args.seed)
        rho = args.rho or rff_dimension(args.eps, args.delta, P.n + Q.n)
        basis = draw_frequencies(k.sigma, P.dim, rho, seed)
        d2 = kernel_distance_features(embed(basis, P), embed(basis, Q))
        params.update(eps=args.eps, delta=args.delta, seed=seed)
        # every pair within eps mu nu, jointly with probability 1 - delta
        cert = {"kind": "rff", "rho": rho, "confidence": 1.0 - args.delta,
                "bound": args.eps * span if not args.rho else None}
    else:
        c = taylor_center(P, Q)
        Delta = taylor_delta(k, c, P, Q)
        tau = args.tau or (ifgt_choose_tau(args.eps, Delta) if Delta > 0 else 1)
        basis = make_taylor_basis(k.sigma, c, tau)
        d2 = kernel_distance_features(embed(basis, P), embed(basis, Q))
        params["eps"] = args.eps
        cert = {"kind": "ifgt", "tau": tau, "rho": basis.rho, "Delta": Delta,
                "bound": ifgt_error_bound(tau, Delta) * span}
    rep = _base("dist", args.method, params, t0)
    rep.update(n=[P.n, Q.n], dim=P.dim, D_K=math.sqrt(d2), D_K2=d2, certificate=cert)
    rep["wall_time_ms"] = (time.perf_counter() - t0) * 1e3
    _emit(rep, args.out)
    return 0


def cmd_align(args) -> int:
    t0 = time.perf_counter()
    A, B = _pair(args)
    k = GaussianKernel(args.sigma)
    P, Q = A.points, B.points
    if args.mode == "rigid" and P.dim not in (2, 3):
        raise InvalidParameterError(f"rigid alignment needs d in {{2, 3}}, got d={P.dim}")
    kw = {"max_work": args.max_work}
    params = {"sigma": k.sigma, "eps": args.eps, "mode": args.mode}
    if args.coreset:
        seed = check_seed(args.seed)
        params.update(delta=args.delta, seed=seed)
        fn = best_translation_coreset if args.mode == "translate" else best_rigid_motion_coreset
        res = fn(k, P, Q, args.eps, args.delta, seed, size=args.size, **kw)
    else:
        fn = best_translation if args.mode == "translate" else best_rigid_motion
        res = fn(k, P, Q, args.eps, **kw)
    motion = res.motion.to_dict()
    motion["canonical"] = res.motion.canonical().to_dict()
    rep = _base("align", args.mode + ("-coreset" if args.coreset else ""), params, t0)
    rep.update(n=[P.n, Q.n], dim=P.dim, motion=motion, D_K=math.sqrt(res.d2), D_K2=res.d2,
               objective=res.objective,
               search=dict(res.params, n_evaluated=res.n_evaluated, n_nodes=res.n_nodes))
    rep["wall_time_ms"] = (time.perf_counter() - t0) * 1e3
    _emit(rep, args.report)
    return 0


def cmd_coreset(args) -> int:
    t0 = time.perf_counter()
    A = io.read_points(args.P, args.format)
    k = GaussianKernel(args.sigma)
    P = A.points
    seed = check_seed(args.seed)
    size = args.size or coreset_size_random(args.eps, args.delta, P.dim)
    C = coreset_random(P, size, seed, eps_target=min(args.eps, 1.0))
    io.write_points(args.out, C.subset)
    rep_eps = min(args.eps, REPORT_EPS_MAX)
    disc = discrepancy_report(k, P, C, eps=rep_eps, with_balls=args.balls)
    report = _base("coreset", "random", {"sigma": k.sigma, "eps": args.eps,
                                         "delta": args.delta, "seed": seed,
                                         "query_eps": rep_eps}, t0)
    report.update(n=[P.n], dim=P.dim, discrepancy=disc.to_dict(),
                  coreset={"size": C.size, "parent_size": P.n, "path": str(args.out)})
    if args.certificate and args.eps < 1.0:
        rho = rff_dimension(args.eps, args.delta, P.n)  # the coreset lies inside P
        basis = draw_frequencies(k.sigma, P.dim, rho, seed)
        fb = coreset_feature_bound(P, C, basis)
        W = max(P.total_mass, C.subset.total_mass)
        span = (P.total_mass + C.subset.total_mass) ** 2
        # bound: calibrated agreement eps W^2 / 2; bound_worst_case: union bound over pairs
        report["certificate"] = {"kind": "rff", "rho": rho, "feature_bound": fb,
                                 "bound": fb + 0.5 * args.eps * W * W,
                                 "bound_worst_case": fb + args.eps * span,
                                 "confidence": 1.0 - args.delta}
    report["wall_time_ms"] = (time.perf_counter() - t0) * 1e3
    _emit(report, args.report)
    return 0


def cmd_embed(args) -> int:
    t0 = time.perf_counter()
    A = io.read_points(args.P, args.format)
    k = GaussianKernel(args.sigma)
    P = A.points
    params = {"sigma": k.sigma}
    if args.basis == "rff":
        seed = check_seed(args.seed)
        rho = args.rho or rff_dimension(args.eps, args.delta, P.n)
        basis = draw_frequencies(k.sigma, P.dim, rho, seed)
        params.update(seed=seed, eps=args.eps, delta=args.delta)
    else:
        if args.center is not None:
            c = np.array([float(v) for v in args.center.split(",")])
            if c.shape[0] != P.dim:
                raise InvalidParameterError(f"--center needs {P.dim} coordinates")
        else:
            c = taylor_center(P)
        Delta = taylor_delta(k, c, P)
        tau = args.tau or (ifgt_choose_tau(args.eps, Delta) if Delta > 0 else 1)
        basis = make_taylor_basis(k.sigma, c, tau)
        params.update(eps=args.eps, Delta=Delta)
    fv = embed(basis, P)
    io.write_features(args.out, fv)
    rep = _base("embed", args.basis, params, t0)
    rep.update(n=[P.n], dim=P.dim, basis=io.basis_dict(basis), output=str(args.out))
    rep["wall_time_ms"] = (time.perf_counter() - t0) * 1e3
    _emit(rep, args.report)
    return 0


def cmd_fdist(args) -> int:
    t0 = time.perf_counter()
    a = io.read_features(args.A)
    b = io.read_features(args.B)
    d2 = kernel_distance_features(a, b)
    rep = _base("fdist", a.tag, {}, t0)
    rep.update(D_K=math.sqrt(d2), D_K2=d2, basis=io.basis_dict(a.basis))
    _emit(rep, args.out)
    return 0


def cmd_bench(args) -> int:
    sizes = None
    if args.sizes:
        try:
            sizes = [int(s) for s in args.sizes.split(",") if s.strip()]
        except ValueError:
            raise InvalidParameterError(f"--sizes must be comma separated integers, got "
                                        f"{args.sizes!r}") from None
        if not sizes or min(sizes) < 1:
            raise InvalidParameterError("--sizes needs positive integers")
    cols, rows = bench.run_suite(args.suite, sizes, check_seed(args.seed))
    fh = open(args.out, "w", newline="", encoding="utf-8") if args.out else sys.stdout
    try:
        wr = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
        wr.writeheader()
        for r in rows:
            wr.writerow({c: (repr(v) if isinstance(v, float) else v) for c, v in r.items()})
    finally:
        if args.out:
            fh.close()
    return 0


# ------------------------------------------------------------------ parser

def _common(p: argparse.ArgumentParser, eps: float | None = 0.1) -> None:
    p.add_argument("--sigma", type=float, default=1.0, help="kernel bandwidth (default 1)")
    if eps is not None:
        p.add_argument("--eps", type=float, default=eps, help=f"tolerance (default {eps})")
    p.add_argument("--threads", type=int, default=None,
                   help="worker threads (default: $KERNELDIST_THREADS or all cores)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog=PROG, description="Kernel distance between point sets.")
    ap.add_argument("--backend", choices=["compiled", "python"], default=None,
                    help="kernel implementation (default: compiled if built)")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("dist", help="kernel distance between two point files")
    p.add_argument("P")
    p.add_argument("Q")
    p.add_argument("--method", choices=["exact", "wspd", "rff", "ifgt"], default="exact")
    _common(p)
    p.add_argument("--delta", type=float, default=0.1, help="failure probability for rff")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rho", type=int, default=None, help="rff dimension override")
    p.add_argument("--tau", type=int, default=None, help="ifgt order override")
    p.add_argument("--oriented", action="store_true", help="use orientation columns u1..ud")
    p.add_argument("--format", choices=["csv", "json"], default=None)
    p.add_argument("--out", default=None, help="report path (default stdout)")
    p.set_defaults(func=cmd_dist)

    p = sub.add_parser("align", help="align the second file onto the first")
    p.add_argument("P")
    p.add_argument("Q")
    p.add_argument("--mode", choices=["translate", "rigid"], default="translate")
    _common(p)
    p.add_argument("--coreset", action="store_true", help="search on random coresets")
    p.add_argument("--delta", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=None, help="coreset size per side")
    p.add_argument("--max-work", type=float, default=4e9, help="kernel evaluation budget")
    p.add_argument("--format", choices=["csv", "json"], default=None)
    p.add_argument("--out", "--report", dest="report", default=None,
                   help="report path (default stdout)")
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("coreset", help="random coreset and discrepancy report")
    p.add_argument("P")
    _common(p, eps=0.2)
    p.add_argument("--delta", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=None, help="override the size formula")
    p.add_argument("--balls", action="store_true", help="also compute the ball discrepancy")
    p.add_argument("--no-certificate", dest="certificate", action="store_false",
                   help="skip the random-feature certificate")
    p.add_argument("--format", choices=["csv", "json"], default=None)
    p.add_argument("--out", required=True, help="coreset output file (.csv or .json)")
    p.add_argument("--report", default=None, help="report path (default stdout)")
    p.set_defaults(func=cmd_coreset)

    p = sub.add_parser("embed", help="write the feature vector of a point file")
    p.add_argument("P")
    p.add_argument("--basis", choices=["rff", "ifgt"], default="rff")
    _common(p)
    p.add_argument("--delta", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rho", type=int, default=None, help="rff dimension (default from eps, delta, n)")
    p.add_argument("--tau", type=int, default=None, help="ifgt order (default from eps)")
    p.add_argument("--center", default=None, help="ifgt center as comma separated coordinates")
    p.add_argument("--format", choices=["csv", "json"], default=None)
    p.add_argument("--out", required=True, help="binary feature file")
    p.add_argument("--report", default=None, help="report path (default stdout)")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("fdist", help="distance between two feature files")
    p.add_argument("A")
    p.add_argument("B")
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_fdist)

    p = sub.add_parser("bench", help="benchmark suites as CSV")
    p.add_argument("--suite", required=True, help=f"one of {sorted(bench.SUITES)}")
    p.add_argument("--sizes", default=None, help="comma separated sizes")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--out", default=None, help="CSV path (default stdout)")
    p.set_defaults(func=cmd_bench)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.backend:
            _backend.use_backend(args.backend)
        threads = args.threads
        if threads is not None and threads < 1:
            raise InvalidParameterError(f"--threads must be >= 1, got {threads}")
        _backend.set_num_threads(threads)
        return args.func(args)
    except KernelDistError as exc:
        print(f"{PROG}: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except ValueError as exc:
        # parameter checks raised by numpy / the standard library
        print(f"{PROG}: error: {exc}", file=sys.stderr)
        return InvalidParameterError.exit_code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
