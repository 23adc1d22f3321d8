"""Command line entry point: ``polystokes <command> ...``."""

from __future__ import annotations

import argparse
import logging
import sys

from .mesh import MeshError, mesh_from_spec
from .stokes_solver import SCHEMES, SolverError
from .verify import (check_complex, parse_family, run_case, run_convergence, run_robustness,
                     write_rates_csv, write_report_csv, write_robust_csv)


def _int_list(text):
    return [int(x) for x in text.split(",") if x]


def _positive(text):
    x = float(text)
    if not x > 0:
        raise argparse.ArgumentTypeError("must be positive")
    return x


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="polystokes",
                                description="DDR/VEM complexes and pressure-robust Stokes solvers.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("check-complex", help="complex property and dimension counts")
    c.add_argument("--mesh", required=True, help="mesh file or generator spec such as tets:2")
    c.add_argument("--k", type=int, required=True)
    c.add_argument("--scheme", choices=SCHEMES + ("both",), default="both")
    c.add_argument("--vectors", type=int, default=20)
    c.add_argument("--tol", type=float, default=1e-11)

    def common(q, family):
        q.add_argument("--scheme", choices=SCHEMES, required=True)
        if family:
            q.add_argument("--family", required=True, help="e.g. tets:2,4,8 or comma-separated files")
        else:
            q.add_argument("--mesh", required=True)
        q.add_argument("--sigma", type=_positive, default=0.1)
        q.add_argument("--out", required=True)
        q.add_argument("--no-timing", action="store_true", help="write 0 in WallSeconds")

    s = sub.add_parser("solve", help="solve the manufactured problem on one mesh")
    common(s, family=False)
    s.add_argument("--k", type=int, required=True)
    s.add_argument("--lambda", dest="lam", type=_positive, default=1.0)
    s.add_argument("--condense", action="store_true", help="statically condense element DoFs")

    v = sub.add_parser("convergence", help="errors and observed orders over a mesh family")
    common(v, family=True)
    v.add_argument("--k", type=_int_list, default=[0, 1, 2])
    v.add_argument("--lambda", dest="lam", type=_positive, default=1.0)

    r = sub.add_parser("robustness", help="compare errors for lambda = 1 and 1e5")
    common(r, family=True)
    r.add_argument("--k", type=int, required=True)
    r.add_argument("--lambdas", type=lambda t: [_positive(x) for x in t.split(",")], default=[1.0, 1e5])
    return p


def _check(args):
    mesh = mesh_from_spec(args.mesh)
    schemes = SCHEMES if args.scheme == "both" else (args.scheme,)
    ok = True
    for scheme in schemes:
        res = check_complex(scheme, mesh, args.k, n_vectors=args.vectors)
        dims = " ".join(f"{a}={b}" for a, b in res.dims.items())
        good = res.passed(args.tol)
        ok &= good
        print(f"{scheme} k={args.k} {dims} alt_sum={res.alternating_sum} "
              f"curl_grad={res.curl_grad:.3e} div_curl={res.div_curl:.3e} "
              f"{'PASS' if good else 'FAIL'}")
    return 0 if ok else 1


def _solve(args):
    mesh = mesh_from_spec(args.mesh)
    rep, _, sol = run_case(args.scheme, mesh, args.k, args.lam, args.sigma, args.condense)
    write_report_csv(args.out, [rep], timing=not args.no_timing)
    print(f"h={rep.h:.4f} dim={rep.system_dim} residual={sol.residual:.2e} "
          f"Ed_u={rep.Ed_u:.4e} Ed_p={rep.Ed_p:.4e} Ec_u={rep.Ec_u:.4e} Ec_p={rep.Ec_p:.4e}")
    return 0


def _convergence(args):
    study = run_convergence(args.scheme, parse_family(args.family), args.k, args.lam, args.sigma)
    write_rates_csv(args.out, study, timing=not args.no_timing)
    for k, (reps, rts) in sorted(study.items()):
        last = rts[-1]
        print(f"k={k} finest-pair orders: Ec_u={last['Ec_u']:.2f} Ec_p={last['Ec_p']:.2f} "
              f"Ed_u={last['Ed_u']:.2f} Ed_p={last['Ed_p']:.2f}")
    return 0


def _robustness(args):
    rows = run_robustness(args.scheme, parse_family(args.family), args.k, args.lambdas, args.sigma)
    write_robust_csv(args.out, rows, timing=not args.no_timing)
    for reps, ratio in rows:
        print(f"h={reps[0].h:.4f} " + " ".join(f"{key}={val:.3g}" for key, val in ratio.items()))
    return 0


COMMANDS = {"check-complex": _check, "solve": _solve,
            "convergence": _convergence, "robustness": _robustness}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (MeshError, SolverError, ValueError, OSError) as exc:
        print(f"polystokes: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
