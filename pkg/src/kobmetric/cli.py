"""Command line entry point: ``kobmetric <verb> [options]``.

Exit codes: 0 when every verdict passes, 1 when one fails, 2 on configuration errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from .errors import ConfigInvalid, KobmetricError
from .experiments import EXPERIMENTS, _json_safe, load_config, run_experiment

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def _vec(text):
    try:
        v = np.array([float(x) for x in text.replace(",", " ").split()])
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a vector: {text!r}") from None
    if v.shape != (4,):
        raise argparse.ArgumentTypeError("expected 4 comma-separated reals")
    return v


def _domain(args):
    from .geometry import get_domain

    try:
        return get_domain(args.domain)
    except KobmetricError as exc:
        raise ConfigInvalid(str(exc)) from exc


def _emit(args, payload, passed=True):
    text = json.dumps(_json_safe(payload), indent=2, sort_keys=True)
    print(text)
    if args.out:
        import os

        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, f"{args.verb}.json"), "w") as fh:
            fh.write(text + "\n")
    return EXIT_OK if passed else EXIT_FAIL


# ---------------------------------------------------------------------------
# verbs

def cmd_levi(args):
    from .geometry import levi_form, levi_hermitian, levi_via_disc

    D = _domain(args)
    out = {"domain": args.domain, "point": args.point, "vector": args.vector,
           "levi_form": float(levi_form(D.rho, D.J, args.point, args.vector)),
           "levi_hermitian": float(levi_hermitian(D.rho, D.J, args.point, args.vector))}
    if args.disc:
        out["levi_disc"] = float(levi_via_disc(D.rho, D.J, args.point, args.vector))
    return _emit(args, out)


def cmd_psh(args):
    from .geometry import BarrierFunction, RegionSpec, is_plurisubharmonic

    D = _domain(args)
    rho = BarrierFunction(args.epsilon).as_defining_function() if args.barrier else D.rho
    rep = is_plurisubharmonic(rho, D.J, RegionSpec(n=args.n, radius=args.radius, inner=args.inner,
                                                    seed=args.seed))
    return _emit(args, {"passed": rep.passed, "min_margin": rep.min_margin, "n_samples": rep.n_samples,
                        "witness_point": rep.witness_point, "witness_vector": rep.witness_vector},
                 rep.passed)


def cmd_solve_disc(args):
    from .disc import solve_disc

    D = _domain(args)
    u = solve_disc(D.J, args.w, N=args.degree, enforce=False)
    ok = u.info["contraction_ratio"] <= 0.5 and u.info["residual"] <= 1e-6
    info = {k: v for k, v in u.info.items() if k != "updates"}
    return _emit(args, {"derivative_at_origin": u.derivative_at_origin(), **info}, ok)


def cmd_kobayashi(args):
    from .kobayashi import metric_bounds

    D = _domain(args)
    b = metric_bounds(D.rho, D.J, args.point, args.vector)
    ok = b.lower <= b.upper
    return _emit(args, {"lower": b.lower, "E": b.estimate_E, "upper": b.upper,
                        "certificate_valid": b.info.get("certificate_valid"),
                        "epsilon": b.info.get("epsilon")}, ok)


def cmd_distance(args):
    from .kobayashi import integrated_distance

    D = _domain(args)
    d = integrated_distance(D.rho, D.J, args.p, args.q, mode=args.mode, n_boundary=args.n_boundary)
    return _emit(args, d if isinstance(d, dict) else {"distance": d})


def cmd_cc_distance(args):
    from .geometry import boundary_project_batch
    from .gromov import build_boundary_mesh, cc_distance

    D = _domain(args)
    pq = np.vstack([args.p, args.q])
    b, _, ok = boundary_project_batch(D.rho, pq)
    if not ok.all():
        raise ConfigInvalid("p and q must project uniquely to the boundary")
    mesh = build_boundary_mesh(D.rho, D.J, n=args.n, kappa=args.kappa, extra_points=b)
    return _emit(args, {"cc_distance": cc_distance(mesh, b[0], b[1]), "kappa": mesh.kappa})


def cmd_gromov_delta(args):
    from .gromov import DistanceMatrix, hyperbolicity_delta

    try:
        d = DistanceMatrix.from_csv(args.matrix, check_triangle=False)
    except (OSError, ValueError) as exc:
        raise ConfigInvalid(str(exc)) from exc
    return _emit(args, {"n_points": len(d), "delta_hyp": hyperbolicity_delta(d, seed=args.seed)})


def cmd_experiment(args):
    cfg = load_config(args.config) if args.config else {}
    rep = run_experiment(args.name, cfg, seed=args.seed, out=args.out or f"results/{args.name}",
                         workers=args.workers)
    print(json.dumps(_json_safe({k: v for k, v in rep.summary.items() if k != "config"}), indent=2,
                     sort_keys=True))
    print(f"{args.name}: {'PASS' if rep.passed else 'FAIL'} ({', '.join(rep.files)})")
    return EXIT_OK if rep.passed else EXIT_FAIL


# ---------------------------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON or YAML configuration file")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", help="output directory")
    common.add_argument("--workers", type=int, default=1)
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="kobmetric", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="verb", required=True)

    def verb(name, fn, help_):
        s = sub.add_parser(name, parents=[common], help=help_)
        s.set_defaults(func=fn)
        return s

    s = verb("levi", cmd_levi, "Levi form at a point")
    s.add_argument("--domain", default="ball")
    s.add_argument("--point", type=_vec, required=True)
    s.add_argument("--vector", type=_vec, required=True)
    s.add_argument("--disc", action="store_true", help="also compute via a pseudoholomorphic disc")

    s = verb("psh-check", cmd_psh, "sampled plurisubharmonicity check")
    s.add_argument("--domain", default="ball")
    s.add_argument("--barrier", action="store_true", help="check log|z|^2 + 24 eps |z| instead of rho")
    s.add_argument("--epsilon", type=float, default=0.05)
    s.add_argument("--n", type=int, default=10000)
    s.add_argument("--radius", type=float, default=1.0)
    s.add_argument("--inner", type=float, default=0.0)

    s = verb("solve-disc", cmd_solve_disc, "pseudoholomorphic disc through 0 tangent to w")
    s.add_argument("--domain", default="ball", help="domain whose structure is used")
    s.add_argument("--w", type=_vec, required=True)
    s.add_argument("--degree", type=int, default=24)

    s = verb("kobayashi", cmd_kobayashi, "lower bound, sharp estimate and upper bound")
    s.add_argument("--domain", default="ball")
    s.add_argument("--point", type=_vec, required=True)
    s.add_argument("--vector", type=_vec, required=True)

    s = verb("distance", cmd_distance, "integrated distance between two points")
    s.add_argument("--domain", default="ball")
    s.add_argument("--p", type=_vec, required=True)
    s.add_argument("--q", type=_vec, required=True)
    s.add_argument("--mode", choices=["estimate", "certified"], default="estimate")
    s.add_argument("--n-boundary", type=int, default=600)

    s = verb("cc-distance", cmd_cc_distance, "boundary Carnot-Caratheodory distance of projections")
    s.add_argument("--domain", default="ball")
    s.add_argument("--p", type=_vec, required=True)
    s.add_argument("--q", type=_vec, required=True)
    s.add_argument("--n", type=int, default=800)
    s.add_argument("--kappa", type=float, default=None)

    s = verb("gromov-delta", cmd_gromov_delta, "four-point constant of a distance matrix CSV")
    s.add_argument("matrix")

    s = verb("experiment", cmd_experiment, "run a named experiment")
    s.add_argument("name", choices=EXPERIMENTS)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.config and args.verb != "experiment":
        cfg = load_config(args.config)
        for k, v in cfg.items():
            key = k.replace("-", "_")
            if not hasattr(args, key):
                print(f"config error: unknown option {k!r}", file=sys.stderr)
                return EXIT_CONFIG
            setattr(args, key, _vec(",".join(map(str, v))) if isinstance(v, list) else v)
    try:
        return args.func(args)
    except ConfigInvalid as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except KobmetricError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
