"""Command line front end.

Subcommands: wolff, forward, dnmap-probe, reconstruct, study, ab.
Exit codes: 0 success, 1 usage error, 2 numerical failure (artifacts are
still written).
"""

import argparse
import sys

from .errors import NonConvergence, PCalderonError
from .harness import (ExperimentConfig, load_config, run_ab, run_dnmap_probe,
                      run_forward, run_reconstruct, run_study, run_wolff)

USAGE_EXIT = 1
NUMERICAL_EXIT = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(USAGE_EXIT, f"{self.prog}: error: {message}\n")


def _add_common(sub):
    sub.add_argument("--config", default=None, help="JSON config file")
    sub.add_argument("--out", default=None, help="output directory")
    sub.add_argument("--seed", type=int, default=None)
    sub.add_argument("--threads", type=int, default=None)


def build_parser():
    parser = _Parser(prog="pcalderon",
                     description="DN measurements and boundary determination "
                                 "for the weighted p-Laplace equation")
    subs = parser.add_subparsers(dest="command", required=True)

    w = subs.add_parser("wolff", parents=[], help="periodic profile and constants")
    w.add_argument("--p", type=float, required=True)
    w.add_argument("--tol", type=float, default=1e-10)
    w.add_argument("--out", default="out")

    for name, helptext in (("forward", "one Dirichlet solve"),
                           ("dnmap-probe", "mollifier probe sweep"),
                           ("reconstruct", "boundary reconstruction at x0"),
                           ("study", "parameter sweep"),
                           ("ab", "A/B uniqueness experiment")):
        sp = subs.add_parser(name, help=helptext)
        _add_common(sp)
        if name == "dnmap-probe":
            sp.add_argument("--points", type=int, default=8)
        if name == "ab":
            sp.add_argument("--gamma1", default="affine_plus")
            sp.add_argument("--gamma2", default="affine_minus")
    return parser


def _config_from_args(args):
    overrides = {}
    if args.out is not None:
        overrides["out_dir"] = args.out
    if args.seed is not None:
        overrides["seed"] = args.seed
    if getattr(args, "threads", None) is not None:
        overrides["threads"] = args.threads
    return load_config(args.config, **overrides)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "wolff":
            summary = run_wolff(args.p, args.tol, args.out)
            print(f"lambda = {summary['lambda']:.6f}  K = {summary['K']:.6f}  "
                  f"c_p = {summary['c_p']:.6f}")
            return 0
        config = _config_from_args(args)
        if args.command == "forward":
            res = run_forward(config)
            if "rel_l2_error" in res and res["rel_l2_error"] is not None:
                print(f"relative L2 error = {res['rel_l2_error']:.3e}")
            print("forward solve written to", config.out_dir)
            return 0
        if args.command == "dnmap-probe":
            run_dnmap_probe(config, n_points=args.points)
            print("probe sweep written to", config.out_dir)
            return 0
        if args.command == "reconstruct":
            res = run_reconstruct(config)
            for line in res["table"]:
                print(line)
            return 0
        if args.command == "study":
            res = run_study(config)
            print(f"{len(res['rows'])} rows, {res['failures']} failures")
            return 0
        if args.command == "ab":
            res = run_ab(config, args.gamma1, args.gamma2)
            rep = res["report"]
            print(f"dgamma(model1) = {rep['dgamma_alpha']['model1']:+.4f}  "
                  f"dgamma(model2) = {rep['dgamma_alpha']['model2']:+.4f}  "
                  f"separation = {rep['separation']:.4f}")
            print(f"separated beyond error bars: {rep['separated_beyond_bars']}")
            return 0
        parser.error(f"unknown command {args.command!r}")
    except (ValueError, FileNotFoundError, KeyError) as exc:
        print(f"pcalderon: usage error: {exc}", file=sys.stderr)
        return USAGE_EXIT
    except NonConvergence as exc:
        print(f"pcalderon: numerical failure: {exc}", file=sys.stderr)
        return NUMERICAL_EXIT
    except PCalderonError as exc:
        print(f"pcalderon: numerical failure: {exc}", file=sys.stderr)
        return NUMERICAL_EXIT


if __name__ == "__main__":    # pragma: no cover
    sys.exit(main())
