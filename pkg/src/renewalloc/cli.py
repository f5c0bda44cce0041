"""Command-line entry point: ``renewalloc {allocate,sweep,simulate,verify}``."""

from __future__ import annotations

import argparse
import sys

from . import experiments as ex
from .config import parse_config
from .errors import ConfigError, ParameterError, RefusalError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="renewalloc",
        description="Allocate harvested energy across OFDMA users by sigmoid utility.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("allocate", help="allocate one budget and write the per-user CSV")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="output CSV path, or - for stdout")
    p.add_argument("--strict", action="store_true", help="exit 3 if the scarcity fallback fired")

    p = sub.add_parser("sweep", help="write the data behind one figure")
    p.add_argument("--config", required=True)
    p.add_argument("--figure", required=True, type=int, choices=sorted(ex.FIGURES))
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--p", type=float, default=None, help="override the figure's slope(s)")
    p.add_argument("--r-tot", type=float, default=None, help="override the figure's budget")
    p.add_argument("--q", type=float, default=0.5, help="channel quality of the figure 3 curves")

    p = sub.add_parser("simulate", help="run the battery/channel simulation")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("verify", help="check the allocator against the grid oracle")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--trials", type=int, required=True)
    p.add_argument("--resolution", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True, help="output CSV path, or - for stdout")
    return parser


def _target(path):
    return sys.stdout if path == "-" else path


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "allocate":
            _, code = ex.run_allocate(parse_config(args.config), _target(args.out), strict=args.strict)
        elif args.command == "sweep":
            for path in ex.run_sweep(parse_config(args.config), args.figure, args.out,
                                     p=args.p, r_tot=args.r_tot, q_curve=args.q):
                print(path, file=sys.stderr)
            code = ex.EXIT_OK
        elif args.command == "simulate":
            _, _ = ex.run_simulate(parse_config(args.config), args.out)
            code = ex.EXIT_OK
        else:
            _, code = ex.run_verify(args.n, args.trials, args.resolution, args.seed, _target(args.out))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return ex.EXIT_CONFIG
    except (ParameterError, RefusalError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return ex.EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return code


if __name__ == "__main__":
    sys.exit(main())
