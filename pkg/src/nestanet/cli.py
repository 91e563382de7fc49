"""Command-line interface for the experiment harness.

Subcommands: exp-decay, compare, contour, stability, recover, mask, dims,
rerun.  Shared flags resolve to each experiment's defaults when omitted;
--delta and --inner-iters are mutually exclusive ways to pin the restart
schedule.  --paper-scale switches to the full 512-pixel side and warns on
stderr, since those runs take hours rather than minutes.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .harness import EXPERIMENTS, format_dims, rerun_from_manifest

PAPER_SIDE = 512


def _parse_floats(text: str) -> list:
    return [float(tok) for tok in text.split(",") if tok.strip()]


def _parse_ints(text: str) -> list:
    return [int(tok) for tok in text.split(",") if tok.strip()]


def _common_flags() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--side", type=int, help="image side (power of two)")
    common.add_argument("--sampling", type=float, help="target sampling fraction of N")
    common.add_argument("--lambda", dest="lam", type=float,
                        help="gradient weight in the analysis frame")
    common.add_argument("--r", type=float, help="restart contraction factor")
    sched = common.add_mutually_exclusive_group()
    sched.add_argument("--delta", type=float, help="restart scale factor")
    sched.add_argument("--inner-iters", dest="inner_iters", type=int,
                       help="iterations per restart (schedule solves for delta)")
    common.add_argument("--zeta", type=float, help="restart error floor")
    common.add_argument("--eta", type=float, help="measurement-fidelity radius")
    common.add_argument("--restarts", type=int, help="number of restarts K (K+1 runs)")
    common.add_argument("--seed", type=int, help="run seed; all RNG streams derive from it")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--threads", type=int, help="worker threads where supported")
    common.add_argument("--paper-scale", action="store_true",
                        help=f"use the full side {PAPER_SIDE} (slow)")
    return common


_COMMON_KEYS = {
    "side": "side",
    "sampling": "sampling",
    "lam": "weight",
    "r": "r",
    "delta": "delta",
    "inner_iters": "inner_iterations",
    "zeta": "zeta",
    "eta": "eta",
    "restarts": "restarts",
    "seed": "seed",
    "threads": "threads",
}

# Flags each experiment actually accepts; everything else is rejected loudly.
_ACCEPTED = {
    "exp-decay": {"side", "sampling", "weight", "r", "zeta", "restarts",
                  "inner_iterations", "delta", "seed", "etas"},
    "compare": {"side", "sampling", "weight", "r", "zeta", "restarts",
                "inner_iterations", "delta", "eta", "seed"},
    "contour": {"side", "sampling", "weight", "r", "restarts", "inner_iterations",
                "delta", "exponents", "seed", "threads"},
    "stability": {"side", "sampling", "weight", "r", "zeta", "restarts",
                  "inner_iterations", "delta", "eta", "eta_tilde_exponents",
                  "trials", "steps", "step_size", "seed", "threads"},
    "recover": {"side", "sampling", "weight", "r", "zeta", "restarts",
                "inner_iterations", "delta", "eta", "noise", "seed",
                "mask_file", "image_file"},
    "mask": {"side", "sampling", "seed"},
}


def _gather(args: argparse.Namespace, command: str) -> dict:
    kwargs = {}
    for attr, key in _COMMON_KEYS.items():
        value = getattr(args, attr, None)
        if value is None:
            continue
        if key not in _ACCEPTED[command]:
            flag = "--lambda" if attr == "lam" else "--" + attr.replace("_", "-")
            raise SystemExit(f"flag {flag} is not used by {command}")
        kwargs[key] = value
    if args.paper_scale:
        if "side" not in kwargs:
            kwargs["side"] = PAPER_SIDE
        print(
            f"warning: paper-scale run (side {kwargs['side']}); "
            "expect hours of runtime and large memory use",
            file=sys.stderr,
        )
    for extra in _ACCEPTED[command]:
        value = getattr(args, extra, None)
        if value is not None and extra not in kwargs:
            kwargs[extra] = value
    return kwargs


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nestanet",
        description="Restarted smoothed solver for Fourier imaging: experiments and utilities.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    common = _common_flags()

    p = sub.add_parser("exp-decay", parents=[common],
                       help="per-restart error decay under noise")
    p.add_argument("--etas", type=_parse_floats, help="comma-separated noise norms")

    sub.add_parser("compare", parents=[common],
                   help="restarted vs fixed-smoothing at equal budget")

    p = sub.add_parser("contour", parents=[common], help="(eta, zeta) error grid")
    p.add_argument("--exponents", type=_parse_ints,
                   help="comma-separated i values; eta, zeta = 10^-i")
    p.add_argument("--full-grid", action="store_true",
                   help="use i = -1..7 (81 cells) instead of the 6x6 default")

    p = sub.add_parser("stability", parents=[common],
                       help="worst-case perturbation search per radius")
    p.add_argument("--trials", type=int, help="ascent restarts per radius")
    p.add_argument("--steps", type=int, help="ascent steps per trial")
    p.add_argument("--step-size", dest="step_size", type=float, help="ascent step size")
    p.add_argument("--eta-tilde-exponents", dest="eta_tilde_exponents", type=_parse_ints,
                   help="comma-separated i; radii are eta * 10^i")

    p = sub.add_parser("recover", parents=[common], help="single reconstruction")
    p.add_argument("--mask", dest="mask_file", help="reuse a saved sampling mask")
    p.add_argument("--image", dest="image_file", help="grayscale input instead of the phantom")
    p.add_argument("--noise", type=float, help="add complex Gaussian noise of this norm")

    sub.add_parser("mask", parents=[common], help="generate and save a sampling mask")

    sub.add_parser("dims", parents=[common], help="print network depth/width accounting")

    p = sub.add_parser("rerun", help="re-execute a recorded manifest")
    p.add_argument("manifest", type=Path)
    p.add_argument("--out", type=Path, required=True)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    if args.command == "rerun":
        wrote = rerun_from_manifest(args.manifest, args.out)
        print(f"reran {args.manifest} -> {wrote}")
        return 0

    if args.command == "dims":
        side = args.side if args.side is not None else (PAPER_SIDE if args.paper_scale else 64)
        sampling = args.sampling if args.sampling is not None else 0.25
        restarts = args.restarts if args.restarts is not None else 9
        inner = args.inner_iters if args.inner_iters is not None else 17
        print(format_dims(restarts, inner, side, sampling))
        return 0

    if args.command == "contour" and getattr(args, "full_grid", False):
        if args.exponents is not None:
            raise SystemExit("--full-grid and --exponents are mutually exclusive")
        args.exponents = list(range(-1, 8))

    kwargs = _gather(args, args.command)
    out = args.out if args.out is not None else Path("runs") / args.command
    wrote = EXPERIMENTS[args.command](out, **kwargs)
    print(f"wrote {wrote}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
