"""Command line front end: encode, decode, allocate, metrics, weights, report.

Exit codes: 0 success, 1 usage or input validation, 2 malformed or
corrupt files, 3 infeasible budget.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .codec import (
    FLAG_F16_WEIGHTS,
    decode_pframe,
    encode_pframe,
    parse_container,
    write_bytes_atomic,
)
from .errors import DomainError, FormatError, InfeasibleBudgetError, MvrError
from .frames import read_yuv420_file, upsample_420_to_444, write_yuv420
from .model import default_config, generate_weights
from .motion import read_flo
from .nn import load_weights, save_weights
from .postproc import ms_ssim, psnr
from .ratecontrol import QUALITY_COUNT, allocate, load_stats, save_plan

__all__ = ["main"]

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_FORMAT = 2
EXIT_INFEASIBLE = 3


class _Parser(argparse.ArgumentParser):
    """argparse defaults to exit code 2 on usage errors; we reserve 2 for
    corrupt files, so usage problems exit 1 instead."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _parse_size(text: str) -> tuple[int, int]:
    parts = text.lower().split("x")
    try:
        width, height = (int(p) for p in parts)
    except ValueError:
        raise DomainError(f"size must look like 1920x1080, got {text!r}") from None
    if width <= 0 or height <= 0:
        raise DomainError(f"size must be positive, got {text!r}")
    return width, height


def _weights_file(directory: str, q: int) -> str:
    return os.path.join(directory, f"q{q}.mvrw")


def _obtain_weights(directory: str, q: int, seed: int, precision: str):
    """Load the weight set for q, generating and saving it when absent."""
    path = _weights_file(directory, q)
    if os.path.exists(path):
        weights = load_weights(path)
        if weights.quality != q:
            raise DomainError(
                f"{path} holds a quality-{weights.quality} set, expected {q}"
            )
        return weights
    weights = generate_weights(default_config(), quality=q, seed=seed,
                               precision=precision)
    os.makedirs(directory, exist_ok=True)
    save_weights(weights, path)
    return weights


def _check_jobs(jobs: int) -> None:
    if jobs < 1:
        raise DomainError(f"--jobs must be at least 1, got {jobs}")


def _read_frame(path: str, width: int, height: int):
    return read_yuv420_file(path, width, height)


def cmd_encode(args) -> int:
    _check_jobs(args.jobs)
    width, height = _parse_size(args.size)
    ref = _read_frame(args.ref, width, height)
    target = _read_frame(args.target, width, height)
    flow = read_flo(args.flow) if args.flow else None

    if args.q is not None:
        weights = _obtain_weights(args.weights, args.q, args.seed, args.precision)
        result = encode_pframe(target, ref, weights, flow=flow,
                               compute_metrics=not args.no_metrics)
    else:
        best = None
        smallest = None
        for q in range(QUALITY_COUNT):
            weights = _obtain_weights(args.weights, q, args.seed, args.precision)
            candidate = encode_pframe(target, ref, weights, flow=flow)
            size = candidate.stats.container_bytes
            if smallest is None or size < smallest:
                smallest = size
            if size > args.auto_budget:
                continue
            key = (-candidate.stats.msssim, size, q)
            if best is None or key < best[0]:
                best = (key, candidate)
        if best is None:
            raise InfeasibleBudgetError(
                f"no quality fits {args.auto_budget} bytes; the smallest "
                f"container is {smallest} bytes"
            )
        result = best[1]

    write_bytes_atomic(args.output, result.blob)
    stats = {
        "frame": os.path.basename(args.target),
        "q": result.stats.q,
        "rate_bytes": result.stats.container_bytes,
        "msssim": result.stats.msssim,
        "detail": result.stats.to_dict(),
    }
    text = json.dumps(stats, indent=2)
    if args.stats:
        with open(args.stats, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    return EXIT_OK


def cmd_decode(args) -> int:
    with open(args.bitstream, "rb") as fh:
        blob = fh.read()
    width, height, q, flags, _, _ = parse_container(blob)
    precision = "f16" if flags & FLAG_F16_WEIGHTS else "f32"
    weights = _obtain_weights(args.weights, q, args.seed, precision)
    ref = _read_frame(args.ref, width, height)
    result = decode_pframe(blob, ref, weights)
    write_bytes_atomic(args.output, write_yuv420(result.frame))
    print(f"{args.output}: {width}x{height} q={q}")
    return EXIT_OK


def cmd_allocate(args) -> int:
    names, table = load_stats(args.stats)
    plan = allocate(table, args.budget, bucket=args.bucket)
    save_plan(plan, args.output, names)
    print(
        f"{args.output}: {len(plan.choices)} frames, "
        f"{plan.total_rate_bytes} bytes, total MS-SSIM {plan.total_msssim:.6f}"
    )
    return EXIT_OK


def cmd_metrics(args) -> int:
    width, height = _parse_size(args.size)
    a = upsample_420_to_444(_read_frame(args.a, width, height))
    b = upsample_420_to_444(_read_frame(args.b, width, height))
    print(json.dumps({"psnr": psnr(a, b), "msssim": ms_ssim(a, b)}, indent=2))
    return EXIT_OK


def cmd_init_weights(args) -> int:
    if args.q == "all":
        qs = list(range(QUALITY_COUNT))
    else:
        qs = [int(args.q)]
        if not 0 <= qs[0] < QUALITY_COUNT:
            raise DomainError(f"quality index must be 0..{QUALITY_COUNT - 1}")
    os.makedirs(args.directory, exist_ok=True)
    for q in qs:
        weights = generate_weights(default_config(), quality=q, seed=args.seed,
                                   precision=args.precision)
        path = _weights_file(args.directory, q)
        save_weights(weights, path)
        print(path)
    return EXIT_OK


def cmd_report(args) -> int:
    from .report import write_report

    names, table = load_stats(args.stats)
    plan = None
    if args.plan:
        with open(args.plan, "r", encoding="utf-8") as fh:
            plan = json.load(fh)
    for path in write_report(names, table, args.output, plan):
        print(path)
    return EXIT_OK


def _build_parser() -> _Parser:
    parser = _Parser(prog="mvrcodec", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("encode", help="code a target frame against a reference")
    p.add_argument("ref", help="reference frame, raw YUV 4:2:0")
    p.add_argument("target", help="frame to code, raw YUV 4:2:0")
    p.add_argument("--size", required=True, help="frame size as WxH")
    p.add_argument("--weights", required=True, help="weight-set directory")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--q", type=int, choices=range(QUALITY_COUNT),
                       help="quality index")
    group.add_argument("--auto-budget", type=int, metavar="BYTES",
                       help="pick the best quality fitting this byte budget")
    p.add_argument("--flow", help="optional .flo file overriding motion search")
    p.add_argument("-o", "--output", required=True, help="output .mvr path")
    p.add_argument("--stats", help="write stats JSON here instead of stdout")
    p.add_argument("--seed", type=int, default=0,
                   help="seed for generated weight sets (default 0)")
    p.add_argument("--precision", choices=("f32", "f16"), default="f32",
                   help="precision of generated weight sets")
    p.add_argument("--no-metrics", action="store_true",
                   help="skip MS-SSIM/PSNR of the local reconstruction")
    p.add_argument("--jobs", type=int, default=1,
                   help="parallelism across frame pairs; one pair ignores it")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("decode", help="reconstruct a frame from a .mvr file")
    p.add_argument("bitstream", help=".mvr file")
    p.add_argument("ref", help="reference frame, raw YUV 4:2:0")
    p.add_argument("--weights", required=True, help="weight-set directory")
    p.add_argument("-o", "--output", required=True, help="output .yuv path")
    p.add_argument("--seed", type=int, default=0,
                   help="seed for generated weight sets (default 0)")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("allocate", help="budget qualities across many frames")
    p.add_argument("stats", help="stats JSON table")
    p.add_argument("--budget", type=int, required=True, help="total bytes")
    p.add_argument("--bucket", type=int, default=1024,
                   help="DP rate granularity in bytes (default 1024)")
    p.add_argument("-o", "--output", default="plan.json", help="plan JSON path")
    p.set_defaults(func=cmd_allocate)

    p = sub.add_parser("metrics", help="PSNR and MS-SSIM between two frames")
    p.add_argument("a", help="raw YUV 4:2:0 frame")
    p.add_argument("b", help="raw YUV 4:2:0 frame")
    p.add_argument("--size", required=True, help="frame size as WxH")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("init-weights", help="generate seeded weight sets")
    p.add_argument("directory", help="directory receiving q*.mvrw files")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--precision", choices=("f32", "f16"), default="f32")
    p.add_argument("--q", default="all", help="a single index or 'all'")
    p.set_defaults(func=cmd_init_weights)

    p = sub.add_parser("report", help="render a stats table to CSV and figures")
    p.add_argument("stats", help="stats JSON table")
    p.add_argument("--plan", help="optional plan JSON to chart")
    p.add_argument("-o", "--output", required=True, help="output directory")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InfeasibleBudgetError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except FormatError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_FORMAT
    except MvrError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
