"""``wsd`` command line: simulate, denoise, reconstruct, benchmark, svd-report.

Exit codes are 0 on success, 1 for usage or configuration errors, and 2 when a
computation or file operation fails.
"""
import argparse
import sys

import numpy as np

from . import formats, pipeline
from .config import ConfigFileError, load_config
from .operators import FactorizationError, PrecisionError
from .solver import log_visualize

EXIT_OK, EXIT_USAGE, EXIT_FAILURE = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _global_flags(parser, suppress):
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", metavar="PATH", default=default,
                        help="flat key = value run configuration")
    parser.add_argument("--seed", type=int, metavar="N", default=default)
    parser.add_argument("--workers", type=int, metavar="N", default=default,
                        help="worker processes (0 = all cores)")
    parser.add_argument("--digits", type=int, metavar="N", default=default,
                        help="significant decimal digits for the factorization")


def _floats(text):
    return [float(v) for v in text.replace(",", " ").split()]


def _ints(text):
    return [int(v) for v in text.replace(",", " ").split()]


def build_parser():
    parser = _Parser(prog="wsd", description="Spectral-clipping denoising and sparse "
                     "reconstruction of frame stacks.")
    _global_flags(parser, suppress=False)
    common = _Parser(add_help=False)
    _global_flags(common, suppress=True)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", parents=[common], help="simulate raw and noiseless stacks")
    p.add_argument("--K", type=int, required=True, help="molecules per frame")
    p.add_argument("--frames", type=int, default=20)
    p.add_argument("--out", required=True, metavar="PREFIX",
                   help="writes PREFIX_raw.wsds, PREFIX_noiseless.wsds, PREFIX_scene.csv")

    p = sub.add_parser("denoise", parents=[common], help="spectral-clipping denoise a stack")
    p.add_argument("input", help="input .wsds stack")
    p.add_argument("output", help="output .wsds stack (f64)")
    p.add_argument("--bundle", metavar="PATH", help="operator cache, built when missing")
    p.add_argument("--report", metavar="PATH", help="per-frame report CSV")
    p.add_argument("--clamp", action="store_true", help="clamp negatives to 0 on export")

    p = sub.add_parser("reconstruct", parents=[common], help="sparse reconstruction and merge")
    p.add_argument("input", help="input .wsds stack")
    p.add_argument("output", help="merged image as a one-frame .wsds stack")
    p.add_argument("--metrics", metavar="PATH", help="per-frame solver metrics CSV")
    p.add_argument("--log-image", metavar="PATH", help="also write log(1 + image)")

    p = sub.add_parser("benchmark", parents=[common], help="SNR benchmark table")
    p.add_argument("output", help="benchmark CSV")
    p.add_argument("--k-list", type=_ints, metavar="K,...")
    p.add_argument("--reps", type=int)
    p.add_argument("--variances", type=_floats, metavar="V,...",
                   help="Gaussian noise variances, one table block each (e.g. 0,0.01)")
    p.add_argument("--bundle", metavar="PATH")

    p = sub.add_parser("svd-report", parents=[common], help="singular values of the operator")
    p.add_argument("output", help="spectrum CSV")
    p.add_argument("--bundle", metavar="PATH")
    return parser


def _config(args):
    cfg = load_config(getattr(args, "config", None))
    return cfg.override(seed=getattr(args, "seed", None), workers=getattr(args, "workers", None),
                        digits=getattr(args, "digits", None))


def cmd_simulate(args, cfg):
    if args.frames < 1:
        raise UsageError("--frames must be >= 1")
    sim = pipeline.simulate_stack(cfg, args.K, args.frames)
    for path in pipeline.write_simulation(args.out, sim).values():
        print(path)


def cmd_denoise(args, cfg):
    stack = formats.read_stack(args.input)
    maps = pipeline.load_or_build_maps(cfg, args.bundle)
    out, reports = pipeline.denoise_stack(stack.frames.astype(float), maps, cfg)
    if args.clamp:
        out = np.maximum(out, 0.0)
    formats.write_stack(args.output, out, "f64", clamped=args.clamp)
    if args.report:
        formats.write_csv(args.report, pipeline.REPORT_HEADER, pipeline.report_rows(reports))
    print(f"denoised {len(out)} frames -> {args.output}")


def cmd_reconstruct(args, cfg):
    stack = formats.read_stack(args.input)
    rec = pipeline.reconstruct_stack(stack.frames.astype(float), cfg)
    n = len(rec.solutions)
    formats.write_stack(args.output, rec.image, "f64")
    if args.log_image:
        formats.write_stack(args.log_image, log_visualize(rec.image), "f64")
    if args.metrics:
        formats.write_csv(args.metrics, pipeline.METRICS_HEADER, pipeline.metrics_rows(rec.solutions))
    print(f"reconstructed {n - rec.skipped_count}/{n} frames -> {args.output}")
    if rec.skipped_count == n:
        print(f"all {n} frames failed to reach an optimal solution", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK


def cmd_benchmark(args, cfg):
    maps = pipeline.load_or_build_maps(cfg, args.bundle)
    if args.reps is not None and args.reps < 1:
        raise UsageError("--reps must be >= 1")
    table = pipeline.benchmark(cfg, maps, args.k_list, args.reps, args.variances)
    formats.write_benchmark(args.output, table)
    print(f"{len(table.rows)} rows -> {args.output}")


def cmd_svd_report(args, cfg):
    maps = pipeline.load_or_build_maps(cfg, args.bundle)
    s = maps.singular_values
    formats.write_spectrum(args.output, s)
    print(f"M = {len(s)}  max = {s.max():.6g}  min = {s.min():.6g}  ratio = {s.max() / s.min():.6g}")


COMMANDS = {"simulate": cmd_simulate, "denoise": cmd_denoise, "reconstruct": cmd_reconstruct,
            "benchmark": cmd_benchmark, "svd-report": cmd_svd_report}


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        cfg = _config(args)
        return COMMANDS[args.command](args, cfg) or EXIT_OK
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except ConfigFileError as exc:
        print(f"wsd: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (PrecisionError, FactorizationError) as exc:
        # message passes through unchanged
        print(f"wsd: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except (OSError, ValueError, ArithmeticError, pipeline.PipelineError) as exc:
        print(f"wsd: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
