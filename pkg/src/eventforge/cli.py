"""eventforge command line: generate, distill, eval, encode, validate."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import factory, io
from .config import ConfigError, load_distill_config, load_factory_config
from .distill import DEFAULT_CLIP
from .metrics import format_report
from .trajectory import TrajectoryError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INVARIANT = 0, 1, 2, 3

logger = logging.getLogger("eventforge")


class UsageError(Exception):
    """Flag combination argparse cannot express (exit code 1)."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _set_pairs(args) -> dict[str, str]:
    out = {}
    for item in args.set or []:
        if "=" not in item:
            raise UsageError(f"--set expects section.key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _overrides(args) -> dict[str, str]:
    out = _set_pairs(args)
    for flag, key in (("seed", "simulation.seed"), ("out", "output.dir"), ("samples", "simulation.samples"),
                      ("dtau", "simulation.dtau")):
        value = getattr(args, flag, None)
        if value is not None:
            out[key] = str(Path(value).resolve()) if flag == "out" else str(value)
    return out


def cmd_generate(args) -> int:
    cfg = load_factory_config(args.config, _overrides(args))
    out = factory.generate_dataset(cfg, workers=args.workers)
    problems = factory.validate_dataset(out)
    for p in problems:
        logger.error("validation: %s", p)
    print(f"wrote {cfg.samples * len(cfg.baselines)} samples to {out}")
    return EXIT_INVARIANT if problems else EXIT_OK


def cmd_validate(args) -> int:
    problems = factory.validate_dataset(args.dataset)
    for p in problems:
        print(p)
    if not problems:
        print("ok")
    return EXIT_INVARIANT if problems else EXIT_OK


def cmd_distill(args) -> int:
    dcfg = load_distill_config(args.config, _set_pairs(args))
    clip = tuple(args.clip) if args.clip else dcfg.clip
    status = factory.distill_files(args.inputs, dcfg.rigs, clip, args.out)
    for s in status:
        print(f"{'OK' if s.ok else 'FAIL'} {s.path}: {s.message}")
    return EXIT_OK if all(s.ok for s in status) else EXIT_DATA


def cmd_eval(args) -> int:
    if args.mode == "disparity":
        rows, agg = factory.evaluate_disparity(args.pred, args.gt)
        columns = factory.EVAL_COLUMNS
    else:
        rows, agg = factory.evaluate_depth(args.pred, args.gt, args.pred_images or [], args.gt_images or [])
        columns = ("pair", "pred", "gt", "mae", "delta125", "psnr", "ssim")
    print(format_report(agg))
    if rows:
        print(factory.metrics_jsonl(rows))
    if args.csv:
        Path(args.csv).write_text(factory.metrics_csv(rows, agg, columns))
    return EXIT_OK


def cmd_encode(args) -> int:
    if args.repr == "tencode" and not args.count:
        raise UsageError("--count is required for --repr tencode")
    if args.repr == "voxel" and not args.bins:
        raise UsageError("--bins is required for --repr voxel")
    frame, paths = factory.encode_file(args.events, args.out, args.repr, args.count or 0, args.bins or 0, args.format)
    print(f"encoded {frame.count} events -> {', '.join(map(str, paths))}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="eventforge", description=__doc__)
    p.add_argument("--seed", type=int, help="override [simulation] seed")
    p.add_argument("--workers", type=int, default=1)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="render scenes and simulate labeled stereo event samples")
    g.add_argument("--config", required=True)
    g.add_argument("--out", help="override [output] dir")
    g.add_argument("--samples", type=int, help="override [simulation] samples")
    g.add_argument("--dtau", type=float, help="override [simulation] dtau")
    g.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    g.add_argument("--workers", type=int, default=argparse.SUPPRESS)
    g.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE")
    g.set_defaults(func=cmd_generate)

    d = sub.add_parser("distill", help="transfer RGB disparity maps onto the event camera")
    d.add_argument("--config", required=True, help="calibration with [rgb], [event], [extrinsic]")
    d.add_argument("--out", required=True)
    d.add_argument("--clip", type=float, nargs=2, metavar=("ZMIN", "ZMAX"),
                   help=f"depth clip in meters (default from config, else {DEFAULT_CLIP})")
    d.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE")
    d.add_argument("inputs", nargs="*")
    d.set_defaults(func=cmd_distill)

    e = sub.add_parser("eval", help="disparity or depth/image metrics over paired files")
    e.add_argument("--pred", nargs="*", default=[])
    e.add_argument("--gt", nargs="*", default=[])
    e.add_argument("--mode", choices=("disparity", "depth"), default="disparity")
    e.add_argument("--pred-images", nargs="*")
    e.add_argument("--gt-images", nargs="*")
    e.add_argument("--csv", help="write per-pair and aggregate rows here")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("encode", help="encode an EVT1 stream into a stacked tensor")
    c.add_argument("events")
    c.add_argument("--out", required=True)
    c.add_argument("--repr", choices=("tencode", "voxel"), default="tencode")
    c.add_argument("--count", type=int, help="events sampled backward in time (tencode)")
    c.add_argument("--bins", type=int, help="temporal bins (voxel)")
    c.add_argument("--format", choices=("stk", "pfm"), default="stk")
    c.set_defaults(func=cmd_encode)

    v = sub.add_parser("validate", help="check a generated dataset directory")
    v.add_argument("dataset")
    v.set_defaults(func=cmd_validate)
    return p


def _setup_logging():
    level = os.environ.get("EVENTFORGE_LOG", "warn").upper()
    level = {"WARN": "WARNING"}.get(level, level)
    if level not in ("ERROR", "WARNING", "INFO", "DEBUG"):
        level = "WARNING"
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"eventforge: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, TrajectoryError, io.FormatError, factory.DataError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except factory.InvariantError as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
