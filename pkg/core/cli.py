"""
Command-line driver: ``python main.py <subcommand> [flags]``.

Exit codes: 0 success, 2 invalid input or usage, 1 internal failure.
"""

import argparse
import logging
import sys
from typing import List, Optional

from config.settings import Thresholds, load_settings
from config.state import load_preset, validate_preset
from core import pipeline
from core.errors import InputError, InvalidPreset

logger = logging.getLogger(__name__)

THRESHOLD_FLAGS = {
    "quantile": ("--quantile", float, "confidence quantile kept as reliable"),
    "grad_threshold": ("--grad-threshold", float, "relative depth-gradient edge threshold"),
    "tau_d": ("--tau-d", float, "suppression depth margin"),
    "tau_g": ("--tau-g", float, "fusion geometric threshold"),
    "tau_c": ("--tau-c", float, "fusion color threshold"),
    "tau_num": ("--tau-num", int, "consistent views needed for a fused point"),
    "lam": ("--lam", float, "SSIM weight of the supervision loss"),
}


def _refs(text: str) -> List[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated view indices, got '{text}'")


def _add_common(parser: argparse.ArgumentParser, defaults: Thresholds, *keys: str):
    for key in keys:
        flag, kind, text = THRESHOLD_FLAGS[key]
        parser.add_argument(flag, dest=key, type=kind, default=None,
                            help=f"{text} (default {getattr(defaults, key)})")


def build_parser() -> argparse.ArgumentParser:
    settings = load_settings()
    defaults = Thresholds()

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=settings.threads,
                        help=f"worker threads (default {settings.threads}, env CLOSEUP_THREADS)")
    common.add_argument("--log-level", default=settings.log_level,
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"], type=str.upper)
    common.add_argument("--preset", default=None, help="JSON file of threshold overrides")

    parser = argparse.ArgumentParser(prog="main.py", description="Close-up view conditioning toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="render a synthetic dataset")
    p.add_argument("--scene", default=None, help="scene JSON (built-in two-plane scene when omitted)")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=_synth)

    p = sub.add_parser("warp", parents=[common], help="hierarchical warp of the references into targets")
    p.add_argument("--manifest", required=True)
    p.add_argument("--targets", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--refs", type=_refs, default=None, help="reference view indices (default first,last)")
    _add_common(p, defaults, "quantile", "grad_threshold")
    p.set_defaults(handler=_warp)

    p = sub.add_parser("suppress", parents=[common], help="occlusion-aware suppression of warp outputs")
    p.add_argument("--warp-dir", required=True)
    p.add_argument("--targets", required=True)
    p.add_argument("--out", required=True)
    _add_common(p, defaults, "tau_d")
    p.set_defaults(handler=_suppress)

    p = sub.add_parser("fuse", parents=[common], help="consistency-checked global point cloud")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dedup", action="store_true", help="merge points sharing a tau_g voxel")
    _add_common(p, defaults, "tau_g", "tau_c", "tau_num")
    p.set_defaults(handler=_fuse)

    p = sub.add_parser("project", parents=[common], help="project the fused cloud into targets")
    p.add_argument("--cloud", required=True)
    p.add_argument("--targets", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=_project)

    p = sub.add_parser("confidence", parents=[common], help="pixel and image confidence weights")
    p.add_argument("--manifest", required=True)
    p.add_argument("--counts", required=True, help="directory of <id>_count.pfm maps")
    p.add_argument("--targets", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--refs", type=_refs, default=None)
    p.add_argument("--hard-baseline", type=float, default=None, help="tag baselines above this as hard")
    _add_common(p, defaults, "tau_num")
    p.set_defaults(handler=_confidence)

    p = sub.add_parser("closeup-cams", parents=[common], help="close-up cameras from reference views")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="camera list file to write")
    p.add_argument("--mode", choices=["zoom", "dolly"], default="zoom")
    p.add_argument("--factor", type=float, default=None, help="zoom 4-5 or dolly 0.5-0.6 (default: range start)")
    p.add_argument("--frames", type=int, default=1, help="interpolate a sequence of N cameras")
    p.add_argument("--refs", type=_refs, default=None)
    p.set_defaults(handler=_closeup_cams)

    p = sub.add_parser("metrics", parents=[common], help="PSNR / SSIM report against ground truth")
    p.add_argument("--manifest", required=True, help="ground-truth dataset")
    p.add_argument("--renders", required=True, help="directory of <id>.png renders")
    p.add_argument("--out", required=True)
    p.add_argument("--confidence-dir", default=None, help="add the confidence-weighted loss")
    p.add_argument("--hard-baseline", type=float, default=None)
    _add_common(p, defaults, "lam")
    p.set_defaults(handler=_metrics)

    p = sub.add_parser("pipeline", parents=[common], help="warp, suppress, fuse, project, confidence")
    p.add_argument("--manifest", required=True)
    p.add_argument("--targets", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--refs", type=_refs, default=None)
    p.add_argument("--no-suppress", action="store_true", help="skip occlusion suppression")
    p.add_argument("--dedup", action="store_true")
    p.add_argument("--hard-baseline", type=float, default=None)
    _add_common(p, defaults, *THRESHOLD_FLAGS)
    p.set_defaults(handler=_pipeline)
    return parser


def resolve_thresholds(args) -> Thresholds:
    """Defaults, then ``--preset``, then explicit flags."""
    thresholds = load_preset(args.preset) if args.preset else Thresholds()
    overrides = {key: getattr(args, key) for key in THRESHOLD_FLAGS if getattr(args, key, None) is not None}
    try:
        validate_preset(overrides)
    except InvalidPreset as e:
        raise InputError(f"{THRESHOLD_FLAGS[e.key][0]}: {e.detail}")
    return thresholds.replace(**overrides)


def _synth(args, thresholds):
    return pipeline.run_synth(args.out, args.scene, thresholds, args.threads)


def _warp(args, thresholds):
    return pipeline.run_warp(args.manifest, args.targets, args.out, thresholds, args.refs, args.threads)


def _suppress(args, thresholds):
    return pipeline.run_suppress(args.warp_dir, args.targets, args.out, thresholds.tau_d, args.threads)


def _fuse(args, thresholds):
    return pipeline.run_fuse(args.manifest, args.out, thresholds, args.threads, args.dedup)


def _project(args, thresholds):
    return pipeline.run_project(args.cloud, args.targets, args.out, args.threads)


def _confidence(args, thresholds):
    return pipeline.run_confidence(args.manifest, args.counts, args.targets, args.out, thresholds, args.refs,
                                   args.hard_baseline, args.threads)


def _closeup_cams(args, thresholds):
    return pipeline.run_closeup_cams(args.manifest, args.out, thresholds, args.mode, args.factor, args.refs,
                                     args.frames)


def _metrics(args, thresholds):
    return pipeline.run_metrics(args.manifest, args.renders, args.out, thresholds, args.confidence_dir,
                                args.hard_baseline)


def _pipeline(args, thresholds):
    return pipeline.run_pipeline(args.manifest, args.targets, args.out, thresholds, args.refs, args.threads,
                                 not args.no_suppress, args.dedup, args.hard_baseline)


def configure_logging(level: str):
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.WARNING),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def run(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse exits 2 on usage errors, 0 on --help
        return e.code if isinstance(e.code, int) else 2

    configure_logging(args.log_level)
    if args.threads < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return 2

    try:
        result = args.handler(args, resolve_thresholds(args))
    except InputError as e:
        logger.error("%s failed: %s", args.command, e)
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:
        logger.exception("%s failed", args.command)
        print(f"error: {e}", file=sys.stderr)
        return 1

    print(result.summary)
    return 0
