"""Command line entry point: ``fisheyeaug {warp,fuse,eval,render,default-config}``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys

from .fusion import FusionConfig
from .pipeline import (
    MODEL_NAMES,
    USAGE,
    PipelineConfig,
    cmd_eval,
    cmd_fuse,
    cmd_render,
    cmd_warp,
    config_from_dict,
    default_config_yaml,
    load_config,
    parse_expected_teachers,
)


def _config(args) -> PipelineConfig:
    if args.config:
        cfg = load_config(args.config)
    else:
        cfg = config_from_dict({}, require_seed=False)
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.workers is not None:
        changes["workers"] = args.workers
    if args.models is not None:
        changes["models"] = tuple(m.strip() for m in args.models.split(",") if m.strip())
        changes["weights"] = None
    for name in ("input_dir", "label_dir"):
        if getattr(args, name, None) is not None:
            changes[name] = getattr(args, name)
    if getattr(args, "out", None) is not None:
        changes["output_dir"] = args.out
    return dataclasses.replace(cfg, **changes) if changes else cfg


def _fusion_config(args, base: FusionConfig) -> FusionConfig:
    iou = args.iou_threshold if args.iou_threshold is not None else base.iou_threshold
    conf = args.min_confidence if args.min_confidence is not None else base.min_confidence
    expected = base.expected_teachers
    if args.expected_teachers:
        pairs = dict(item.split("=", 1) for item in args.expected_teachers.split(","))
        expected = parse_expected_teachers({k.strip(): int(v) for k, v in pairs.items()})
    return FusionConfig(iou, conf, expected)


def _add_common(p, out_required=False):
    p.add_argument("--config", help="YAML pipeline config (see `default-config`)")
    p.add_argument("--seed", type=int, help="override the master seed")
    p.add_argument("--workers", type=int, help="parallel worker processes")
    p.add_argument("--models", help=f"comma-separated subset of {','.join(MODEL_NAMES)}")
    p.add_argument("--out", required=out_required, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fisheyeaug", description="Fisheye-like dataset conversion, pseudo-label fusion and evaluation.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("warp", help="convert images and labels into fisheye-like data")
    _add_common(p)
    p.add_argument("--input", dest="input_dir", help="directory of source images")
    p.add_argument("--labels", dest="label_dir", help="label directory (default: alongside images)")

    p = sub.add_parser("fuse", help="fuse teacher detection JSON files into pseudo labels")
    _add_common(p, out_required=True)
    p.add_argument("teacher_files", nargs="+")
    p.add_argument("--iou-threshold", type=float)
    p.add_argument("--min-confidence", type=float)
    p.add_argument("--expected-teachers", help="e.g. face=3,plate=1")

    p = sub.add_parser("eval", help="AP50/AR50 of prediction labels against ground truth")
    _add_common(p)
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)

    p = sub.add_parser("render", help="draw label boxes onto images")
    _add_common(p, out_required=True)
    p.add_argument("--images", required=True)
    p.add_argument("--labels", required=True)

    sub.add_parser("default-config", help="print the default YAML config")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")

    if args.command == "default-config":
        sys.stdout.write(default_config_yaml())
        return 0
    try:
        cfg = _config(args)
        if args.command == "warp":
            manifest, code = cmd_warp(cfg)
            s = manifest["summary"]
            print(f"warped {s['ok']}/{s['images']} images ({s['errors']} errors); "
                  f"boxes in/out/dropped {s['boxes_in']}/{s['boxes_out']}/{s['boxes_dropped']}; "
                  f"models {s['model_counts']}")
        elif args.command == "fuse":
            summary, code = cmd_fuse(args.teacher_files, _fusion_config(args, cfg.fusion), args.out)
            print(json.dumps(summary))
        elif args.command == "eval":
            report, code = cmd_eval(args.pred, args.gt, args.out)
            print(report.format_table())
            if report.missing_predictions:
                print(f"{len(report.missing_predictions)} image(s) had no prediction file")
        else:
            summary, code = cmd_render(args.images, args.labels, args.out, cfg.extensions)
            print(f"rendered {summary['rendered']} images; {len(summary['missing_labels'])} without labels; "
                  f"{len(summary['errors'])} errors")
        return code
    except (ValueError, OSError) as exc:  # ConfigError, TeacherFileError, LabelError included
        print(f"fisheyeaug: error: {exc}", file=sys.stderr)
        return USAGE


if __name__ == "__main__":
    sys.exit(main())
