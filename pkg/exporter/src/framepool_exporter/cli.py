"""Command-line entry point for the exporter."""

import argparse
import sys

from .export import ExportJob, export


def build_parser():
    parser = argparse.ArgumentParser(
        prog="framepool-export",
        description="Export caption and per-frame video embeddings to XPE1.")
    parser.add_argument("--dataset-dir", required=True,
                        help="directory containing the video files")
    parser.add_argument("--captions", required=True,
                        help="caption file: <video filename>\\t<caption> per line")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--frames", type=int, default=12,
                        help="frames sampled per video (default 12)")
    parser.add_argument("--backbone", default="seeded-projection",
                        help="backbone id: seeded-projection | clip-vit-base-patch32")
    return parser


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    job = ExportJob(dataset_dir=args.dataset_dir, caption_file=args.captions,
                    output_dir=args.out, frames_per_video=args.frames,
                    backbone=args.backbone)
    try:
        result = export(job)
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename}", file=sys.stderr)
        return 2
    except (ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(result.summary())
    for name in result.skipped:
        print(f"skipped: {name}", file=sys.stderr)
    return 0


def entrypoint():
    sys.exit(main(sys.argv[1:]))
