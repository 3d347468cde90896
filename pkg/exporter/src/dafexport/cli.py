"""dafexport command line: ``export`` a dataset, ``overlay`` the results."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .export import ExportConfig, export_dataset
from .overlay import render_overlays


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dafexport",
        description="Extract backbone features from image folders into DAF1 files")
    sub = parser.add_subparsers(dest="command", required=True)

    p_exp = sub.add_parser("export", help="folder-per-class dataset -> features + manifest")
    p_exp.add_argument("--dataset", required=True, help="root with one folder per class")
    p_exp.add_argument("--out", required=True, help="output root for feats/ and manifest.txt")
    p_exp.add_argument("--backbone", default="conv64",
                       choices=["conv64", "resnet12", "vgg16"])
    p_exp.add_argument("--tap", default="block4",
                       help="module name to capture (blockN or a named_modules path)")
    p_exp.add_argument("--image-size", type=int, default=84)
    p_exp.add_argument("--dtype", default="f32", choices=["f32", "f64"])
    p_exp.add_argument("--seed", type=int, default=0)
    p_exp.add_argument("--weights-path", default=None,
                       help="state-dict file; default is seeded random init")
    p_exp.add_argument("--bboxes", default=None,
                       help="box sidecar (default: <dataset>/bboxes.txt if present)")

    p_ovl = sub.add_parser("overlay", help="blend activation maps over source images")
    p_ovl.add_argument("--manifest", required=True)
    p_ovl.add_argument("--cams", required=True, help="directory of <index>.daf dumps")
    p_ovl.add_argument("--out", required=True)
    p_ovl.add_argument("--blend", type=float, default=0.5)
    p_ovl.add_argument("--box-threshold", type=float, default=0.2)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(name)s: %(message)s")
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "export":
            config = ExportConfig(
                dataset_root=args.dataset, out_root=args.out,
                backbone=args.backbone, tap=args.tap,
                image_size=args.image_size, dtype=args.dtype, seed=args.seed,
                weights_path=args.weights_path)
            manifest, written = export_dataset(
                config, bbox_file=Path(args.bboxes) if args.bboxes else None)
            sys.stdout.write(f"manifest: {manifest}\nfiles_written: {written}\n")
        else:
            files = render_overlays(args.manifest, args.cams, args.out,
                                    blend=args.blend,
                                    box_threshold=args.box_threshold)
            sys.stdout.write(f"overlays_written: {len(files)}\n")
        return 0
    except (ValueError, OSError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
