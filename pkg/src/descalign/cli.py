"""Command-line interface.

Subcommands: ``eval`` (episodic accuracy), ``localize`` (box metrics over
a manifest with ground-truth boxes), ``synth`` (synthetic dataset
generator), ``gradcheck`` (analytic-vs-numeric gradient self-check) and
``inspect`` (feature-file header dump).  Exit codes: 0 success, 1 domain
or format error, 2 usage error.

Deterministic report text goes to stdout; timing goes to stderr so that
fixed-seed output is byte-identical across runs and thread counts.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import backend
from .alignment import (QueryRepresentation, SupportPool,
                        finite_difference_gradients, loss_gradient_wrt_query,
                        nn_margin)
from .daf import read_feature_file, read_feature_header, write_feature_file
from .episodes import (EpisodeSpec, PipelineConfig, evaluate, format_report,
                       synthetic_dataset, write_synthetic)
from .errors import DomainError
from .core import DescriptorField
from .localization import (WsolRecord, cam_to_bbox, iou, load_localizer_weights,
                           localize_field, random_localizer_weights,
                           save_localizer_weights, wsol_metrics)
from .manifest import load_manifest


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="descalign",
        description="Few-shot classification and localization over descriptor fields")
    sub = parser.add_subparsers(dest="command", required=True)

    p_eval = sub.add_parser("eval", help="episodic few-shot evaluation")
    p_eval.add_argument("manifest")
    p_eval.add_argument("--ways", type=int, default=5)
    p_eval.add_argument("--shots", type=int, default=1)
    p_eval.add_argument("--queries", type=int, default=None,
                        help="queries per class (default: 15 for 1-shot, 10 otherwise)")
    p_eval.add_argument("--episodes", type=int, default=600)
    p_eval.add_argument("--seed", type=int, default=0)
    p_eval.add_argument("--select-threshold", type=float, default=0.5)
    p_eval.add_argument("--no-sac", action="store_true",
                        help="disable activation-map descriptor selection")

    p_loc = sub.add_parser("localize", help="box extraction and localization metrics")
    p_loc.add_argument("manifest")
    p_loc.add_argument("weights")
    p_loc.add_argument("--erase-threshold", type=float, default=0.5)
    p_loc.add_argument("--box-threshold", type=float, default=0.2)
    p_loc.add_argument("--cam-dir", default=None,
                       help="dump each record's fused activation map here (DAF1, d=1)")

    p_synth = sub.add_parser("synth", help="generate a synthetic dataset")
    p_synth.add_argument("--classes", type=int, default=5)
    p_synth.add_argument("--per-class", type=int, default=20)
    p_synth.add_argument("--channels", type=int, default=8)
    p_synth.add_argument("--height", type=int, default=6)
    p_synth.add_argument("--width", type=int, default=6)
    p_synth.add_argument("--separation", type=float, default=4.0)
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--out", default="synth_data")
    p_synth.add_argument("--weights-out", default=None,
                         help="also write seeded localizer weights sized for this dataset")

    p_grad = sub.add_parser("gradcheck", help="compare analytic and numeric gradients")
    p_grad.add_argument("--instances", type=int, default=100)
    p_grad.add_argument("--step", type=float, default=1e-5)

    p_inspect = sub.add_parser("inspect", help="dump a feature-file header")
    p_inspect.add_argument("path")

    return parser


def _cmd_eval(args) -> int:
    queries = args.queries if args.queries is not None else (15 if args.shots == 1 else 10)
    manifest = load_manifest(args.manifest)
    spec = EpisodeSpec(ways=args.ways, shots=args.shots, n_query=queries,
                       seed=args.seed)
    config = PipelineConfig(use_selection=not args.no_sac,
                            select_threshold=args.select_threshold)
    report = evaluate(manifest, spec, args.episodes, config)
    meta = {
        "command": "eval",
        "manifest": args.manifest,
        "ways": args.ways,
        "shots": args.shots,
        "queries_per_class": queries,
        "seed": args.seed,
        "selection": "off" if args.no_sac else "on",
        "select_threshold": f"{args.select_threshold:.6f}",
        "backend": backend.active_backend(),
    }
    sys.stdout.write(format_report(report, meta))
    sys.stderr.write(f"wall_seconds: {report.wall_seconds:.3f}\n")
    return 0


def _cmd_localize(args) -> int:
    manifest = load_manifest(args.manifest)
    weights = load_localizer_weights(args.weights)
    if weights.num_classes != len(manifest.classes):
        raise DomainError(
            f"weights classify {weights.num_classes} classes but the manifest "
            f"names {len(manifest.classes)}")
    cam_dir = Path(args.cam_dir) if args.cam_dir else None
    if cam_dir is not None:
        cam_dir.mkdir(parents=True, exist_ok=True)
    class_index = {name: i for i, name in enumerate(manifest.classes)}
    records = []
    rows = []
    for i, rec in enumerate(manifest.records):
        if rec.bbox is None:
            raise DomainError(f"record {i} ({rec.feature_path}) has no ground-truth box")
        field = read_feature_file(manifest.resolve(rec.feature_path))
        result = localize_field(field, weights, args.erase_threshold)
        true_idx = class_index[rec.class_name]
        fused = result.fused_cam(true_idx)  # GT-known protocol: true-class map
        box = cam_to_bbox(fused, args.box_threshold)
        pred_name = manifest.classes[result.predicted_class]
        records.append(WsolRecord(predicted_box=box, true_box=rec.bbox,
                                  predicted_class=pred_name, true_class=rec.class_name))
        rows.append((i, rec.class_name, pred_name, iou(box, rec.bbox), box, rec.bbox))
        if cam_dir is not None:
            write_feature_file(cam_dir / f"{i:06d}.daf",
                               DescriptorField(fused.values[None, :, :]))
    metrics = wsol_metrics(records)
    out = [
        "command: localize",
        f"manifest: {args.manifest}",
        f"weights: {args.weights}",
        f"erase_threshold: {args.erase_threshold:.6f}",
        f"box_threshold: {args.box_threshold:.6f}",
        f"backend: {backend.active_backend()}",
        f"records: {len(records)}",
        f"top1_loc: {metrics['top1_loc']:.6f}",
        f"top1_clas: {metrics['top1_clas']:.6f}",
        f"gt_known_loc: {metrics['gt_known_loc']:.6f}",
        "# record\ttrue_class\tpred_class\tiou\tpred_box\tgt_box",
    ]
    for i, true_name, pred_name, iou_val, box, gt in rows:
        out.append(f"{i}\t{true_name}\t{pred_name}\t{iou_val:.6f}\t"
                   f"{box.x_min} {box.y_min} {box.x_max} {box.y_max}\t"
                   f"{gt.x_min} {gt.y_min} {gt.x_max} {gt.y_max}")
    sys.stdout.write("\n".join(out) + "\n")
    return 0


def _cmd_synth(args) -> int:
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(args.seed)))
    manifest, fields = synthetic_dataset(
        n_classes=args.classes, records_per_class=args.per_class,
        d=args.channels, h=args.height, w=args.width,
        class_separation=args.separation, rng=rng)
    manifest_path = write_synthetic(manifest, fields, args.out)
    out = [
        "command: synth",
        f"classes: {args.classes}",
        f"per_class: {args.per_class}",
        f"channels: {args.channels}",
        f"height: {args.height}",
        f"width: {args.width}",
        f"separation: {args.separation:.6f}",
        f"seed: {args.seed}",
        f"manifest: {manifest_path}",
        f"files_written: {len(manifest.records)}",
    ]
    if args.weights_out:
        wrng = np.random.Generator(np.random.PCG64(
            np.random.SeedSequence((args.seed, 0xDAF))))
        weights = random_localizer_weights(args.channels, args.classes, wrng)
        save_localizer_weights(args.weights_out, weights)
        out.append(f"weights: {args.weights_out}")
    sys.stdout.write("\n".join(out) + "\n")
    return 0


def _gradcheck_instance(rng: np.random.Generator):
    """One random 3-way 2-shot task with small descriptor sets."""
    d = int(rng.integers(3, 7))

    def rep(n: int) -> QueryRepresentation:
        return QueryRepresentation(rng.standard_normal((n, d)),
                                   tuple((0, i) for i in range(n)))

    pools = [SupportPool.from_representations(
        class_id, [rep(int(rng.integers(2, 9))) for _ in range(2)])
        for class_id in range(3)]
    queries = [rep(int(rng.integers(1, 9))) for _ in range(2)]
    labels = [int(rng.integers(0, 3)) for _ in range(2)]
    return queries, labels, pools


def _cmd_gradcheck(args) -> int:
    if args.instances < 1:
        raise DomainError("--instances must be >= 1")
    if args.step <= 0:
        raise DomainError("--step must be positive")
    max_rel = 0.0
    accepted = 0
    attempt = 0
    while accepted < args.instances:
        rng = np.random.Generator(np.random.PCG64(
            np.random.SeedSequence((0, attempt))))
        attempt += 1
        queries, labels, pools = _gradcheck_instance(rng)
        # skip near-ties: a finite-difference step there can flip an assignment
        if min(nn_margin(q, pools) for q in queries) < 1e-3:
            continue
        accepted += 1
        analytic = loss_gradient_wrt_query(queries, labels, pools)
        numeric = finite_difference_gradients(queries, labels, pools, step=args.step)
        for a, f in zip(analytic, numeric):
            scale = max(float(np.max(np.abs(f))), 1e-8)
            max_rel = max(max_rel, float(np.max(np.abs(a - f))) / scale)
    sys.stdout.write("command: gradcheck\n"
                     f"instances: {args.instances}\n"
                     f"step: {args.step:g}\n"
                     f"max_rel_error: {max_rel:.6e}\n")
    return 0 if max_rel < 1e-4 else 1


def _cmd_inspect(args) -> int:
    header = read_feature_header(args.path)
    field = read_feature_file(args.path)
    sys.stdout.write(
        f"path: {args.path}\n"
        f"magic: {header['magic']}\n"
        f"version: {header['version']}\n"
        f"dtype: {header['dtype']}\n"
        f"channels: {header['d']}\n"
        f"height: {header['h']}\n"
        f"width: {header['w']}\n"
        f"values: {header['d'] * header['h'] * header['w']}\n"
        f"min: {np.min(field.values):.9g}\n"
        f"max: {np.max(field.values):.9g}\n")
    return 0


_COMMANDS = {
    "eval": _cmd_eval,
    "localize": _cmd_localize,
    "synth": _cmd_synth,
    "gradcheck": _cmd_gradcheck,
    "inspect": _cmd_inspect,
}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ValueError, OSError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
