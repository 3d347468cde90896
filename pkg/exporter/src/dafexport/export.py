"""Dataset export: folder-per-class images -> DAF1 features + manifest.

Input layout is one directory per class under the dataset root.  Each
readable image is resized, pushed through the configured backbone tap and
written as one DAF1 file under ``<out>/feats/<class>/``; a manifest in the
engine's grammar lists every record.  Ground-truth boxes, if a
``bboxes.txt`` sidecar provides them (``<class>/<file> x0 y0 x1 y1`` in
original-image pixels), are converted to feature-grid cells, which is the
coordinate system the engine evaluates IoU in.

Features are written exactly as the backbone produced them; no
normalization or other post-processing happens here.
"""

from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image, UnidentifiedImageError

from .backbones import BACKBONES, FeatureTap, build_backbone
from .daf import write_daf

log = logging.getLogger("dafexport")

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".gif", ".webp"}


@dataclass(frozen=True)
class ExportConfig:
    dataset_root: Path
    out_root: Path
    backbone: str = "conv64"
    tap: str = "block4"
    image_size: int = 84
    dtype: str = "f32"
    seed: int = 0
    weights_path: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "dataset_root", Path(self.dataset_root))
        object.__setattr__(self, "out_root", Path(self.out_root))
        if self.image_size < 16:
            raise ValueError(f"image size must be >= 16, got {self.image_size}")
        if self.backbone not in BACKBONES:
            raise ValueError(f"unknown backbone {self.backbone!r}; "
                             f"expected one of {BACKBONES}")
        if self.dtype not in ("f32", "f64"):
            raise ValueError(f"dtype must be f32 or f64, got {self.dtype!r}")


def _scan_classes(root: Path) -> dict[str, list[Path]]:
    if not root.is_dir():
        raise ValueError(f"dataset root {root} is not a directory")
    classes = {}
    for entry in sorted(root.iterdir()):
        if not entry.is_dir():
            continue
        images = sorted(p for p in entry.iterdir()
                        if p.suffix.lower() in IMAGE_SUFFIXES)
        if not images:
            raise ValueError(f"class folder {entry.name!r} contains no images")
        classes[entry.name] = images
    if not classes:
        raise ValueError(f"no class folders under {root}")
    return classes


def _load_image(path: Path, size: int) -> tuple[torch.Tensor, tuple[int, int]]:
    with Image.open(path) as img:
        original = img.size  # (width, height)
        rgb = img.convert("RGB").resize((size, size), Image.BILINEAR)
    arr = np.asarray(rgb, dtype=np.float32) / 255.0
    return torch.from_numpy(arr).permute(2, 0, 1).unsqueeze(0), original


def load_bbox_sidecar(path: Path) -> dict[str, tuple[int, int, int, int]]:
    """Parse ``<class>/<file> x0 y0 x1 y1`` lines (original-image pixels)."""
    boxes = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 5:
            raise ValueError(f"{path}:{lineno}: expected '<image> x0 y0 x1 y1'")
        try:
            boxes[parts[0]] = tuple(int(t) for t in parts[1:])
        except ValueError:
            raise ValueError(f"{path}:{lineno}: box coordinates must be integers") from None
    return boxes


def pixel_box_to_grid(box: tuple[int, int, int, int], original: tuple[int, int],
                      grid: tuple[int, int]) -> tuple[int, int, int, int]:
    """Map a pixel box on the original image to feature-grid cells.

    Uses floor/ceil so the grid box covers every touched cell, clamped to
    the grid and widened to at least one cell per axis.
    """
    x0, y0, x1, y1 = box
    width, height = original
    gh, gw = grid

    def span(lo, hi, extent, cells):
        a = max(0, min(cells - 1, math.floor(lo / extent * cells)))
        b = max(0, min(cells, math.ceil(hi / extent * cells)))
        if b <= a:
            b = a + 1
        return a, b

    gx0, gx1 = span(x0, x1, width, gw)
    gy0, gy1 = span(y0, y1, height, gh)
    return gx0, gy0, gx1, gy1


def export_dataset(config: ExportConfig,
                   bbox_file: Path | None = None) -> tuple[Path, int]:
    """Export every readable image; returns (manifest path, records written)."""
    classes = _scan_classes(config.dataset_root)
    sidecar = config.dataset_root / "bboxes.txt" if bbox_file is None else bbox_file
    boxes = load_bbox_sidecar(sidecar) if sidecar.is_file() else {}

    model = build_backbone(config.backbone, seed=config.seed,
                           weights_path=config.weights_path)
    tap = FeatureTap(model, config.tap)

    out = config.out_root
    out.mkdir(parents=True, exist_ok=True)
    lines = [f"classes: {len(classes)}", "split: export"]
    written = 0
    for class_name, images in classes.items():
        (out / "feats" / class_name).mkdir(parents=True, exist_ok=True)
        kept = 0
        for image_path in images:
            try:
                batch, original = _load_image(image_path, config.image_size)
            except (OSError, UnidentifiedImageError) as exc:
                log.warning("skipping unreadable image %s (%s)", image_path, exc)
                continue
            features = tap.extract(batch).numpy()
            rel = f"feats/{class_name}/{image_path.stem}.daf"
            write_daf(out / rel, features, dtype=config.dtype)
            written += 1
            kept += 1
            parts = [class_name, rel]
            key = f"{class_name}/{image_path.name}"
            if key in boxes:
                grid_box = pixel_box_to_grid(boxes[key], original,
                                             features.shape[1:])
                parts.append("bbox " + " ".join(str(v) for v in grid_box))
            parts.append("image " + os.path.relpath(image_path, out))
            lines.append(" ".join(parts))
        if kept == 0:
            raise ValueError(f"class {class_name!r}: every image was unreadable")
    manifest_path = out / "manifest.txt"
    manifest_path.write_text("\n".join(lines) + "\n")
    return manifest_path, written
