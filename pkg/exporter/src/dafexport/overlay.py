"""Qualitative overlays: heatmap-blended images with truth/prediction boxes.

For every manifest record with an image path and a matching activation-map
dump (DAF1, d=1, named ``<record-index>.daf`` as the engine writes them),
renders the image with the map alpha-blended on top, the ground-truth box
in red and the box extracted from the map in green.  A blend weight of 0
disables all drawing and produces a plain re-encoded copy of the image.
"""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from .daf import read_daf

log = logging.getLogger("dafexport")


def _parse_manifest_records(path: Path) -> list[dict]:
    """Minimal reader for the engine's manifest grammar."""
    records = []
    for raw in path.read_text().splitlines():
        line = raw.strip()
        if not line or line.startswith("#") or line.startswith(("classes:", "split:")):
            continue
        tokens = line.split()
        rec = {"class": tokens[0], "feature": tokens[1], "bbox": None, "image": None}
        rest = tokens[2:]
        while rest:
            if rest[0] == "bbox":
                rec["bbox"] = tuple(int(t) for t in rest[1:5])
                rest = rest[5:]
            elif rest[0] == "image":
                rec["image"] = rest[1]
                rest = rest[2:]
            else:
                raise ValueError(f"{path}: unexpected token {rest[0]!r}")
        records.append(rec)
    return records


def _heat_rgb(cam: np.ndarray) -> np.ndarray:
    """Map [0,1] activations to a blue->red ramp, shape (h, w, 3) uint8."""
    lo, hi = float(cam.min()), float(cam.max())
    t = (cam - lo) / (hi - lo) if hi > lo else np.zeros_like(cam)
    r = np.clip(2.0 * t, 0, 1)
    b = np.clip(2.0 * (1.0 - t), 0, 1)
    g = np.clip(1.0 - np.abs(2.0 * t - 1.0), 0, 1)
    return (np.stack([r, g, b], axis=-1) * 255).astype(np.uint8)


def _cam_box(cam: np.ndarray, threshold: float = 0.2) -> tuple[int, int, int, int]:
    """Tight box around the largest 4-connected blob above threshold*max."""
    fg = cam >= threshold * cam.max()
    h, w = fg.shape
    labels = np.zeros((h, w), dtype=int)
    best_cells: list[tuple[int, int]] = []
    current = 0
    for si in range(h):
        for sj in range(w):
            if fg[si, sj] and labels[si, sj] == 0:
                current += 1
                stack = [(si, sj)]
                labels[si, sj] = current
                cells = []
                while stack:
                    i, j = stack.pop()
                    cells.append((i, j))
                    for ni, nj in ((i - 1, j), (i + 1, j), (i, j - 1), (i, j + 1)):
                        if 0 <= ni < h and 0 <= nj < w and fg[ni, nj] \
                                and labels[ni, nj] == 0:
                            labels[ni, nj] = current
                            stack.append((ni, nj))
                if len(cells) > len(best_cells):
                    best_cells = cells
    rows = [c[0] for c in best_cells]
    cols = [c[1] for c in best_cells]
    return min(cols), min(rows), max(cols) + 1, max(rows) + 1


def _scale_box(box, grid: tuple[int, int], size: tuple[int, int]):
    gx0, gy0, gx1, gy1 = box
    gh, gw = grid
    width, height = size
    return (gx0 * width / gw, gy0 * height / gh,
            gx1 * width / gw - 1, gy1 * height / gh - 1)


def render_overlays(manifest_path, cam_dir, out_dir, blend: float = 0.5,
                    box_threshold: float = 0.2) -> list[Path]:
    """Render one overlay per record; returns the files written."""
    if not 0.0 <= blend <= 1.0:
        raise ValueError(f"blend must lie in [0, 1], got {blend}")
    manifest_path = Path(manifest_path)
    cam_dir = Path(cam_dir)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for index, rec in enumerate(_parse_manifest_records(manifest_path)):
        if rec["image"] is None:
            log.warning("record %d has no image path; skipping", index)
            continue
        dump = cam_dir / f"{index:06d}.daf"
        if not dump.is_file():
            log.warning("record %d: no activation dump %s; skipping", index, dump)
            continue
        image_path = (manifest_path.parent / rec["image"]).resolve()
        with Image.open(image_path) as img:
            canvas = img.convert("RGB")
        cam = read_daf(dump)[0]
        if blend > 0.0:
            heat = Image.fromarray(_heat_rgb(cam)).resize(canvas.size, Image.NEAREST)
            canvas = Image.blend(canvas, heat, blend)
            draw = ImageDraw.Draw(canvas)
            if rec["bbox"] is not None:
                draw.rectangle(_scale_box(rec["bbox"], cam.shape, canvas.size),
                               outline=(255, 0, 0), width=2)
            draw.rectangle(_scale_box(_cam_box(cam, box_threshold), cam.shape,
                                      canvas.size),
                           outline=(0, 255, 0), width=2)
        target = out / f"{index:06d}.png"
        canvas.save(target)
        written.append(target)
    return written
